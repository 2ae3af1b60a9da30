"""Private sum-product network construction, fanout augmentation and serialization.

Trees are binary: sum nodes split rows, product nodes split columns,
leaves hold one noisy attribute histogram or one noisy fanout table.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from dpsynth.datamodel import AttributeSpec, ColumnTable, IndexPartition, subtable
from dpsynth.dpcore import BudgetError, BudgetLedger, RngStream, laplace_perturb
from dpsynth.split import SplitConfig, col_split, row_split
from dpsynth.stats import (
    FANOUT_SENSITIVITY,
    HISTOGRAM_SENSITIVITY,
    FanoutTable,
    Histogram,
    build_fanout,
    build_histogram,
    nmi,
    nmi_sensitivity,
)

FORMAT_VERSION = 1

LEAF, SUM, PRODUCT = "LEAF", "SUM", "PRODUCT"


class SpnFormatError(ValueError):
    """A serialized SPN could not be parsed."""


@dataclass(frozen=True)
class SpnParams:
    alpha: float = 0.5
    beta: int = 10000
    gamma1: float = 0.5
    gamma2: float = 0.5
    iterations: int = 5

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        for name in ("gamma1", "gamma2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def split_config(self) -> SplitConfig:
        return SplitConfig(self.iterations, self.beta)


@dataclass(frozen=True)
class PlanningOutcome:
    op: str
    eps_op: float
    eps_remaining: float
    eps_eval: float = 0.0
    noisy_nmi: float = 0.0

    @property
    def total(self) -> float:
        return self.eps_eval + self.eps_op + self.eps_remaining


@dataclass(eq=False)
class LeafNode:
    histogram: Histogram
    epsilon: float

    @property
    def scope(self) -> tuple[str, ...]:
        return (self.histogram.attribute.name,)


@dataclass(eq=False)
class FanoutLeaf:
    fanout: FanoutTable
    epsilon: float

    @property
    def scope(self) -> tuple[str, ...]:
        return (self.fanout.fk_attribute.name,)


@dataclass(eq=False)
class SumNode:
    partition: IndexPartition
    children: list = field(default_factory=lambda: [None, None])
    plan: PlanningOutcome | None = None

    @property
    def weight_left(self) -> float:
        return self.partition.left.size / self.partition.size

    @property
    def weight_right(self) -> float:
        return self.partition.right.size / self.partition.size

    @property
    def scope(self) -> tuple[str, ...]:
        return self.children[0].scope


@dataclass(eq=False)
class ProductNode:
    partition: IndexPartition
    children: list = field(default_factory=lambda: [None, None])
    plan: PlanningOutcome | None = None

    @property
    def scope(self) -> tuple[str, ...]:
        return self.children[0].scope + self.children[1].scope


Node = LeafNode | FanoutLeaf | SumNode | ProductNode


def scale(row_count: float, attr_count: int, beta: float) -> float:
    """Upper bound on the node count of a table's SPN: 2|T||attr(T)|/beta - 1."""
    return 2.0 * row_count * attr_count / beta - 1.0


def effective_scale(row_count: float, attr_count: int, beta: float) -> float:
    """``scale`` floored at 2m - 1, the node count of a product-only tree.

    Tables smaller than beta / m would otherwise get a scale below one.
    """
    return max(scale(row_count, attr_count, beta), 2.0 * attr_count - 1.0)


def planning(
    t: ColumnTable,
    epsilon: float,
    params: SpnParams,
    rng: RngStream,
    *,
    ledger: BudgetLedger | None = None,
    table: str = "",
    path: str = "",
) -> PlanningOutcome:
    """Choose the next operation and divide ``epsilon`` between it and the children."""
    if epsilon < 0:
        raise BudgetError(f"negative budget {epsilon}")
    m, n = len(t.attributes), t.row_count
    if m == 1:
        return PlanningOutcome(LEAF, epsilon, 0.0)
    sigma = effective_scale(n, m, params.beta)
    splittable = n >= 2 * params.beta
    # correlation trial
    if splittable:
        eps_eval = epsilon * params.gamma1 / sigma
        trial = col_split(
            t, eps_eval * params.gamma2, rng.child("trial"),
            ledger=ledger, table=table, path=path, mechanism="corr_trial_split",
        )
        eps_nmi = eps_eval * (1.0 - params.gamma2)
        noisy = laplace_perturb(
            [nmi(t, trial)], nmi_sensitivity(n), eps_nmi, rng.child("trial_nmi"),
            ledger=ledger, table=table, path=path, mechanism="corr_trial_nmi",
        )
        rho = float(noisy[0])
    else:
        eps_eval, rho = 0.0, 0.0
    # decide
    if splittable:
        op = PRODUCT if rho <= params.alpha else SUM
    else:
        op = PRODUCT
    # allocate
    if op == PRODUCT and m == 2:
        eps_op = 0.0
    else:
        eps_op = epsilon / sigma - eps_eval
    if eps_op < 0:
        raise BudgetError(f"negative operation budget {eps_op}; gamma1 must not exceed 1")
    return PlanningOutcome(op, eps_op, epsilon - eps_eval - eps_op, eps_eval, rho)


def _child_budgets(op: str, eps_rem: float, left: ColumnTable, right: ColumnTable, beta: int):
    if op == SUM:
        return eps_rem, eps_rem
    s_l = effective_scale(left.row_count, len(left.attributes), beta)
    s_r = effective_scale(right.row_count, len(right.attributes), beta)
    eps_l = eps_rem * s_l / (s_l + s_r)
    return eps_l, eps_rem - eps_l


def priv_spn(
    t: ColumnTable,
    epsilon: float,
    params: SpnParams,
    rng: RngStream,
    *,
    ledger: BudgetLedger | None = None,
    table: str | None = None,
    root_path: str = "spn",
) -> Node:
    """Build a differentially private SPN over all attributes of ``t``.

    Pass the table's data view (keys excluded). Every spend is recorded in
    ``ledger`` under ``root_path``; sum nodes are marked for parallel
    composition.
    """
    if not epsilon > 0:
        raise BudgetError(f"SPN construction needs epsilon > 0, got {epsilon}")
    if t.row_count == 0 or not t.attributes:
        raise ValueError("cannot build an SPN over an empty table")
    table = t.name if table is None else table
    root_holder: list = [None]
    # worklist keeps construction stack-safe on deep trees
    work = [(t, epsilon, root_path, root_holder, 0)]
    while work:
        sub, eps, path, slot, side = work.pop()
        node_rng = rng.child(path)
        plan = planning(sub, eps, params, node_rng, ledger=ledger, table=table, path=path)
        if plan.op == LEAF:
            hist = build_histogram(sub)
            noisy = laplace_perturb(
                hist.counts, HISTOGRAM_SENSITIVITY, plan.eps_op, node_rng.child("leaf"),
                ledger=ledger, table=table, path=path, mechanism="histogram",
            )
            slot[side] = LeafNode(Histogram(hist.attribute, np.clip(noisy, 0.0, None)), plan.eps_op)
            continue
        if plan.op == SUM:
            part = row_split(
                sub, plan.eps_op, params.split_config, node_rng.child("parent"),
                ledger=ledger, table=table, path=path,
            )
            node = SumNode(part, plan=plan)
            if ledger is not None:
                ledger.mark_parallel(table, path)
        else:
            part = col_split(
                sub, plan.eps_op, node_rng.child("parent"),
                ledger=ledger, table=table, path=path,
            )
            node = ProductNode(part, plan=plan)
        slot[side] = node
        left, right = subtable(sub, part, "left"), subtable(sub, part, "right")
        eps_l, eps_r = _child_budgets(plan.op, plan.eps_remaining, left, right, params.beta)
        work.append((right, eps_r, f"{path}/R", node.children, 1))
        work.append((left, eps_l, f"{path}/L", node.children, 0))
    return root_holder[0]


def iter_nodes(tree: Node) -> Iterator[Node]:
    stack = [tree]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, (SumNode, ProductNode)):
            stack.extend(reversed(node.children))


def iter_leaf_rows(tree: Node, row_count: int) -> Iterator[tuple[Node, np.ndarray, str]]:
    """Yield every leaf with the original row indices it covers and its path."""
    stack = [(tree, np.arange(row_count), "spn")]
    while stack:
        node, rows, path = stack.pop()
        if isinstance(node, SumNode):
            stack.append((node.children[1], rows[node.partition.right], f"{path}/R"))
            stack.append((node.children[0], rows[node.partition.left], f"{path}/L"))
        elif isinstance(node, ProductNode):
            stack.append((node.children[1], rows, f"{path}/R"))
            stack.append((node.children[0], rows, f"{path}/L"))
        else:
            yield node, rows, path


def depth(tree: Node) -> int:
    best = 0
    stack = [(tree, 1)]
    while stack:
        node, d = stack.pop()
        best = max(best, d)
        if isinstance(node, (SumNode, ProductNode)):
            stack.extend((c, d + 1) for c in node.children)
    return best


def node_counts(tree: Node) -> dict[str, int]:
    counts = {"sum": 0, "product": 0, "leaf": 0, "fanout": 0}
    for node in iter_nodes(tree):
        counts[_KIND[type(node)]] += 1
    return counts


def priv_fanout(
    t: ColumnTable,
    tree: Node,
    fk: AttributeSpec | str,
    epsilon: float,
    rng: RngStream,
    target_keys,
    *,
    ledger: BudgetLedger | None = None,
) -> Node:
    """Return a copy of ``tree`` whose leaves of one attribute gain a fanout sibling.

    The attribute with the most histogram leaves is chosen (lowest column
    index on ties). Its leaves cover disjoint rows, so each fanout table is
    perturbed with the full ``epsilon`` under parallel composition.
    """
    if isinstance(fk, str):
        fk = t.schema.attribute(fk)
    if fk.role != "foreign-key":
        raise ValueError(f"{fk.name!r} is not a foreign key of {t.name!r}")
    if not epsilon > 0:
        raise BudgetError(f"fanout construction needs epsilon > 0, got {epsilon}")
    leaves = [n for n in iter_nodes(tree) if isinstance(n, LeafNode)]
    if not leaves:
        raise ValueError("tree has no histogram leaves")
    order = {a.name: i for i, a in enumerate(t.schema.data_attributes)}
    counts: dict[str, int] = {}
    for leaf in leaves:
        name = leaf.histogram.attribute.name
        counts[name] = counts.get(name, 0) + 1
    chosen = min(counts, key=lambda a: (-counts[a], order.get(a, len(order))))

    new_tree = copy.deepcopy(tree)
    scope = f"fanout:{fk.name}"
    if ledger is not None:
        ledger.mark_parallel(t.name, scope)
    replacements = {}
    for leaf, rows, path in iter_leaf_rows(new_tree, t.row_count):
        if not isinstance(leaf, LeafNode) or leaf.histogram.attribute.name != chosen:
            continue
        table = build_fanout(t, fk, rows, target_keys)
        noisy = laplace_perturb(
            table.counts, FANOUT_SENSITIVITY, epsilon, rng.child(scope, path),
            ledger=ledger, table=t.name, path=f"{scope}/{path.replace('/', '.')}",
            mechanism="fanout",
        )
        fan = FanoutLeaf(FanoutTable(fk, table.keys, np.clip(noisy, 0.0, None)), epsilon)
        replacements[id(leaf)] = ProductNode(
            IndexPartition([0], [1], "columns"), [leaf, fan]
        )
    return _replace(new_tree, replacements)


def _replace(tree: Node, replacements: dict[int, Node]) -> Node:
    if id(tree) in replacements:
        return replacements[id(tree)]
    internal = [n for n in iter_nodes(tree) if isinstance(n, (SumNode, ProductNode))]
    for node in internal:
        node.children = [replacements.get(id(c), c) for c in node.children]
    return tree


# serialization

_KIND = {SumNode: "sum", ProductNode: "product", LeafNode: "leaf", FanoutLeaf: "fanout"}


def _num(x: float) -> str:
    return repr(float(x))


def _plan_to_dict(plan: PlanningOutcome | None):
    if plan is None:
        return None
    return {
        "op": plan.op,
        "eps_op": _num(plan.eps_op),
        "eps_remaining": _num(plan.eps_remaining),
        "eps_eval": _num(plan.eps_eval),
        "noisy_nmi": _num(plan.noisy_nmi),
    }


def _plan_from_dict(obj):
    if obj is None:
        return None
    return PlanningOutcome(
        obj["op"], float(obj["eps_op"]), float(obj["eps_remaining"]),
        float(obj["eps_eval"]), float(obj["noisy_nmi"]),
    )


def node_to_dict(node: Node) -> dict:
    if isinstance(node, LeafNode):
        return {
            "kind": "leaf",
            "attribute": node.histogram.attribute.to_json(),
            "epsilon": _num(node.epsilon),
            "counts": [_num(c) for c in node.histogram.counts],
        }
    if isinstance(node, FanoutLeaf):
        return {
            "kind": "fanout",
            "attribute": node.fanout.fk_attribute.to_json(),
            "epsilon": _num(node.epsilon),
            "keys": [int(k) for k in node.fanout.keys],
            "counts": [_num(c) for c in node.fanout.counts],
        }
    p = node.partition
    out = {
        "kind": _KIND[type(node)],
        "sizes": [int(p.left.size), int(p.right.size)],
        "left": p.left.tolist(),
        "right": p.right.tolist(),
        "plan": _plan_to_dict(node.plan),
        "children": [node_to_dict(c) for c in node.children],
    }
    if isinstance(node, SumNode):
        out["weight_left"] = _num(node.weight_left)
    return out


def node_from_dict(obj: dict) -> Node:
    try:
        kind = obj["kind"]
        if kind == "leaf":
            attr = AttributeSpec.from_json(obj["attribute"])
            counts = np.array([float(c) for c in obj["counts"]])
            return LeafNode(Histogram(attr, counts), float(obj["epsilon"]))
        if kind == "fanout":
            attr = AttributeSpec.from_json(obj["attribute"])
            keys = np.array(obj["keys"], dtype=np.int64)
            counts = np.array([float(c) for c in obj["counts"]])
            if keys.size != counts.size:
                raise SpnFormatError("fanout keys and counts differ in length")
            return FanoutLeaf(FanoutTable(attr, keys, counts), float(obj["epsilon"]))
        if kind not in ("sum", "product"):
            raise SpnFormatError(f"unknown node kind {kind!r}")
        axis = "rows" if kind == "sum" else "columns"
        part = IndexPartition(obj["left"], obj["right"], axis)
        if [part.left.size, part.right.size] != list(obj["sizes"]):
            raise SpnFormatError("partition sizes disagree with index sets")
        children = [node_from_dict(c) for c in obj["children"]]
        if len(children) != 2:
            raise SpnFormatError("internal nodes need exactly two children")
        cls = SumNode if kind == "sum" else ProductNode
        return cls(part, children, _plan_from_dict(obj.get("plan")))
    except SpnFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SpnFormatError(f"malformed node: {exc}") from None


def serialize_spn(tree: Node, table: str, meta: dict | None = None) -> bytes:
    doc = {"version": FORMAT_VERSION, "table": table, "meta": meta or {}, "root": node_to_dict(tree)}
    return (json.dumps(doc, separators=(",", ":")) + "\n").encode("utf-8")


def deserialize_spn(payload: bytes | str) -> tuple[str, Node, dict]:
    """Parse a serialized SPN; returns ``(table, root, meta)``."""
    if isinstance(payload, bytes):
        payload = payload.decode("utf-8", errors="replace")
    if not payload.strip():
        raise SpnFormatError("empty payload")
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise SpnFormatError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise SpnFormatError(f"unsupported SPN format version {doc.get('version') if isinstance(doc, dict) else None!r}")
    if "root" not in doc or "table" not in doc:
        raise SpnFormatError("missing 'root' or 'table'")
    return doc["table"], node_from_dict(doc["root"]), doc.get("meta", {})


def leaf_budgets(tree: Node) -> list[float]:
    return [n.epsilon for n in iter_nodes(tree) if isinstance(n, LeafNode)]


def max_nodes(row_count: int, attr_count: int, beta: int) -> float:
    return effective_scale(row_count, attr_count, beta)


def depth_bound(row_count: int, attr_count: int, beta: int) -> float:
    return (attr_count - 1) + (row_count / beta - 1) + 1


__all__ = [
    "FanoutLeaf", "LeafNode", "PlanningOutcome", "ProductNode", "SpnFormatError", "SpnParams",
    "SumNode", "depth", "deserialize_spn", "effective_scale", "iter_leaf_rows", "iter_nodes",
    "leaf_budgets", "node_counts", "planning", "priv_fanout", "priv_spn", "scale", "serialize_spn",
]
