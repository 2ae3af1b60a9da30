"""Fidelity metrics: lambda-way KL divergence and Q-error over join workloads."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dpsynth.datamodel import ColumnTable, Database, DatabaseSchema
from dpsynth.stats import bin_count, bin_index

SMOOTHING = 1e-10
MAX_MARGINALS = 10_000
OPS = ("=", "<", "<=", ">", ">=")
RANGE_OPS = ("<", "<=", ">", ">=")
QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


class QueryError(ValueError):
    """A query is inconsistent with the schema."""


class SchemaMismatch(ValueError):
    """Original and synthetic databases do not share a schema."""


# -- KL divergence --------------------------------------------------------


def _joint_codes(bins: list[np.ndarray], sizes: list[int]) -> np.ndarray:
    """Mixed-radix code of each row's joint bin, or a row-unique fallback."""
    if math.prod(sizes) < 2**62:
        code = np.zeros(bins[0].shape, dtype=np.int64)
        for b, k in zip(bins, sizes):
            code = code * k + b
        return code
    _, inv = np.unique(np.column_stack(bins), axis=0, return_inverse=True)
    return inv.reshape(-1)


def _kld_from_codes(oc: np.ndarray, sc: np.ndarray, cells: int) -> float:
    keys, inv = np.unique(np.concatenate([oc, sc]), return_inverse=True)
    inv = inv.reshape(-1)
    k = keys.shape[0]
    p = np.bincount(inv[: len(oc)], minlength=k).astype(np.float64)
    q = np.bincount(inv[len(oc):], minlength=k).astype(np.float64)
    p = p / p.sum() if p.sum() > 0 else p
    q = q / q.sum() if q.sum() > 0 else q
    zp = p.sum() + cells * SMOOTHING
    zq = q.sum() + cells * SMOOTHING
    ps, qs = (p + SMOOTHING) / zp, (q + SMOOTHING) / zq
    kld = float(np.sum(ps * np.log(ps / qs)))
    # cells outside both supports carry smoothing mass only
    kld += (cells - k) * (SMOOTHING / zp) * math.log(zq / zp)
    return max(kld, 0.0)


def marginal_kld(orig: ColumnTable, synth: ColumnTable, names) -> float:
    """KL(orig || synth) in nats of the joint bin distribution over ``names``."""
    attrs = [orig.schema.attribute(n) for n in names]
    sizes = [bin_count(a) for a in attrs]
    # encode both sides together so the fallback path shares one key space
    n = orig.row_count
    both = [
        np.concatenate([bin_index(a, orig.column(a.name)), bin_index(a, synth.column(a.name))])
        for a in attrs
    ]
    codes = _joint_codes(both, sizes)
    return _kld_from_codes(codes[:n], codes[n:], math.prod(sizes))


def _subsets(names: list[str], lam: int, rng: np.random.Generator):
    total = math.comb(len(names), lam)
    if total <= MAX_MARGINALS:
        return list(itertools.combinations(names, lam))
    picked = set()
    while len(picked) < MAX_MARGINALS:
        picked.add(tuple(sorted(rng.choice(len(names), lam, replace=False))))
    return [tuple(names[i] for i in s) for s in sorted(picked)]


def kld_lambda(orig: Database, synth: Database, lam: int, seed: int = 0) -> float:
    """Average KL divergence over every lambda-way marginal of every table."""
    if lam < 1:
        raise ValueError("lambda must be >= 1")
    _check_schemas(orig, synth)
    rng = np.random.default_rng(seed)
    values = []
    for t in orig.schema.tables:
        names = [a.name for a in t.data_attributes]
        if lam > len(names) or orig[t.name].row_count == 0:
            continue
        n = orig[t.name].row_count
        bins, sizes = {}, {}
        for a in t.data_attributes:
            bins[a.name] = np.concatenate(
                [bin_index(a, orig[t.name].column(a.name)), bin_index(a, synth[t.name].column(a.name))]
            )
            sizes[a.name] = bin_count(a)
        for subset in _subsets(names, lam, rng):
            codes = _joint_codes([bins[c] for c in subset], [sizes[c] for c in subset])
            values.append(_kld_from_codes(codes[:n], codes[n:], math.prod(sizes[c] for c in subset)))
    if not values:
        raise ValueError(f"no table has {lam} non-key attributes")
    return float(np.mean(values))


# -- queries -------------------------------------------------------------


@dataclass(frozen=True)
class Predicate:
    table: str
    attribute: str
    op: str
    value: object


@dataclass
class ConjunctiveQuery:
    tables: list[str]
    joins: list[tuple[str, str, str]] = field(default_factory=list)
    predicates: list[Predicate] = field(default_factory=list)

    def validate(self, schema: DatabaseSchema) -> None:
        if not self.tables:
            raise QueryError("query names no tables")
        for name in self.tables:
            schema.table(name)
        edges = set(schema.fk_edges())
        for j in self.joins:
            if tuple(j) not in edges:
                raise QueryError(f"{j} is not a declared foreign-key edge")
            if j[0] not in self.tables or j[2] not in self.tables:
                raise QueryError(f"join {j} touches a table outside the query")
        if len(self.joins) != len(self.tables) - 1 or not _connected(self.tables, self.joins):
            raise QueryError(f"join graph over {self.tables} is not a connected tree")
        for p in self.predicates:
            if p.table not in self.tables:
                raise QueryError(f"predicate on table {p.table!r} outside the query")
            attr = schema.table(p.table).attribute(p.attribute)
            if p.op not in OPS:
                raise QueryError(f"unknown operator {p.op!r}")
            if attr.kind == "categorical":
                if p.op != "=":
                    raise QueryError(f"categorical {p.attribute!r} only supports '='")
                if str(p.value) not in attr.domain:
                    raise QueryError(f"constant {p.value!r} outside domain of {p.attribute!r}")
            elif not attr.domain[0] <= float(p.value) <= attr.domain[1]:
                raise QueryError(f"constant {p.value!r} outside domain of {p.attribute!r}")

    def to_json(self) -> dict:
        return {
            "tables": list(self.tables),
            "joins": [list(j) for j in self.joins],
            "predicates": [asdict(p) for p in self.predicates],
        }

    @classmethod
    def from_json(cls, obj: dict) -> ConjunctiveQuery:
        return cls(
            list(obj["tables"]),
            [tuple(j) for j in obj.get("joins", [])],
            [Predicate(**p) for p in obj.get("predicates", [])],
        )


def _connected(tables, joins) -> bool:
    seen, frontier = {tables[0]}, [tables[0]]
    while frontier:
        cur = frontier.pop()
        for a, _, b in joins:
            for x, y in ((a, b), (b, a)):
                if x == cur and y not in seen:
                    seen.add(y)
                    frontier.append(y)
    return seen == set(tables)


def predicate_mask(t: ColumnTable, p: Predicate) -> np.ndarray:
    attr = t.schema.attribute(p.attribute)
    col = t.column(attr.name)
    if attr.kind == "categorical":
        return col == attr.domain.index(str(p.value))
    v = float(p.value)
    if p.op == "=":
        return col == v
    if p.op == "<":
        return col < v
    if p.op == "<=":
        return col <= v
    if p.op == ">":
        return col > v
    return col >= v


def _lookup(keys: np.ndarray, weights: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Weight of the row whose unique key equals each probe, 0 when absent."""
    out = np.zeros(probes.size, dtype=np.int64)
    if keys.size == 0 or probes.size == 0:
        return out
    order = np.argsort(keys)
    sorted_keys = keys[order]
    pos = np.minimum(np.searchsorted(sorted_keys, probes), keys.size - 1)
    hit = sorted_keys[pos] == probes
    out[hit] = weights[order][pos[hit]]
    return out


def _group_sum(values: np.ndarray, weights: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Sum of weights over rows whose value equals each probe."""
    if values.size == 0:
        return np.zeros(probes.size, dtype=np.int64)
    uniq, inv = np.unique(values, return_inverse=True)
    totals = np.bincount(inv.reshape(-1), weights=weights, minlength=uniq.size).astype(np.int64)
    return _lookup(uniq, totals, probes)


def cardinality(q: ConjunctiveQuery, db: Database) -> int:
    """Exact COUNT(*) of the filtered PK-FK join, by message passing over the join tree."""
    q.validate(db.schema)
    weights = {}
    for name in q.tables:
        mask = np.ones(db[name].row_count, dtype=bool)
        for p in q.predicates:
            if p.table == name:
                mask &= predicate_mask(db[name], p)
        weights[name] = mask.astype(np.int64)

    def collapse(name: str, via) -> np.ndarray:
        # per-row count of join results in the subtree hanging below ``name``
        w = weights[name].copy()
        for edge in q.joins:
            if edge == via or name not in (edge[0], edge[2]):
                continue
            child, fk, target = edge
            pk = db.schema.table(target).primary_key.name
            if name == child:
                w *= _lookup(db[target].column(pk), collapse(target, edge), db[child].column(fk))
            else:
                w *= _group_sum(db[child].column(fk), collapse(child, edge), db[target].column(pk))
        return w

    return int(collapse(q.tables[0], None).sum())


def qerror(card_orig: int, card_synth: int) -> float:
    """max of the two cardinality ratios; +1 on both sides when either is zero."""
    a, b = float(card_orig), float(card_synth)
    if a == 0 or b == 0:
        a, b = a + 1.0, b + 1.0
    return max(a / b, b / a)


def generate_workload(db: Database, count: int, seed: int) -> list[ConjunctiveQuery]:
    """Seeded random conjunctive queries over 1-3 joined tables with 1-3 predicates."""
    if count < 1:
        raise ValueError("count must be >= 1")
    schema = db.schema
    gen = np.random.default_rng(seed)
    edges = schema.fk_edges()
    names = schema.names
    queries = []
    for _ in range(count):
        size = int(gen.integers(1, min(3, len(names)) + 1))
        tables = [names[int(gen.integers(len(names)))]]
        joins = []
        while len(tables) < size:
            frontier = [e for e in edges if (e[0] in tables) != (e[2] in tables)]
            if not frontier:
                break
            e = frontier[int(gen.integers(len(frontier)))]
            joins.append(e)
            tables.append(e[2] if e[0] in tables else e[0])
        pool = [(t, a) for t in tables for a in schema.table(t).data_attributes]
        k = min(int(gen.integers(1, 4)), len(pool))
        preds = []
        for i in gen.choice(len(pool), k, replace=False) if k else []:
            t, attr = pool[int(i)]
            q = QUANTILES[int(gen.integers(len(QUANTILES)))]
            col = db[t].column(attr.name)
            if col.size == 0:
                continue
            v = np.quantile(col, q, method="lower")
            if attr.kind == "categorical":
                preds.append(Predicate(t, attr.name, "=", attr.domain[int(v)]))
            else:
                # equality is reserved for categorical attributes
                op = RANGE_OPS[int(gen.integers(len(RANGE_OPS)))]
                value = int(v) if attr.kind == "integer" else float(v)
                preds.append(Predicate(t, attr.name, op, value))
        queries.append(ConjunctiveQuery(tables, joins, preds))
    return queries


def save_workload(queries: list[ConjunctiveQuery], path: str | Path) -> None:
    Path(path).write_text(json.dumps([q.to_json() for q in queries], indent=1) + "\n", encoding="utf-8")


def load_workload(path: str | Path) -> list[ConjunctiveQuery]:
    return [ConjunctiveQuery.from_json(o) for o in json.loads(Path(path).read_text(encoding="utf-8"))]


# -- report --------------------------------------------------------------


def summarize(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"count": 0, "mean": None, "median": None, "p75": None, "max": None}
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "median": float(np.median(arr)),
        "p75": float(np.percentile(arr, 75)),
        "max": float(arr.max()),
    }


@dataclass
class EvalReport:
    kld: dict[int, float]
    qerrors: list[float]
    cardinalities: list[tuple[int, int]]
    metadata: dict = field(default_factory=dict)

    @property
    def summary(self) -> dict:
        return summarize(self.qerrors)

    def to_json(self) -> dict:
        return {
            "kld": {str(k): v for k, v in sorted(self.kld.items())},
            "qerror": {"summary": self.summary, "values": self.qerrors},
            "cardinalities": [list(c) for c in self.cardinalities],
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: dict) -> EvalReport:
        return cls(
            {int(k): float(v) for k, v in obj["kld"].items()},
            [float(x) for x in obj["qerror"]["values"]],
            [tuple(c) for c in obj.get("cardinalities", [])],
            obj.get("metadata", {}),
        )


def _check_schemas(orig: Database, synth: Database) -> None:
    if orig.schema != synth.schema:
        raise SchemaMismatch("original and synthetic databases have different schemas")


def evaluate(
    orig: Database,
    synth: Database,
    workload: list[ConjunctiveQuery],
    lambdas=(2, 3, 4),
    metadata: dict | None = None,
) -> EvalReport:
    _check_schemas(orig, synth)
    kld = {}
    for lam in lambdas:
        try:
            kld[lam] = kld_lambda(orig, synth, lam)
        except ValueError:
            continue
    cards = [(cardinality(q, orig), cardinality(q, synth)) for q in workload]
    return EvalReport(kld, [qerror(a, b) for a, b in cards], cards, dict(metadata or {}))
