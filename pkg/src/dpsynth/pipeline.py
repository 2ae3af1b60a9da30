"""End-to-end synthesis: budget allocation, SPN and fanout construction, sampling."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from dpsynth.datamodel import Database, IndexPartition
from dpsynth.dpcore import BudgetAllocation, BudgetLedger, RngStream, allocate_database_budget, laplace_perturb
from dpsynth.sampler import assemble_database
from dpsynth.spn import FanoutLeaf, LeafNode, Node, ProductNode, SpnParams, iter_nodes, priv_fanout, priv_spn
from dpsynth.stats import FANOUT_SENSITIVITY, FanoutTable, build_fanout

logger = logging.getLogger(__name__)

LEDGER_TOLERANCE = 1e-9


class BudgetViolation(RuntimeError):
    """The composed ledger exceeds the granted budget."""


@dataclass(frozen=True)
class SynthParams:
    epsilon: float = 3.2
    alpha: float = 0.5
    beta: int = 10000
    gamma: float = 0.9
    gamma1: float = 0.5
    gamma2: float = 0.5
    iterations: int = 5
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        self.spn_params  # validates the remaining fields

    @property
    def spn_params(self) -> SpnParams:
        return SpnParams(self.alpha, self.beta, self.gamma1, self.gamma2, self.iterations)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SynthesisResult:
    database: Database
    trees: dict[str, Node]
    ledger: BudgetLedger
    allocation: BudgetAllocation


def _fanout_only_tree(table, fk, epsilon, rng, target_keys, ledger) -> Node:
    """Tree for a table with no non-key attributes: a single fanout leaf."""
    counts = build_fanout(table, fk, np.arange(table.row_count), target_keys)
    scope = f"fanout:{fk.name}"
    ledger.mark_parallel(table.name, scope)
    noisy = laplace_perturb(
        counts.counts, FANOUT_SENSITIVITY, epsilon, rng.child(scope, "spn"),
        ledger=ledger, table=table.name, path=f"{scope}/spn", mechanism="fanout",
    )
    return FanoutLeaf(FanoutTable(fk, counts.keys, np.clip(noisy, 0.0, None)), epsilon)


def _build_table(db: Database, name: str, params: SynthParams, alloc: BudgetAllocation, rng: RngStream):
    table = db[name]
    ledger = BudgetLedger()
    if table.row_count == 0:
        return None, ledger
    schema = db.schema
    data = table.data_view()
    trng = rng.child(name)
    tree = None
    if data.attributes:
        tree = priv_spn(data, alloc[name].spn, params.spn_params, trng, ledger=ledger, table=name)
    for fk in table.schema.foreign_keys:
        parent = schema.table(fk.fk_target)
        keys = db[parent.name].column(parent.primary_key.name)
        if tree is None:
            tree = _fanout_only_tree(table, fk, alloc[name].fanout, trng, keys, ledger)
        elif not any(isinstance(n, LeafNode) for n in iter_nodes(tree)):
            extra = _fanout_only_tree(table, fk, alloc[name].fanout, trng, keys, ledger)
            tree = ProductNode(IndexPartition([0], [1], "columns"), [tree, extra])
        else:
            tree = priv_fanout(table, tree, fk, alloc[name].fanout, trng, keys, ledger=ledger)
    return tree, ledger


def check_ledger(schema, ledger: BudgetLedger, alloc: BudgetAllocation, epsilon: float) -> dict:
    """Compose the ledger per table and for the database; raise on any overrun."""
    per_table = {}
    for t in schema.tables:
        spent = ledger.table_total(t.name)
        granted = alloc[t.name].spn + alloc[t.name].fanout * len(t.foreign_keys)
        if spent > granted + LEDGER_TOLERANCE:
            raise BudgetViolation(f"table {t.name!r} spent {spent} of granted {granted}")
        per_table[t.name] = {"spent": spent, "granted": granted}
    multiplicities = {t.name: t.max_multiplicity for t in schema.tables}
    total = ledger.database_total(multiplicities)
    if total > epsilon + LEDGER_TOLERANCE:
        raise BudgetViolation(f"database-level spend {total} exceeds epsilon {epsilon}")
    return {"tables": per_table, "database_total": total, "epsilon": epsilon}


def synthesize(db: Database, params: SynthParams) -> SynthesisResult:
    """Run all three phases and return the synthetic database with its audit trail."""
    schema = db.schema
    alloc = allocate_database_budget(schema, params.epsilon, params.gamma)
    rng = RngStream(params.seed)
    names = schema.names
    if params.threads > 1:
        with ThreadPoolExecutor(max_workers=params.threads) as pool:
            built = list(pool.map(lambda n: _build_table(db, n, params, alloc, rng), names))
    else:
        built = [_build_table(db, n, params, alloc, rng) for n in names]
    trees, ledger = {}, BudgetLedger()
    # merge in schema order so the audit trail is independent of thread count
    for name, (tree, sub) in zip(names, built):
        if tree is not None:
            trees[name] = tree
        ledger.merge(sub)
    check_ledger(schema, ledger, alloc, params.epsilon)
    row_counts = {t.name: t.row_count for t in db}
    original_keys = {
        parent: db[parent].column(schema.table(parent).primary_key.name)
        for _, _, parent in schema.fk_edges()
    }
    synthetic = assemble_database(schema, trees, row_counts, rng.child("sample"), original_keys)
    logger.info("synthesized %d tables, database-level spend %.6g", len(names),
                ledger.database_total({t.name: t.max_multiplicity for t in schema.tables}))
    return SynthesisResult(synthetic, trees, ledger, alloc)

