"""Laplace and exponential mechanisms, seeded randomness and budget accounting."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
import warnings
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class BudgetError(ValueError):
    """A mechanism was asked to run with an unusable privacy budget."""


class RngStream:
    """Counter-based random stream addressed by ``(seed, path)``.

    Each path maps to its own Philox key, so sibling subtrees draw
    independent randomness no matter in which order they are built.
    """

    def __init__(self, seed: int, path: str = ""):
        self.seed = int(seed)
        self.path = path

    def child(self, *parts) -> RngStream:
        suffix = "/".join(str(p) for p in parts)
        return RngStream(self.seed, f"{self.path}/{suffix}" if self.path else suffix)

    def generator(self) -> np.random.Generator:
        digest = hashlib.blake2b(f"{self.seed}:{self.path}".encode(), digest_size=16).digest()
        return np.random.Generator(np.random.Philox(key=int.from_bytes(digest, "little")))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path!r})"


@dataclass(frozen=True)
class LedgerEntry:
    table: str
    path: str
    mechanism: str
    epsilon: float


@dataclass
class BudgetLedger:
    """Append-only record of privacy spends.

    Paths are ``/``-separated. Spends under a path compose sequentially
    (sum) unless the path was marked parallel, in which case its children
    compose by max (disjoint inputs).
    """

    entries: list[LedgerEntry] = field(default_factory=list)
    parallel: set[tuple[str, str]] = field(default_factory=set)

    def __post_init__(self):
        self._lock = threading.Lock()

    def record(self, table: str, path: str, mechanism: str, epsilon: float) -> None:
        if epsilon < 0:
            raise BudgetError(f"negative spend {epsilon} for {mechanism} at {table}:{path}")
        with self._lock:
            self.entries.append(LedgerEntry(table, path, mechanism, float(epsilon)))

    def mark_parallel(self, table: str, path: str) -> None:
        with self._lock:
            self.parallel.add((table, path))

    def merge(self, other: BudgetLedger) -> None:
        with self._lock:
            self.entries.extend(other.entries)
            self.parallel |= other.parallel

    def tables(self) -> list[str]:
        return sorted({e.table for e in self.entries})

    def compose(self, table: str, root: str) -> float:
        """Composed spend of everything recorded at or below ``root``."""
        own: dict[str, float] = defaultdict(float)
        kids: dict[str, set[str]] = defaultdict(set)
        prefix = root + "/"
        for e in self.entries:
            if e.table != table or not (e.path == root or e.path.startswith(prefix)):
                continue
            own[e.path] += e.epsilon
            p = e.path
            while p != root:
                parent = p.rsplit("/", 1)[0]
                kids[parent].add(p)
                p = parent
        if root not in own and root not in kids:
            return 0.0

        def total(path: str) -> float:
            children = [total(c) for c in sorted(kids.get(path, ()))]
            if not children:
                return own.get(path, 0.0)
            if (table, path) in self.parallel:
                return own.get(path, 0.0) + max(children)
            return own.get(path, 0.0) + math.fsum(children)

        return total(root)

    def table_total(self, table: str) -> float:
        """SPN spend plus one parallel-composed spend per foreign key."""
        roots = {e.path.split("/", 1)[0] for e in self.entries if e.table == table}
        return math.fsum(self.compose(table, r) for r in sorted(roots))

    def database_total(self, multiplicities: dict[str, int]) -> float:
        """Database-level spend: table-level totals scaled by each table's multiplicity."""
        return math.fsum(multiplicities[t] * self.table_total(t) for t in self.tables())

    def to_json(self) -> list[dict]:
        return [asdict(e) for e in self.entries]

    def audit(self) -> dict:
        """Entries plus the parallel-composition marks needed to recompose them."""
        return {
            "entries": self.to_json(),
            "parallel": [{"table": t, "path": p} for t, p in sorted(self.parallel)],
        }

    def digest(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    @classmethod
    def from_audit(cls, doc: dict) -> BudgetLedger:
        ledger = cls(parallel={(p["table"], p["path"]) for p in doc.get("parallel", [])})
        for item in doc["entries"]:
            ledger.record(item["table"], item["path"], item["mechanism"], item["epsilon"])
        return ledger


def laplace_noise(scale: float, size, rng: RngStream) -> np.ndarray:
    """Inverse-CDF Laplace draws with location 0 and the given scale."""
    u = rng.generator().random(size)
    # u == 0 would map to -inf
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return np.where(u < 0.5, scale * np.log(2.0 * u), -scale * np.log(2.0 * (1.0 - u)))


def laplace_perturb(
    values,
    sensitivity: float,
    epsilon: float,
    rng: RngStream,
    *,
    ledger: BudgetLedger | None = None,
    table: str = "",
    path: str = "",
    mechanism: str = "laplace",
) -> np.ndarray:
    """Add i.i.d. Laplace(sensitivity / epsilon) noise to every entry of ``values``."""
    if not epsilon > 0:
        raise BudgetError(f"Laplace mechanism needs epsilon > 0, got {epsilon}")
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    values = np.asarray(values, dtype=np.float64)
    noisy = values + laplace_noise(sensitivity / epsilon, values.shape, rng)
    if ledger is not None:
        ledger.record(table, path, mechanism, epsilon)
    return noisy


def exponential_probabilities(scores, sensitivity: float, epsilon: float) -> np.ndarray:
    """Selection probabilities proportional to exp(-eps * score / (2 * sensitivity)).

    Lower scores are more likely.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no candidates to choose from")
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    logits = -epsilon * (scores - scores.min()) / (2.0 * sensitivity)
    weights = np.exp(logits)
    return weights / weights.sum()


def exponential_choose(
    scores,
    sensitivity: float,
    epsilon: float,
    rng: RngStream,
    *,
    ledger: BudgetLedger | None = None,
    table: str = "",
    path: str = "",
    mechanism: str = "exponential",
) -> int:
    if epsilon < 0:
        raise BudgetError(f"epsilon must be non-negative, got {epsilon}")
    probs = exponential_probabilities(scores, sensitivity, epsilon)
    u = rng.generator().random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    if ledger is not None:
        ledger.record(table, path, mechanism, epsilon)
    return min(idx, probs.size - 1)


@dataclass(frozen=True)
class TableBudget:
    spn: float
    fanout: float


@dataclass(frozen=True)
class BudgetAllocation:
    tables: dict[str, TableBudget]
    unspent: float = 0.0

    def __getitem__(self, name: str) -> TableBudget:
        return self.tables[name]


def allocate_database_budget(schema, total: float, gamma: float) -> BudgetAllocation:
    """Split a database-level budget into per-table SPN and fanout budgets.

    Every table gets ``total * gamma / sum(tau)`` for its SPN and every
    foreign key ``total * (1 - gamma) / sum(tau_i * |FK_i|)`` for its fanout,
    so that the multiplicity-weighted sum of all spends equals ``total``.
    """
    if not total > 0:
        raise BudgetError(f"total epsilon must be positive, got {total}")
    if not 0.0 <= gamma <= 1.0:
        raise BudgetError(f"gamma must lie in [0, 1], got {gamma}")
    tau_sum = sum(t.max_multiplicity for t in schema.tables)
    fk_weight = sum(t.max_multiplicity * len(t.foreign_keys) for t in schema.tables)
    eps_s = total * gamma / tau_sum
    eps_f = total * (1.0 - gamma) / fk_weight if fk_weight else 0.0
    unspent = 0.0 if fk_weight else total * (1.0 - gamma)
    if unspent > 0:
        logger.warning("schema has no foreign keys; %.6g of the budget stays unspent", unspent)
    if eps_s == 0:
        warnings.warn("gamma = 0 leaves no budget for SPN construction", stacklevel=2)
    tables = {
        t.name: TableBudget(eps_s, eps_f if t.foreign_keys else 0.0) for t in schema.tables
    }
    return BudgetAllocation(tables, unspent)
