"""Private row splitting (noisy 2-means) and column splitting (exponential mechanism)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dpsynth.datamodel import ColumnTable, IndexPartition
from dpsynth.dpcore import BudgetError, BudgetLedger, RngStream, exponential_choose, laplace_noise
from dpsynth.stats import nmi, nmi_sensitivity


@dataclass(frozen=True)
class SplitConfig:
    iterations: int = 5
    min_table_size: int = 10000

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.min_table_size < 1:
            raise ValueError("min_table_size must be >= 1")


class _Features:
    """Domain-normalized numeric columns plus categorical codes."""

    def __init__(self, t: ColumnTable):
        num, cat, sizes = [], [], []
        for a in t.attributes:
            col = t.column(a.name)
            if a.kind == "categorical":
                cat.append(col)
                sizes.append(len(a.domain))
            else:
                lo, hi = a.domain
                span = float(hi - lo)
                num.append((col - lo) / span if span > 0 else np.zeros(col.shape))
        n = t.row_count
        self.numeric = np.column_stack(num) if num else np.empty((n, 0))
        self.codes = np.column_stack(cat).astype(np.int64) if cat else np.empty((n, 0), np.int64)
        self.sizes = sizes

    def center(self, rows: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        num_center = self.numeric[rows].mean(axis=0)
        freqs = [
            np.bincount(self.codes[rows, j], minlength=k) / rows.size for j, k in enumerate(self.sizes)
        ]
        return num_center, freqs

    def distance(self, center) -> np.ndarray:
        """Sum of L1 on normalized numerics and expected Hamming distance on categoricals."""
        num_center, freqs = center
        d = np.abs(self.numeric - num_center).sum(axis=1)
        for j, f in enumerate(freqs):
            d += 1.0 - f[self.codes[:, j]]
        return d


def row_split(
    t: ColumnTable,
    epsilon: float,
    cfg: SplitConfig,
    rng: RngStream,
    *,
    ledger: BudgetLedger | None = None,
    table: str = "",
    path: str = "",
) -> IndexPartition:
    """Split rows into two clusters of at least ``cfg.min_table_size`` rows each.

    Each of the ``cfg.iterations`` rounds perturbs every row's distance
    difference to the two centers with Laplace(2m * J / epsilon) noise, m
    being the attribute count (each normalized distance lies in [0, 1]).
    """
    n, m = t.row_count, len(t.attributes)
    beta, J = cfg.min_table_size, cfg.iterations
    if n < 2 * beta:
        raise ValueError(f"row split needs at least {2 * beta} rows, got {n}")
    if not epsilon > 0:
        raise BudgetError(f"row split needs epsilon > 0, got {epsilon}")
    feats = _Features(t)
    gen = rng.child("init").generator()
    left = np.zeros(n, dtype=bool)
    left[gen.permutation(n)[: n // 2]] = True
    scale = 2.0 * m * J / epsilon
    for j in range(1, J + 1):
        centers = []
        for side in (left, ~left):
            rows = np.flatnonzero(side)
            if rows.size == 0:
                rows = rng.child("empty", j).generator().integers(n, size=1)
            centers.append(feats.center(rows))
        diff = feats.distance(centers[0]) - feats.distance(centers[1])
        noisy = diff + laplace_noise(scale, n, rng.child("iter", j))
        left = noisy <= 0
    left = _enforce_min_size(left, beta, rng.child("adjust").generator())
    if ledger is not None:
        ledger.record(table, path, "row_split", epsilon)
    return IndexPartition.from_mask(left, "rows")


def _enforce_min_size(left: np.ndarray, beta: int, gen: np.random.Generator) -> np.ndarray:
    left = left.copy()
    n_left = int(left.sum())
    if n_left < beta:
        donors = np.flatnonzero(~left)
        left[gen.choice(donors, beta - n_left, replace=False)] = True
    elif left.size - n_left < beta:
        donors = np.flatnonzero(left)
        left[gen.choice(donors, beta - (left.size - n_left), replace=False)] = False
    return left


def candidate_partitions(m: int, rng: RngStream) -> list[IndexPartition]:
    """``m`` uniformly drawn column partitions with floor(m/2) columns on the left."""
    gen = rng.generator()
    out = []
    for _ in range(m):
        mask = np.zeros(m, dtype=bool)
        mask[gen.choice(m, m // 2, replace=False)] = True
        out.append(IndexPartition.from_mask(mask, "columns"))
    return out


def col_split(
    t: ColumnTable,
    epsilon: float,
    rng: RngStream,
    *,
    ledger: BudgetLedger | None = None,
    table: str = "",
    path: str = "",
    mechanism: str = "col_split",
) -> IndexPartition:
    """Pick a half-sized column partition with low NMI via the exponential mechanism."""
    m = len(t.attributes)
    if m < 2:
        raise ValueError("column split needs at least two attributes")
    candidates = candidate_partitions(m, rng.child("candidates"))
    if t.row_count >= 2:
        scores = [nmi(t, o) for o in candidates]
        sensitivity = nmi_sensitivity(t.row_count)
    else:
        # NMI is undefined on a single row; every candidate scores alike
        scores, sensitivity = [0.0] * m, 1.0
    idx = exponential_choose(
        scores, sensitivity, epsilon, rng.child("choose"),
        ledger=ledger, table=table, path=path, mechanism=mechanism,
    )
    return candidates[idx]
