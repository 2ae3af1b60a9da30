"""Histograms, empirical entropy, normalized mutual information and fanout tables."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from dpsynth.datamodel import AttributeSpec, ColumnTable

MAX_BINS = 256

# Histogram and fanout counts: one record's change moves one unit between two cells.
HISTOGRAM_SENSITIVITY = 2.0
FANOUT_SENSITIVITY = 2.0
NMI_SENSITIVITY_CAP = 3.0


def bin_count(attr: AttributeSpec) -> int:
    if attr.kind == "categorical":
        return len(attr.domain)
    lo, hi = attr.domain
    if attr.kind == "integer" and hi - lo + 1 <= MAX_BINS:
        return int(hi - lo + 1)
    if lo == hi:
        return 1
    return MAX_BINS


def bin_edges(attr: AttributeSpec) -> np.ndarray | None:
    """Equi-width edges for numeric attributes binned by interval, else None."""
    if attr.kind == "categorical":
        return None
    lo, hi = attr.domain
    if attr.kind == "integer" and hi - lo + 1 <= MAX_BINS:
        return None
    return np.linspace(lo, hi, bin_count(attr) + 1)


def bin_index(attr: AttributeSpec, values) -> np.ndarray:
    """Map stored cell values to histogram bin indices."""
    values = np.asarray(values)
    if attr.kind == "categorical":
        return values.astype(np.int64)
    lo, hi = attr.domain
    if attr.kind == "integer" and hi - lo + 1 <= MAX_BINS:
        return (values - lo).astype(np.int64)
    k = bin_count(attr)
    if k == 1:
        return np.zeros(values.shape, dtype=np.int64)
    width = (hi - lo) / k
    idx = np.floor((values.astype(np.float64) - lo) / width).astype(np.int64)
    return np.clip(idx, 0, k - 1)


def sample_in_bins(attr: AttributeSpec, bins: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Draw stored cell values uniformly within the given bins."""
    bins = np.asarray(bins, dtype=np.int64)
    if attr.kind == "categorical":
        return bins
    lo, hi = attr.domain
    if attr.kind == "integer" and hi - lo + 1 <= MAX_BINS:
        return bins + lo
    k = bin_count(attr)
    if k == 1:
        return np.full(bins.shape, lo, dtype=attr.dtype)
    if attr.kind == "real":
        width = (hi - lo) / k
        return np.clip(lo + (bins + gen.random(bins.shape)) * width, lo, hi)
    first, last = _integer_bin_bounds(attr)
    f, l = first[bins], last[bins]
    return f + np.floor(gen.random(bins.shape) * (l - f + 1)).astype(np.int64)


@lru_cache(maxsize=256)
def _integer_bin_bounds(attr: AttributeSpec) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and largest integer falling in each equi-width bin."""
    lo, hi = attr.domain
    k = bin_count(attr)
    guess = np.ceil(lo + np.arange(k) * (hi - lo) / k).astype(np.int64)
    # rounding may leave the guess one off in either direction
    guess = np.where(bin_index(attr, guess - 1) == np.arange(k), guess - 1, guess)
    guess = np.where(bin_index(attr, guess) < np.arange(k), guess + 1, guess)
    guess[0] = lo
    last = np.append(guess[1:] - 1, hi)
    return guess, last


@dataclass
class Histogram:
    attribute: AttributeSpec
    counts: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.counts))

    def probabilities(self) -> np.ndarray:
        counts = np.clip(self.counts, 0.0, None)
        s = counts.sum()
        if s <= 0:
            return np.full(counts.size, 1.0 / counts.size)
        return counts / s


def build_histogram(t: ColumnTable) -> Histogram:
    if len(t.attributes) != 1:
        raise ValueError(f"histogram needs a single-attribute table, got {len(t.attributes)}")
    attr = t.attributes[0]
    counts = np.bincount(bin_index(attr, t.column(attr.name)), minlength=bin_count(attr))
    return Histogram(attr, counts.astype(np.float64))


def _column_codes(col: np.ndarray) -> tuple[np.ndarray, int]:
    """Small non-negative codes for a column and the code range."""
    if col.dtype.kind in "iu" and col.size:
        lo = int(col.min())
        k = int(col.max()) - lo + 1
        # integer columns with a dense range need no factorizing
        if k <= max(2 * col.size, 1024):
            return (col - lo).astype(np.int64), k
    _, codes = np.unique(col, return_inverse=True)
    return codes.reshape(-1), int(codes.max()) + 1 if codes.size else 1


def _tuple_counts(t: ColumnTable) -> np.ndarray:
    if not t.attributes:
        return np.array([t.row_count])
    # fold per-column codes into one int64 key; recompress before it can overflow
    key = np.zeros(t.row_count, dtype=np.int64)
    span = 1
    for a in t.attributes:
        codes, k = _column_codes(t.column(a.name))
        if span * k >= 2**62:
            _, key = np.unique(key, return_inverse=True)
            key = key.reshape(-1)
            span = int(key.max()) + 1
        key = key * k + codes
        span *= k
    if span <= 4 * t.row_count + 1024:
        counts = np.bincount(key, minlength=1)
        return counts[counts > 0]
    _, counts = np.unique(key, return_counts=True)
    return counts


def entropy(t: ColumnTable) -> float:
    """Empirical entropy in bits of the full row tuples of ``t``."""
    if t.row_count < 1:
        raise ValueError("entropy of an empty table is undefined")
    p = _tuple_counts(t) / t.row_count
    return float(max(0.0, -np.sum(p * np.log2(p))))


def nmi(t: ColumnTable, p) -> float:
    """Mutual information between the two column groups of ``p``, over log2 |T|."""
    if t.row_count < 2:
        raise ValueError("NMI needs at least two rows")
    left = t.take_columns(p.left)
    right = t.take_columns(p.right)
    value = (entropy(left) + entropy(right) - entropy(t)) / math.log2(t.row_count)
    return float(min(1.0, max(0.0, value)))


def entropy_sensitivity(n: int) -> float:
    """Bound on the change of empirical entropy (bits) when one of n records changes."""
    return (2.0 / n) * math.log2(n) + 2.0 / (n * math.log(2))


def nmi_sensitivity(row_count: int) -> float:
    if row_count < 2:
        raise ValueError("NMI sensitivity needs at least two rows")
    bound = 3.0 * entropy_sensitivity(row_count) / math.log2(row_count)
    return min(NMI_SENSITIVITY_CAP, bound)


@dataclass
class FanoutTable:
    """Per referenced key value, how many referencing rows point at it."""

    fk_attribute: AttributeSpec
    keys: np.ndarray
    counts: np.ndarray

    def as_dict(self) -> dict[int, float]:
        return {int(k): float(c) for k, c in zip(self.keys, self.counts)}

    def probabilities(self) -> np.ndarray:
        counts = np.clip(self.counts, 0.0, None)
        s = counts.sum()
        if s <= 0:
            return np.full(counts.size, 1.0 / counts.size)
        return counts / s


def build_fanout(t: ColumnTable, fk: AttributeSpec | str, row_subset, target_keys) -> FanoutTable:
    """Count rows of ``row_subset`` referencing each value in ``target_keys``."""
    if isinstance(fk, str):
        fk = t.schema.attribute(fk)
    if fk.role != "foreign-key":
        raise ValueError(f"{fk.name!r} is not a foreign key")
    keys = np.unique(np.asarray(target_keys, dtype=np.int64))
    values = t.column(fk.name)[np.asarray(row_subset, dtype=np.int64)]
    pos = np.searchsorted(keys, values)
    if values.size and (np.any(pos >= keys.size) or np.any(keys[np.minimum(pos, keys.size - 1)] != values)):
        raise ValueError(f"{fk.name!r} holds values outside the referenced key set")
    counts = np.bincount(pos, minlength=keys.size).astype(np.float64)
    return FanoutTable(fk, keys, counts)
