"""Draw synthetic tables from (fanout-augmented) SPNs and rebuild keys.

Sampling is post-processing: nothing here touches the budget ledger.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from dpsynth.datamodel import ColumnTable, Database, DatabaseSchema
from dpsynth.dpcore import RngStream
from dpsynth.spn import FanoutLeaf, LeafNode, Node, ProductNode, SumNode
from dpsynth.stats import sample_in_bins

logger = logging.getLogger(__name__)


def split_target(n: int, weight_left: float) -> tuple[int, int]:
    """Row targets for the two children of a sum node."""
    n_left = int(math.floor(n * weight_left + 0.5))
    n_left = min(max(n_left, 0), n)
    return n_left, n - n_left


def _draw(probs: np.ndarray, n: int, gen: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, gen.random(n) * cdf[-1], side="right")
    return np.minimum(idx, probs.size - 1)


def _leaf_probs(counts: np.ndarray, where: str) -> np.ndarray:
    counts = np.clip(np.asarray(counts, dtype=np.float64), 0.0, None)
    total = counts.sum()
    if total <= 0:
        logger.warning("all-zero weights at %s; sampling uniformly over bins", where)
        return np.full(counts.size, 1.0 / counts.size)
    return counts / total


def sample_table(tree: Node, n: int, rng: RngStream) -> dict[str, np.ndarray]:
    """Sample ``n`` rows; returns one stored-value column per attribute in the tree.

    Foreign-key columns hold draws of the *original* referenced key values.
    """
    if n < 0:
        raise ValueError(f"target row count must be non-negative, got {n}")
    out_cols: dict[str, list] = {}
    # each task: (node, target rows, path); sum children are appended in order
    # so per-column chunks concatenate left-to-right
    pieces: dict[str, list[tuple[str, np.ndarray]]] = {}
    stack = [(tree, n, "spn")]
    while stack:
        node, k, path = stack.pop()
        if isinstance(node, SumNode):
            k_l, k_r = split_target(k, node.weight_left)
            stack.append((node.children[1], k_r, f"{path}/R"))
            stack.append((node.children[0], k_l, f"{path}/L"))
        elif isinstance(node, ProductNode):
            stack.append((node.children[1], k, f"{path}/R"))
            stack.append((node.children[0], k, f"{path}/L"))
        elif isinstance(node, LeafNode):
            attr = node.histogram.attribute
            gen = rng.child(path).generator()
            bins = _draw(_leaf_probs(node.histogram.counts, path), k, gen)
            pieces.setdefault(attr.name, []).append((path, sample_in_bins(attr, bins, gen)))
        elif isinstance(node, FanoutLeaf):
            fan = node.fanout
            gen = rng.child(path).generator()
            idx = _draw(_leaf_probs(fan.counts, path), k, gen)
            pieces.setdefault(fan.fk_attribute.name, []).append((path, fan.keys[idx]))
        else:
            raise TypeError(f"unexpected node {type(node).__name__}")
    for name, chunks in pieces.items():
        # pre-order path order equals left-to-right row order
        out_cols[name] = np.concatenate([c for _, c in sorted(chunks, key=lambda pc: _path_key(pc[0]))])
    lengths = {v.size for v in out_cols.values()}
    if lengths and lengths != {n}:
        raise AssertionError(f"non-rectangular sample: column lengths {sorted(lengths)} for target {n}")
    return out_cols


def _path_key(path: str) -> tuple:
    return tuple(0 if p == "L" else 1 for p in path.split("/")[1:])


def synthetic_key_ids(n: int, domain: tuple[int, int]) -> np.ndarray:
    """Synthetic primary keys: 1..n when the domain allows it, else lo..lo+n-1."""
    lo, hi = domain
    if lo <= 1 and n <= hi:
        return np.arange(1, n + 1, dtype=np.int64)
    if lo + n - 1 <= hi:
        return np.arange(lo, lo + n, dtype=np.int64)
    raise ValueError(f"primary key domain [{lo}, {hi}] cannot hold {n} synthetic ids")


def assemble_database(
    schema: DatabaseSchema,
    trees: dict[str, Node],
    row_counts: dict[str, int],
    rng: RngStream,
    original_keys: dict[str, np.ndarray],
) -> Database:
    """Sample every table and remap foreign keys onto regenerated primary keys.

    ``original_keys`` holds each referenced table's original primary key
    values; they only serve to rank fanout draws, never reach the output.
    """
    key_maps: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for t in schema.tables:
        pk = t.primary_key
        if pk is not None:
            ids = synthetic_key_ids(row_counts[t.name], pk.domain)
            if t.name in original_keys:
                orig = np.sort(np.asarray(original_keys[t.name], dtype=np.int64))
                if orig.size != ids.size:
                    raise ValueError(f"table {t.name!r}: {orig.size} original keys for {ids.size} rows")
                key_maps[t.name] = (orig, ids)
            else:
                key_maps[t.name] = (ids, ids)

    tables = {}
    for t in schema.tables:
        n = row_counts[t.name]
        if t.name in trees:
            cols = sample_table(trees[t.name], n, rng.child(t.name))
        elif n == 0 or all(a.role == "primary-key" for a in t.attributes):
            # nothing to sample: an empty table or a bare key column
            cols = {a.name: np.zeros(0, dtype=a.dtype) for a in t.attributes}
        else:
            raise ValueError(f"table {t.name!r} needs {n} rows but has no tree")
        out = {}
        for a in t.attributes:
            if a.role == "primary-key":
                out[a.name] = key_maps[t.name][1]
            elif a.role == "foreign-key":
                orig, ids = key_maps[a.fk_target]
                draws = cols[a.name]
                pos = np.searchsorted(orig, draws)
                if draws.size and (np.any(pos >= orig.size) or np.any(orig[np.minimum(pos, orig.size - 1)] != draws)):
                    raise AssertionError(f"{t.name}.{a.name}: fanout draw outside the referenced key set")
                out[a.name] = ids[pos]
            else:
                out[a.name] = cols[a.name]
        tables[t.name] = ColumnTable(t, out)
    return Database(schema, tables)
