"""Small databases and random-table builders shared by the tests."""

import itertools
import math
from collections import Counter

import numpy as np

from dpsynth.datamodel import AttributeSpec, ColumnTable, Database, DatabaseSchema, TableSchema


def household_schema(tau: int = 3) -> DatabaseSchema:
    household = TableSchema(
        "household",
        (
            AttributeSpec("H-ID", "integer", (1, 1000), "primary-key"),
            AttributeSpec("Rooms", "integer", (1, 10)),
        ),
        is_primary_private=True,
        max_multiplicity=1,
    )
    person = TableSchema(
        "person",
        (
            AttributeSpec("ID", "integer", (1, 10000), "primary-key"),
            AttributeSpec("Sex", "categorical", ("0", "1")),
            AttributeSpec("Age", "integer", (1, 100)),
            AttributeSpec("H-ID", "integer", (1, 1000), "foreign-key", "household"),
        ),
        max_multiplicity=tau,
    )
    return DatabaseSchema((household, person))


def household_db() -> Database:
    """The three-household, six-person example database."""
    schema = household_schema()
    h = ColumnTable(schema.table("household"), {"H-ID": [1, 2, 3], "Rooms": [2, 5, 3]})
    p = ColumnTable(
        schema.table("person"),
        {
            "ID": [1, 2, 3, 4, 5, 6],
            "Sex": [1, 0, 0, 1, 0, 1],
            "Age": [27, 25, 30, 32, 5, 46],
            "H-ID": [1, 1, 2, 2, 2, 3],
        },
    )
    return Database(schema, {"household": h, "person": p})


_KINDS = ("categorical", "small_int", "wide_int", "real")


def random_attributes(gen: np.random.Generator, m: int, prefix: str = "a") -> list[AttributeSpec]:
    attrs = []
    for j in range(m):
        kind = _KINDS[int(gen.integers(len(_KINDS)))]
        name = f"{prefix}{j}"
        if kind == "categorical":
            k = int(gen.integers(2, 5))
            attrs.append(AttributeSpec(name, "categorical", tuple(f"v{i}" for i in range(k))))
        elif kind == "small_int":
            attrs.append(AttributeSpec(name, "integer", (0, 9)))
        elif kind == "wide_int":
            attrs.append(AttributeSpec(name, "integer", (-50, 5000)))
        else:
            attrs.append(AttributeSpec(name, "real", (0.0, 1.0)))
    return attrs


def random_values(gen: np.random.Generator, attr: AttributeSpec, n: int) -> np.ndarray:
    if attr.kind == "categorical":
        return gen.integers(0, len(attr.domain), n)
    lo, hi = attr.domain
    if attr.kind == "integer":
        # skewed towards a few values so columns are correlated-ish and repeat
        return np.minimum(lo + gen.geometric(0.3, n) - 1, hi)
    return gen.uniform(lo, hi, n)


def random_table(gen: np.random.Generator, n: int, m: int, name: str = "t") -> ColumnTable:
    attrs = random_attributes(gen, m)
    schema = TableSchema(name, tuple(attrs), is_primary_private=True)
    return ColumnTable(schema, {a.name: random_values(gen, a, n) for a in attrs})


def random_two_table_db(gen: np.random.Generator, n_parent: int, n_child: int) -> Database:
    p_attrs = random_attributes(gen, int(gen.integers(0, 3)), "p")
    c_attrs = random_attributes(gen, int(gen.integers(0, 4)), "c")
    fks = gen.integers(1, n_parent + 1, n_child)
    tau = max(1, int(np.bincount(fks).max())) if n_child else 1
    parent = TableSchema(
        "parent", (AttributeSpec("pid", "integer", (1, 10**6), "primary-key"), *p_attrs), True, 1
    )
    child = TableSchema(
        "child",
        (
            AttributeSpec("cid", "integer", (1, 10**6), "primary-key"),
            *c_attrs,
            AttributeSpec("pid", "integer", (1, 10**6), "foreign-key", "parent"),
        ),
        False,
        tau,
    )
    schema = DatabaseSchema((parent, child))
    # original keys are sparse on purpose so synthetic ids must be remapped
    pkeys = np.sort(gen.choice(np.arange(1, 10**6), n_parent, replace=False))
    pt = ColumnTable(parent, {"pid": pkeys, **{a.name: random_values(gen, a, n_parent) for a in p_attrs}})
    ct = ColumnTable(
        child,
        {
            "cid": np.arange(1, n_child + 1),
            "pid": pkeys[fks - 1],
            **{a.name: random_values(gen, a, n_child) for a in c_attrs},
        },
    )
    return Database(schema, {"parent": pt, "child": ct})


def chain_db(gen: np.random.Generator, sizes=(4, 6, 8), max_value: int = 3) -> Database:
    """Three tables a <- b <- c plus a second child of a, small random contents."""
    na, nb, nc = sizes
    nd = int(gen.integers(0, 6))
    # a child of an empty table has nothing to reference
    nb, nd = (nb, nd) if na else (0, 0)
    nc = nc if nb else 0
    a = TableSchema(
        "a",
        (AttributeSpec("id", "integer", (1, 100), "primary-key"), AttributeSpec("x", "integer", (0, max_value))),
        True,
        1,
    )
    b = TableSchema(
        "b",
        (
            AttributeSpec("id", "integer", (1, 100), "primary-key"),
            AttributeSpec("y", "categorical", ("p", "q", "r")),
            AttributeSpec("a_id", "integer", (1, 100), "foreign-key", "a"),
        ),
        False,
        max(1, nb),
    )
    c = TableSchema(
        "c",
        (
            AttributeSpec("id", "integer", (1, 100), "primary-key"),
            AttributeSpec("z", "real", (0.0, 1.0)),
            AttributeSpec("b_id", "integer", (1, 100), "foreign-key", "b"),
        ),
        False,
        max(1, nc),
    )
    d = TableSchema(
        "d",
        (
            AttributeSpec("id", "integer", (1, 100), "primary-key"),
            AttributeSpec("w", "integer", (0, max_value)),
            AttributeSpec("a_id", "integer", (1, 100), "foreign-key", "a"),
        ),
        False,
        max(1, nd),
    )
    schema = DatabaseSchema((a, b, c, d))

    def ref(n_parent, n):
        return gen.integers(1, n_parent + 1, n) if n_parent else np.zeros(0, np.int64)

    tables = {
        "a": ColumnTable(a, {"id": np.arange(1, na + 1), "x": gen.integers(0, max_value + 1, na)}),
        "b": ColumnTable(b, {"id": np.arange(1, nb + 1), "y": gen.integers(0, 3, nb), "a_id": ref(na, nb)}),
        "c": ColumnTable(
            c, {"id": np.arange(1, nc + 1), "z": np.round(gen.uniform(0, 1, nc), 1), "b_id": ref(nb, nc)}
        ),
        "d": ColumnTable(d, {"id": np.arange(1, nd + 1), "w": gen.integers(0, max_value + 1, nd), "a_id": ref(na, nd)}),
    }
    return Database(schema, tables)


def two_cluster_db(seed, n=5000, purity=0.9):
    """Rows come from one of two clusters; each attribute independently favours its cluster's half of the domain."""
    gen = np.random.default_rng(seed)
    cluster = gen.integers(0, 2, n)
    attrs = (
        AttributeSpec("a", "categorical", ("p", "q", "r", "s")),
        AttributeSpec("b", "integer", (0, 7)),
        AttributeSpec("c", "integer", (0, 5)),
        AttributeSpec("d", "categorical", ("u", "v", "w", "x", "y", "z")),
    )
    cols = {}
    for a in attrs:
        k = len(a.domain) if a.kind == "categorical" else a.domain[1] - a.domain[0] + 1
        side = np.where(gen.random(n) < purity, cluster, 1 - cluster)
        cols[a.name] = np.where(side == 0, gen.integers(0, k // 2, n), gen.integers(k // 2, k, n))
    t = ColumnTable(TableSchema("t", attrs, True), cols)
    return Database(DatabaseSchema((t.schema,)), {"t": t})


# -- brute-force oracles ----------------------------------------------------


def brute_entropy(rows) -> float:
    """Entropy in bits of a list of hashable row tuples."""
    n = len(rows)
    return -sum(c / n * math.log2(c / n) for c in Counter(rows).values())


def brute_nmi(rows, left_cols, right_cols) -> float:
    n = len(rows)
    h = brute_entropy(rows)
    hl = brute_entropy([tuple(r[j] for j in left_cols) for r in rows])
    hr = brute_entropy([tuple(r[j] for j in right_cols) for r in rows])
    return min(1.0, max(0.0, (hl + hr - h) / math.log2(n)))


def brute_cardinality(q, db: Database) -> int:
    """Nested-loop COUNT(*) over the Cartesian product of the query's tables."""
    schema = db.schema
    ranges = [range(db[t].row_count) for t in q.tables]
    total = 0
    for combo in itertools.product(*ranges):
        row = dict(zip(q.tables, combo))
        ok = True
        for child, fk, parent in q.joins:
            pk = schema.table(parent).primary_key.name
            if db[child].column(fk)[row[child]] != db[parent].column(pk)[row[parent]]:
                ok = False
                break
        if not ok:
            continue
        for p in q.predicates:
            attr = schema.table(p.table).attribute(p.attribute)
            v = db[p.table].column(p.attribute)[row[p.table]]
            if attr.kind == "categorical":
                v = attr.domain[int(v)]
            ok = {
                "=": v == p.value,
                "<": v < p.value,
                "<=": v <= p.value,
                ">": v > p.value,
                ">=": v >= p.value,
            }[p.op]
            if not ok:
                break
        total += bool(ok)
    return total
