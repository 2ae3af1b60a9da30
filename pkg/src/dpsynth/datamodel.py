"""Schema and table representations, partitions, and CSV/JSON loading.

Tables are column-major: every attribute owns one dense numpy vector.
Categorical cells are stored as integer codes into the declared domain
list, integers as ``int64`` and reals as ``float64``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

KINDS = ("categorical", "integer", "real")
ROLES = ("plain", "primary-key", "foreign-key")


class SchemaError(ValueError):
    """The schema file is malformed or violates a structural invariant."""


class DataError(ValueError):
    """Table contents violate the declared schema."""


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    domain: tuple
    role: str = "plain"
    fk_target: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"attribute {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"attribute {self.name!r}: unknown role {self.role!r}")
        if self.kind == "categorical":
            values = tuple(str(v) for v in self.domain)
            if not values:
                raise SchemaError(f"attribute {self.name!r}: empty categorical domain")
            if len(set(values)) != len(values):
                raise SchemaError(f"attribute {self.name!r}: duplicate categorical values")
            object.__setattr__(self, "domain", values)
        else:
            if len(self.domain) != 2:
                raise SchemaError(f"attribute {self.name!r}: numeric domain must be [lo, hi]")
            cast = int if self.kind == "integer" else float
            lo, hi = cast(self.domain[0]), cast(self.domain[1])
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise SchemaError(f"attribute {self.name!r}: invalid range [{lo}, {hi}]")
            object.__setattr__(self, "domain", (lo, hi))
        if self.role == "foreign-key" and not self.fk_target:
            raise SchemaError(f"attribute {self.name!r}: foreign key without target table")
        if self.role != "foreign-key" and self.fk_target is not None:
            raise SchemaError(f"attribute {self.name!r}: fk_target set on a non-FK attribute")
        if self.is_key and self.kind != "integer":
            raise SchemaError(f"attribute {self.name!r}: key attributes must be integer")

    @property
    def is_key(self) -> bool:
        return self.role != "plain"

    @property
    def dtype(self):
        return np.float64 if self.kind == "real" else np.int64

    def parse(self, text: str):
        """Convert one CSV cell to its stored representation (code or number)."""
        if text == "":
            raise ValueError("missing value")
        if self.kind == "categorical":
            try:
                return self.domain.index(text)
            except ValueError:
                raise ValueError(f"{text!r} not in categorical domain") from None
        if self.kind == "integer":
            value = int(text)
        else:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(f"non-finite value {text!r}")
        lo, hi = self.domain
        if not lo <= value <= hi:
            raise ValueError(f"{text} outside [{lo}, {hi}]")
        return value

    def format(self, value) -> str:
        if self.kind == "categorical":
            return self.domain[int(value)]
        if self.kind == "integer":
            return str(int(value))
        return repr(float(value))

    def in_domain(self, values: np.ndarray) -> np.ndarray:
        if self.kind == "categorical":
            return (values >= 0) & (values < len(self.domain))
        lo, hi = self.domain
        return (values >= lo) & (values <= hi)

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "domain": list(self.domain), "role": self.role}
        if self.fk_target is not None:
            out["fk_target"] = self.fk_target
        return out

    @classmethod
    def from_json(cls, obj: dict) -> AttributeSpec:
        try:
            return cls(
                name=obj["name"],
                kind=obj["kind"],
                domain=tuple(obj["domain"]),
                role=obj.get("role", "plain"),
                fk_target=obj.get("fk_target"),
            )
        except KeyError as exc:
            raise SchemaError(f"attribute missing field {exc}") from None


@dataclass(frozen=True)
class TableSchema:
    name: str
    attributes: tuple[AttributeSpec, ...]
    is_primary_private: bool = False
    max_multiplicity: int = 1

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"table {self.name!r}: duplicate attribute names")
        if sum(a.role == "primary-key" for a in self.attributes) > 1:
            raise SchemaError(f"table {self.name!r}: more than one primary key")
        if int(self.max_multiplicity) < 1:
            raise SchemaError(f"table {self.name!r}: max_multiplicity must be >= 1")

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def primary_key(self) -> AttributeSpec | None:
        return next((a for a in self.attributes if a.role == "primary-key"), None)

    @property
    def foreign_keys(self) -> list[AttributeSpec]:
        return [a for a in self.attributes if a.role == "foreign-key"]

    @property
    def data_attributes(self) -> list[AttributeSpec]:
        """Non-key attributes, the ones SPN construction models."""
        return [a for a in self.attributes if not a.is_key]

    def attribute(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(f"table {self.name!r} has no attribute {name!r}")

    def restrict(self, names: Sequence[str]) -> TableSchema:
        keep = set(names)
        return TableSchema(
            self.name,
            tuple(a for a in self.attributes if a.name in keep),
            self.is_primary_private,
            self.max_multiplicity,
        )

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "primary_private": self.is_primary_private,
            "max_multiplicity": self.max_multiplicity,
            "attributes": [a.to_json() for a in self.attributes],
        }


@dataclass(frozen=True)
class DatabaseSchema:
    tables: tuple[TableSchema, ...]

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        names = [t.name for t in self.tables]
        if not names:
            raise SchemaError("schema declares no tables")
        if len(set(names)) != len(names):
            raise SchemaError("duplicate table names")
        if sum(t.is_primary_private for t in self.tables) != 1:
            raise SchemaError("exactly one table must be primary_private")
        for t in self.tables:
            for fk in t.foreign_keys:
                if fk.fk_target not in names:
                    raise SchemaError(f"{t.name}.{fk.name}: unknown target table {fk.fk_target!r}")
                if self.table(fk.fk_target).primary_key is None:
                    raise SchemaError(f"{t.name}.{fk.name}: target {fk.fk_target!r} has no primary key")

    def table(self, name: str) -> TableSchema:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(f"no table {name!r}")

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tables]

    def fk_edges(self) -> list[tuple[str, str, str]]:
        """All (referencing table, fk attribute, referenced table) triples."""
        return [(t.name, fk.name, fk.fk_target) for t in self.tables for fk in t.foreign_keys]

    def to_json(self) -> dict:
        return {"tables": [t.to_json() for t in self.tables]}

    @classmethod
    def from_json(cls, obj: dict) -> DatabaseSchema:
        if not isinstance(obj, dict) or "tables" not in obj:
            raise SchemaError("schema must be an object with a 'tables' list")
        tables = []
        for t in obj["tables"]:
            try:
                tables.append(
                    TableSchema(
                        name=t["name"],
                        attributes=tuple(AttributeSpec.from_json(a) for a in t["attributes"]),
                        is_primary_private=bool(t.get("primary_private", False)),
                        max_multiplicity=int(t.get("max_multiplicity", 1)),
                    )
                )
            except KeyError as exc:
                raise SchemaError(f"table missing field {exc}") from None
        return cls(tuple(tables))

    @classmethod
    def load(cls, path: str | Path) -> DatabaseSchema:
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        return cls.from_json(obj)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True, eq=False)
class IndexPartition:
    """Two disjoint, sorted index sets that together cover ``range(size)``."""

    left: np.ndarray
    right: np.ndarray
    axis: str = "rows"

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.int64)
        right = np.asarray(self.right, dtype=np.int64)
        if self.axis not in ("rows", "columns"):
            raise ValueError(f"axis must be 'rows' or 'columns', got {self.axis!r}")
        if left.size == 0 or right.size == 0:
            raise ValueError("both sides of a partition must be non-empty")
        if np.any(np.diff(left) <= 0) or np.any(np.diff(right) <= 0):
            raise ValueError("partition sides must be sorted and duplicate-free")
        both = np.concatenate([left, right])
        if not np.array_equal(np.sort(both), np.arange(both.size)):
            raise ValueError("partition sides must be disjoint and cover the full index range")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @classmethod
    def from_mask(cls, left_mask, axis: str = "rows") -> IndexPartition:
        left_mask = np.asarray(left_mask, dtype=bool)
        return cls(np.flatnonzero(left_mask), np.flatnonzero(~left_mask), axis)

    @property
    def size(self) -> int:
        return int(self.left.size + self.right.size)

    def side(self, which: str) -> np.ndarray:
        if which == "left":
            return self.left
        if which == "right":
            return self.right
        raise ValueError(f"side must be 'left' or 'right', got {which!r}")


@dataclass(eq=False)
class ColumnTable:
    schema: TableSchema
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        lengths = set()
        cols = {}
        for a in self.schema.attributes:
            if a.name not in self.columns:
                raise DataError(f"table {self.schema.name!r}: missing column {a.name!r}")
            col = np.asarray(self.columns[a.name], dtype=a.dtype)
            lengths.add(col.shape[0])
            cols[a.name] = col
        if len(lengths) > 1:
            raise DataError(f"table {self.schema.name!r}: ragged columns {sorted(lengths)}")
        self.columns = cols
        self._rows = lengths.pop() if lengths else 0

    @property
    def name(self) -> str:
        return self.schema.name

    @property
    def row_count(self) -> int:
        return self._rows

    def __len__(self) -> int:
        return self._rows

    @property
    def attributes(self) -> tuple[AttributeSpec, ...]:
        return self.schema.attributes

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def data_view(self) -> ColumnTable:
        """The table restricted to its non-key attributes."""
        names = [a.name for a in self.schema.data_attributes]
        return ColumnTable(self.schema.restrict(names), {n: self.columns[n] for n in names})

    def take_rows(self, rows) -> ColumnTable:
        rows = np.asarray(rows, dtype=np.int64)
        return ColumnTable(self.schema, {n: c[rows] for n, c in self.columns.items()})

    def take_columns(self, indices) -> ColumnTable:
        names = [self.schema.attributes[int(i)].name for i in indices]
        return ColumnTable(self.schema.restrict(names), {n: self.columns[n] for n in names})

    def matrix(self) -> np.ndarray:
        """Row-major float64 copy of all cells, one column per attribute."""
        if not self.schema.attributes:
            return np.empty((self._rows, 0))
        return np.column_stack([self.columns[a.name].astype(np.float64) for a in self.attributes])

    def validate(self) -> None:
        for a in self.attributes:
            bad = np.flatnonzero(~a.in_domain(self.columns[a.name]))
            if bad.size:
                i = int(bad[0])
                raise DataError(
                    f"table {self.name!r}, row {i}, column {a.name!r}: "
                    f"value {self.columns[a.name][i]!r} outside declared domain"
                )
        pk = self.schema.primary_key
        if pk is not None:
            values = self.columns[pk.name]
            if np.unique(values).size != values.size:
                raise DataError(f"table {self.name!r}: duplicate primary key values in {pk.name!r}")

    def equals(self, other: ColumnTable) -> bool:
        return self.schema == other.schema and all(
            np.array_equal(self.columns[n], other.columns[n]) for n in self.schema.names
        )


@dataclass(eq=False)
class Database:
    schema: DatabaseSchema
    tables: dict[str, ColumnTable]

    def __getitem__(self, name: str) -> ColumnTable:
        return self.tables[name]

    def __iter__(self):
        return iter(self.tables[n] for n in self.schema.names)

    def validate(self) -> None:
        """Check domains, PK uniqueness and referential integrity."""
        for t in self:
            t.validate()
        for child, fk, parent in self.schema.fk_edges():
            pk = self.schema.table(parent).primary_key
            parent_keys = self.tables[parent].column(pk.name)
            fk_values = self.tables[child].column(fk)
            missing = ~np.isin(fk_values, parent_keys)
            if missing.any():
                i = int(np.flatnonzero(missing)[0])
                raise DataError(
                    f"table {child!r}, row {i}, column {fk!r}: value {fk_values[i]} "
                    f"references no row of {parent!r}"
                )


def subtable(t: ColumnTable, p: IndexPartition, side: str) -> ColumnTable:
    """Select one side of a row or column partition, keeping original order."""
    idx = p.side(side)
    bound = t.row_count if p.axis == "rows" else len(t.attributes)
    if p.size != bound:
        raise IndexError(f"partition covers {p.size} indices, table axis has {bound}")
    if p.axis == "rows":
        return t.take_rows(idx)
    return t.take_columns(idx)


def concat_rows(tables: Iterable[ColumnTable]) -> ColumnTable:
    tables = list(tables)
    schema = tables[0].schema
    return ColumnTable(schema, {n: np.concatenate([t.columns[n] for t in tables]) for n in schema.names})


def read_table_csv(schema: TableSchema, path: str | Path) -> ColumnTable:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing data file for table {schema.name!r}: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        if sorted(header) != sorted(schema.names):
            raise DataError(f"{path}: header {header} does not match schema columns {schema.names}")
        order = [schema.attribute(h) for h in header]
        values: list[list] = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}, line {lineno}: expected {len(header)} cells, got {len(row)}")
            for j, (attr, cell) in enumerate(zip(order, row)):
                try:
                    values[j].append(attr.parse(cell))
                except ValueError as exc:
                    raise DataError(
                        f"table {schema.name!r}, row {lineno - 2}, column {attr.name!r}: {exc}"
                    ) from None
    cols = {a.name: np.asarray(v, dtype=a.dtype) for a, v in zip(order, values)}
    return ColumnTable(schema, cols)


def write_table_csv(t: ColumnTable, path: str | Path) -> None:
    attrs = t.attributes
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([a.name for a in attrs])
        cols = [t.columns[a.name] for a in attrs]
        for i in range(t.row_count):
            writer.writerow([a.format(c[i]) for a, c in zip(attrs, cols)])


def load_database(schema_file: str | Path, csv_dir: str | Path) -> Database:
    """Load and validate ``<table>.csv`` for every table declared in ``schema_file``."""
    schema = DatabaseSchema.load(schema_file)
    return load_tables(schema, csv_dir)


def load_tables(schema: DatabaseSchema, csv_dir: str | Path) -> Database:
    csv_dir = Path(csv_dir)
    tables = {t.name: read_table_csv(t, csv_dir / f"{t.name}.csv") for t in schema.tables}
    db = Database(schema, tables)
    db.validate()
    return db


def save_database(db: Database, out_dir: str | Path, schema_file: str | None = "schema.json") -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for t in db:
        write_table_csv(t, out_dir / f"{t.name}.csv")
    if schema_file:
        db.schema.dump(out_dir / schema_file)
