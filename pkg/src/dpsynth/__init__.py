"""Differentially private relational database synthesis with sum-product networks."""

from dpsynth.datamodel import (
    AttributeSpec,
    ColumnTable,
    Database,
    DatabaseSchema,
    IndexPartition,
    TableSchema,
    load_database,
    save_database,
    subtable,
)
from dpsynth.dpcore import BudgetLedger, RngStream, allocate_database_budget
from dpsynth.pipeline import SynthParams, synthesize

__version__ = "0.1.0"

__all__ = [
    "AttributeSpec",
    "BudgetLedger",
    "ColumnTable",
    "Database",
    "DatabaseSchema",
    "IndexPartition",
    "RngStream",
    "SynthParams",
    "TableSchema",
    "allocate_database_budget",
    "load_database",
    "save_database",
    "subtable",
    "synthesize",
]
