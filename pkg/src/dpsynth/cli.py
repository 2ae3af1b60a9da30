"""Command-line interface: ``synth``, ``eval``, ``workload`` and ``inspect``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from dpsynth.datamodel import DataError, DatabaseSchema, SchemaError, load_tables, save_database
from dpsynth.dpcore import BudgetError
from dpsynth.evaluation import (
    QueryError,
    SchemaMismatch,
    evaluate,
    generate_workload,
    load_workload,
    save_workload,
)
from dpsynth.pipeline import BudgetViolation, SynthParams, check_ledger, synthesize
from dpsynth.report import summary_lines, write_report
from dpsynth.spn import SpnFormatError, deserialize_spn, depth, effective_scale, iter_nodes, node_counts, serialize_spn, LeafNode

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BUDGET = 0, 1, 2, 3

PARAM_DEFAULTS = {
    "epsilon": 3.2,
    "alpha": 0.5,
    "beta": 10000,
    "gamma": 0.9,
    "gamma1": 0.5,
    "gamma2": 0.5,
    "iterations": 5,
}

log = logging.getLogger("dpsynth")


class ConfigError(ValueError):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(PARAM_DEFAULTS)
    env_seed = os.environ.get("DPSYNTH_SEED")
    cfg["seed"] = int(env_seed) if env_seed not in (None, "") else 0
    cfg["threads"] = os.cpu_count() or 1
    if args.config:
        try:
            cfg.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    for key in (*PARAM_DEFAULTS, "seed", "threads", "schema", "data", "out"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for key in ("schema", "data", "out"):
        if not cfg.get(key):
            raise ConfigError(f"missing required setting --{key}")
    if not cfg["epsilon"] > 0:
        raise ConfigError(f"epsilon must be > 0 (got {cfg['epsilon']})")
    if not 0 <= cfg["alpha"] <= 1:
        log.warning("alpha=%s lies outside [0, 1]", cfg["alpha"])
    return cfg


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    try:
        params = SynthParams(
            epsilon=float(cfg["epsilon"]), alpha=float(cfg["alpha"]), beta=int(cfg["beta"]),
            gamma=float(cfg["gamma"]), gamma1=float(cfg["gamma1"]), gamma2=float(cfg["gamma2"]),
            iterations=int(cfg["iterations"]), seed=int(cfg["seed"]), threads=int(cfg["threads"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    schema = DatabaseSchema.load(cfg["schema"])
    db = load_tables(schema, cfg["data"])
    result = synthesize(db, params)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_database(result.database, out)
    spn_dir = out / "spn"
    spn_dir.mkdir(exist_ok=True)
    for name, tree in result.trees.items():
        t = db[name]
        meta = {
            "row_count": t.row_count,
            "attr_count": len(t.schema.data_attributes),
            "beta": params.beta,
            "epsilon": result.allocation[name].spn,
        }
        (spn_dir / f"{name}.json").write_bytes(serialize_spn(tree, name, meta))
    audit = result.ledger.audit()
    _write_json(out / "ledger.json", audit)
    composition = check_ledger(schema, result.ledger, result.allocation, params.epsilon)
    manifest = {
        "command": "synth",
        "params": {k: v for k, v in params.to_json().items() if k != "threads"},
        "seed": params.seed,
        "inputs": {"schema": str(cfg["schema"]), "data": str(cfg["data"])},
        "allocation": {
            n: {"spn": b.spn, "fanout": b.fanout} for n, b in result.allocation.tables.items()
        },
        "unspent": result.allocation.unspent,
        "ledger": {"digest": result.ledger.digest(), "entries": len(audit["entries"]), **composition},
        "tables": {t.name: {"rows": t.row_count} for t in result.database},
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {len(result.trees)} SPNs and {len(schema.tables)} synthetic tables to {out}")
    print(f"database-level epsilon spent: {composition['database_total']:.6g} of {params.epsilon:g}")
    return EXIT_OK


def _load_dir(directory: Path, schema_file: str | None) -> tuple:
    path = Path(schema_file) if schema_file else directory / "schema.json"
    if not path.exists():
        raise DataError(f"no schema file for {directory} (looked for {path})")
    schema = DatabaseSchema.load(path)
    return load_tables(schema, directory)


def cmd_eval(args) -> int:
    orig = _load_dir(Path(args.orig), args.schema)
    synth = _load_dir(Path(args.synth), args.synth_schema or args.schema)
    if orig.schema != synth.schema:
        raise SchemaMismatch("original and synthetic schemas differ")
    seed = args.seed if args.seed is not None else int(os.environ.get("DPSYNTH_SEED") or 0)
    if args.workload:
        workload = load_workload(args.workload)
    else:
        workload = generate_workload(orig, args.generate, seed)
    lambdas = [int(x) for x in args.lambdas.split(",") if x.strip()]
    meta = {"seed": seed, "lambdas": lambdas, "queries": len(workload), "workload": args.workload}
    manifest = Path(args.synth) / "manifest.json"
    if manifest.exists():
        m = json.loads(manifest.read_text(encoding="utf-8"))
        meta["synth_params"] = m.get("params")
    report = evaluate(orig, synth, workload, lambdas, meta)
    out = Path(args.out)
    write_report(report, out, figures=not args.no_figures)
    for line in summary_lines(report):
        print(line)
    return EXIT_OK


def cmd_workload(args) -> int:
    schema = DatabaseSchema.load(args.schema)
    db = load_tables(schema, args.data)
    seed = args.seed if args.seed is not None else int(os.environ.get("DPSYNTH_SEED") or 0)
    queries = generate_workload(db, args.count, seed)
    save_workload(queries, args.out)
    print(f"wrote {len(queries)} queries to {args.out}")
    return EXIT_OK


def _plural(n: int, one: str, many: str) -> str:
    return f"{n} {one if n == 1 else many}"


def cmd_inspect(args) -> int:
    try:
        payload = Path(args.spn).read_bytes()
    except OSError as exc:
        raise SpnFormatError(str(exc)) from None
    table, root, meta = deserialize_spn(payload)
    counts = node_counts(root)
    parts = []
    if counts["sum"]:
        parts.append(_plural(counts["sum"], "sum", "sums"))
    if counts["product"]:
        parts.append(_plural(counts["product"], "product", "products"))
    parts.append(_plural(counts["leaf"], "leaf", "leaves"))
    if counts["fanout"]:
        parts.append(_plural(counts["fanout"], "fanout leaf", "fanout leaves"))
    print(f"table {table}: " + ", ".join(parts) + f", depth {depth(root)}")
    for node in iter_nodes(root):
        if isinstance(node, LeafNode):
            print(f"  leaf {node.histogram.attribute.name}: epsilon {node.epsilon:.6g}")
    if {"row_count", "attr_count", "beta"} <= set(meta):
        # each fanout leaf arrives with one extra product node
        core = sum(counts.values()) - 2 * counts["fanout"]
        bound = effective_scale(meta["row_count"], meta["attr_count"], meta["beta"])
        status = "ok" if core <= bound + 1e-9 else "VIOLATED"
        print(f"node count {core} <= scale bound {bound:.3f}: {status}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpsynth", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a private database")
    s.add_argument("--config", help="JSON file with any of the settings below")
    s.add_argument("--schema")
    s.add_argument("--data", help="directory holding <table>.csv")
    s.add_argument("--out")
    s.add_argument("--epsilon", type=float)
    s.add_argument("--alpha", type=float)
    s.add_argument("--beta", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--gamma1", type=float)
    s.add_argument("--gamma2", type=float)
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="compare a synthetic database with the original")
    e.add_argument("--orig", required=True)
    e.add_argument("--synth", required=True)
    e.add_argument("--schema", help="schema file (default: <orig>/schema.json)")
    e.add_argument("--synth-schema", help="schema file for the synthetic side")
    src = e.add_mutually_exclusive_group()
    src.add_argument("--workload", help="JSON workload file")
    src.add_argument("--generate", type=int, default=1000, help="generate N queries (default 1000)")
    e.add_argument("--seed", type=int)
    e.add_argument("--lambdas", default="2,3,4")
    e.add_argument("--out", required=True)
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("workload", help="generate a query workload")
    w.add_argument("--schema", required=True)
    w.add_argument("--data", required=True)
    w.add_argument("--count", type=int, default=1000)
    w.add_argument("--seed", type=int)
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_workload)

    i = sub.add_parser("inspect", help="summarize a serialized SPN")
    i.add_argument("spn")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, BudgetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SchemaError, SchemaMismatch, SpnFormatError, QueryError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BudgetViolation as exc:
        print(f"budget violation: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
