"""Convert the UCI Adult files (adult.data, adult.test) into a dpsynth schema + CSV.

Rows with a missing value ("?") are dropped, the trailing "." on test-set
income labels is removed and a surrogate primary key ``id`` is added.
Numeric domains are the observed [min, max]; categorical domains are the
sorted observed labels.

    python scripts/prepare_adult.py /path/to/adult_dir data/adult
"""

import argparse
import csv
import json
from pathlib import Path

COLUMNS = [
    ("age", "integer"),
    ("workclass", "categorical"),
    ("fnlwgt", "integer"),
    ("education", "categorical"),
    ("education-num", "integer"),
    ("marital-status", "categorical"),
    ("occupation", "categorical"),
    ("relationship", "categorical"),
    ("race", "categorical"),
    ("sex", "categorical"),
    ("capital-gain", "integer"),
    ("capital-loss", "integer"),
    ("hours-per-week", "integer"),
    ("native-country", "categorical"),
    ("income", "categorical"),
]


def read_rows(path: Path):
    with path.open(encoding="utf-8") as fh:
        for rec in csv.reader(fh, skipinitialspace=True):
            if len(rec) != len(COLUMNS) or "?" in rec:
                continue  # blank lines, the "|1x3 Cross validator" header, missing values
            rec[-1] = rec[-1].rstrip(".")
            yield rec


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("src", type=Path, help="directory with adult.data and adult.test")
    ap.add_argument("out", type=Path)
    args = ap.parse_args(argv)

    rows = [*read_rows(args.src / "adult.data"), *read_rows(args.src / "adult.test")]
    attrs = [{"name": "id", "kind": "integer", "domain": [1, len(rows)], "role": "primary-key"}]
    for j, (name, kind) in enumerate(COLUMNS):
        col = [r[j] for r in rows]
        if kind == "integer":
            vals = [int(v) for v in col]
            domain = [min(vals), max(vals)]
        else:
            domain = sorted(set(col))
        attrs.append({"name": name, "kind": kind, "domain": domain})
    schema = {
        "tables": [
            {"name": "adult", "primary_private": True, "max_multiplicity": 1, "attributes": attrs}
        ]
    }
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "schema.json").write_text(json.dumps(schema, indent=1) + "\n", encoding="utf-8")
    with (args.out / "adult.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(c for c, _ in COLUMNS)])
        for i, r in enumerate(rows, start=1):
            w.writerow([i, *r])
    print(f"wrote {len(rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
