#!/usr/bin/env python3
"""Merge the raw UCI Adult files (adult.data, adult.test) into one headered CSV.

usage: prepare_adult.py RAW_DIR OUT_CSV

The raw files use ", " separators, no header, and the test split carries a
trailing "." on the income label. "?" is kept as an ordinary category value.
"""
import csv
import sys
from pathlib import Path

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country",
    "income",
]


def _rows(path):
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != len(COLUMNS):
                continue
            fields[-1] = fields[-1].rstrip(".")
            yield fields


def main(argv):
    if len(argv) != 3:
        print(__doc__, file=sys.stderr)
        return 1
    raw, out = Path(argv[1]), Path(argv[2])
    n = 0
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for name in ("adult.data", "adult.test"):
            for row in _rows(raw / name):
                writer.writerow(row)
                n += 1
    print(f"wrote {n} rows to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
