#!/usr/bin/env python3
"""Fetch the UCI ADULT training split and write data/adult/adult.csv.

Usage:
    scripts/prepare_adult.py                   # download from UCI
    scripts/prepare_adult.py path/to/adult.data

The output keeps the 13 attributes used by data/adult/schema.json with raw
values (whitespace stripped). Discretization happens at load time.
"""

import csv
import hashlib
import io
import pathlib
import sys
import urllib.request

URL = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/adult.data"
MD5 = "5d7c39d7b8804f071cdd1f2a7c460872"

RAW_COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education-num",
    "marital-status", "occupation", "relationship", "race", "sex",
    "capital-gain", "capital-loss", "hours-per-week", "native-country",
    "income",
]

KEEP = [
    "sex", "income", "race", "relationship", "marital-status", "workclass",
    "occupation", "education-num", "native-country", "capital-gain",
    "capital-loss", "hours-per-week", "age",
]


def main() -> int:
    if len(sys.argv) > 1:
        raw = pathlib.Path(sys.argv[1]).read_bytes()
    else:
        with urllib.request.urlopen(URL) as resp:
            raw = resp.read()
    digest = hashlib.md5(raw).hexdigest()
    if digest != MD5:
        print(f"warning: md5 {digest} differs from the known UCI file {MD5}", file=sys.stderr)

    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "adult" / "adult.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(KEEP)
        for rec in csv.reader(io.StringIO(raw.decode("utf-8"))):
            if len(rec) != len(RAW_COLUMNS):
                continue
            row = dict(zip(RAW_COLUMNS, (v.strip() for v in rec)))
            writer.writerow([row[c] for c in KEEP])
            rows += 1
    print(f"wrote {rows} rows to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
