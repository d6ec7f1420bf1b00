#!/usr/bin/env python3
"""Build a 123-feature binarized Adult dataset in LIBSVM format.

Reads the raw UCI ``adult.data`` / ``adult.test`` files and encodes them the
same way as the familiar ``a9a`` LIBSVM file: continuous attributes are cut
into quantile bins (capital gain/loss into zero vs. nonzero), categorical
attributes are one-hot encoded, and unknown values ("?") leave their block
empty. Labels are written as +1 (>50K) / -1 (<=50K).

The raw files are taken from a directory given with ``--raw-dir``; without it,
the script fetches the ``responsibly`` wheel from the package index (it ships
the UCI files verbatim) and reads them out of the archive.

    python scripts/prepare_adult.py --output data/adult.libsvm.gz
"""

from __future__ import annotations

import argparse
import glob
import gzip
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import numpy as np

WHEEL_PREFIX = "responsibly/dataset/adult/"

CATEGORIES = {
    "workclass": "Private, Self-emp-not-inc, Self-emp-inc, Federal-gov, Local-gov, "
    "State-gov, Without-pay, Never-worked",
    "education": "Bachelors, Some-college, 11th, HS-grad, Prof-school, Assoc-acdm, "
    "Assoc-voc, 9th, 7th-8th, 12th, Masters, 1st-4th, 10th, Doctorate, 5th-6th, Preschool",
    "marital-status": "Married-civ-spouse, Divorced, Never-married, Separated, Widowed, "
    "Married-spouse-absent, Married-AF-spouse",
    "occupation": "Tech-support, Craft-repair, Other-service, Sales, Exec-managerial, "
    "Prof-specialty, Handlers-cleaners, Machine-op-inspct, Adm-clerical, Farming-fishing, "
    "Transport-moving, Priv-house-serv, Protective-serv, Armed-Forces",
    "relationship": "Wife, Own-child, Husband, Not-in-family, Other-relative, Unmarried",
    "race": "White, Asian-Pac-Islander, Amer-Indian-Eskimo, Other, Black",
    "sex": "Female, Male",
    "native-country": "United-States, Cambodia, England, Puerto-Rico, Canada, Germany, "
    "Outlying-US(Guam-USVI-etc), India, Japan, Greece, South, China, Cuba, Iran, Honduras, "
    "Philippines, Italy, Poland, Jamaica, Vietnam, Mexico, Portugal, Ireland, France, "
    "Dominican-Republic, Laos, Ecuador, Taiwan, Haiti, Columbia, Hungary, Guatemala, "
    "Nicaragua, Scotland, Thailand, Yugoslavia, El-Salvador, Trinadad&Tobago, Peru, Hong, "
    "Holand-Netherlands",
}

# (column name, encoding); "q5" = 5 quantile bins, "nz" = zero/nonzero
COLUMNS = [
    ("age", "q5"),
    ("workclass", "cat"),
    ("fnlwgt", "q5"),
    ("education", "cat"),
    ("education-num", "q5"),
    ("marital-status", "cat"),
    ("occupation", "cat"),
    ("relationship", "cat"),
    ("race", "cat"),
    ("sex", "cat"),
    ("capital-gain", "nz"),
    ("capital-loss", "nz"),
    ("hours-per-week", "q5"),
    ("native-country", "cat"),
]


def read_raw_rows(text: str) -> list[list[str]]:
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        rows.append([tok.strip() for tok in line.split(",")])
    return rows


def load_raw(raw_dir: Path | None) -> list[list[str]]:
    if raw_dir is not None:
        texts = [(raw_dir / name).read_text() for name in ("adult.data", "adult.test")]
    else:
        with tempfile.TemporaryDirectory() as tmp:
            subprocess.run(
                [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp,
                 "responsibly==0.1.2"],
                check=True,
            )
            wheel = glob.glob(str(Path(tmp) / "responsibly-*.whl"))[0]
            with zipfile.ZipFile(wheel) as zf:
                texts = [zf.read(WHEEL_PREFIX + name).decode()
                         for name in ("adult.data", "adult.test")]
    return read_raw_rows(texts[0]) + read_raw_rows(texts[1])


def encode(rows: list[list[str]]) -> tuple[list[list[int]], list[int]]:
    n = len(rows)
    active: list[list[int]] = [[] for _ in range(n)]
    offset = 0
    for col, (name, kind) in enumerate(COLUMNS):
        raw = [r[col] for r in rows]
        if kind == "cat":
            cats = [c.strip() for c in CATEGORIES[name].split(",")]
            lookup = {c: k for k, c in enumerate(cats)}
            for i, v in enumerate(raw):
                if v in lookup:
                    active[i].append(offset + lookup[v])
            offset += len(cats)
        elif kind == "q5":
            vals = np.array([float(v) for v in raw])
            edges = np.quantile(vals, [0.2, 0.4, 0.6, 0.8])
            bins = np.searchsorted(edges, vals, side="right")
            for i, b in enumerate(bins):
                active[i].append(offset + int(b))
            offset += 5
        else:
            vals = np.array([float(v) for v in raw])
            for i, v in enumerate(vals):
                active[i].append(offset + int(v > 0))
            offset += 2
    assert offset == 123, offset
    labels = [1 if r[-1].rstrip(".") == ">50K" else -1 for r in rows]
    return active, labels


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--output", type=Path, default=Path("data/adult.libsvm.gz"))
    parser.add_argument("--raw-dir", type=Path, default=None)
    args = parser.parse_args(argv)

    rows = load_raw(args.raw_dir)
    active, labels = encode(rows)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    opener = gzip.open if args.output.suffix == ".gz" else open
    # mtime=0 keeps the gzip bytes reproducible
    with open(args.output, "wb") as raw_fh:
        fh = gzip.GzipFile(fileobj=raw_fh, mode="wb", mtime=0) if opener is gzip.open else raw_fh
        for idx, y in zip(active, labels):
            feats = " ".join(f"{k + 1}:1" for k in sorted(idx))
            fh.write(f"{y:+d} {feats}\n".encode())
        if fh is not raw_fh:
            fh.close()
    print(f"wrote {len(labels)} rows, d=123 -> {args.output}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
