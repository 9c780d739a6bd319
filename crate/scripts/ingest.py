#!/usr/bin/env python3
"""Convert a raw series file into the `t,y` CSV layout the runner expects.

Accepts delimited text (comma/semicolon/tab/whitespace, sniffed) or the
JSON layout used by some public change-point archives (`{"time": {...},
"series": [{"label": ..., "raw": [...]}]}`). Rows with missing values are
dropped. The output always has a `t` column (original time stamps, or a
1-based index with --index-time) and a `y` column.

Examples:
    python scripts/ingest.py raw/nile.csv -o data/nile.csv
    python scripts/ingest.py raw/mcycle.csv --time-col times --value-col accel \
        --collapse-duplicates -o data/motorcycle.csv
    python scripts/ingest.py raw/brent.json --take-last 100 -o data/brent.csv
"""

import argparse
import csv
import json
import sys
from pathlib import Path


def read_json_series(path, series_label):
    doc = json.loads(path.read_text())
    series = doc.get("series", [])
    if not series:
        sys.exit(f"{path}: no series entries")
    if series_label is None:
        chosen = series[0]
    else:
        matches = [s for s in series if s.get("label") == series_label]
        if not matches:
            labels = ", ".join(repr(s.get("label")) for s in series)
            sys.exit(f"{path}: no series labelled {series_label!r} (have: {labels})")
        chosen = matches[0]
    values = chosen.get("raw", [])
    time = doc.get("time", {})
    stamps = time.get("raw") or time.get("index") or list(range(1, len(values) + 1))
    return list(zip(stamps, values))


def sniff_delimiter(sample):
    try:
        return csv.Sniffer().sniff(sample, delimiters=",;\t| ").delimiter
    except csv.Error:
        return None  # fall back to arbitrary whitespace


def read_table(path, time_col, value_col):
    text = path.read_text()
    delim = sniff_delimiter(text[:4096])
    lines = [ln for ln in text.splitlines() if ln.strip()]
    split = (lambda ln: ln.split(delim)) if delim and delim != " " else str.split
    header = [h.strip().strip('"') for h in split(lines[0])]

    def column(name, default_idx):
        if name is None:
            return default_idx
        if name in header:
            return header.index(name)
        sys.exit(f"{path}: no column {name!r} (have: {', '.join(header)})")

    ti = column(time_col, 0)
    vi = column(value_col, 1 if len(header) > 1 else 0)

    # Tolerate headerless files: if the first row parses as numbers, keep it.
    def parse_row(fields):
        if max(ti, vi) >= len(fields):
            return None
        try:
            return float(fields[ti].strip().strip('"')), float(fields[vi].strip().strip('"'))
        except ValueError:
            return None

    first = parse_row([f for f in split(lines[0])])
    rows = [] if first is None else [first]
    for ln in lines[1:]:
        parsed = parse_row([f for f in split(ln)])
        if parsed is not None:
            rows.append(parsed)
    return rows


def collapse_duplicates(rows):
    """Average the values sharing a time stamp, keeping first-seen order."""
    order, sums, counts = [], {}, {}
    for t, v in rows:
        if t not in sums:
            order.append(t)
            sums[t] = 0.0
            counts[t] = 0
        sums[t] += v
        counts[t] += 1
    return [(t, sums[t] / counts[t]) for t in order]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("input", type=Path, help="raw series file (delimited text or JSON)")
    ap.add_argument("-o", "--out", type=Path, required=True, help="destination t,y CSV")
    ap.add_argument("--time-col", help="name of the time column (default: first)")
    ap.add_argument("--value-col", help="name of the value column (default: second)")
    ap.add_argument("--json-series", help="series label to pick from a JSON file")
    ap.add_argument(
        "--collapse-duplicates",
        action="store_true",
        help="average values that share a time stamp",
    )
    ap.add_argument("--take-first", type=int, metavar="N", help="keep only the first N rows")
    ap.add_argument("--take-last", type=int, metavar="N", help="keep only the last N rows")
    ap.add_argument(
        "--index-time",
        action="store_true",
        help="replace time stamps with a 1-based row index",
    )
    args = ap.parse_args()

    if args.input.suffix.lower() == ".json":
        rows = read_json_series(args.input, args.json_series)
        rows = [(t, v) for t, v in rows if v is not None]
    else:
        rows = read_table(args.input, args.time_col, args.value_col)
    if not rows:
        sys.exit(f"{args.input}: no usable rows")

    if args.collapse_duplicates:
        rows = collapse_duplicates(rows)
    if args.take_first is not None:
        rows = rows[: args.take_first]
    if args.take_last is not None:
        rows = rows[-args.take_last :]
    if args.index_time:
        rows = [(i + 1, v) for i, (_, v) in enumerate(rows)]

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "y"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
