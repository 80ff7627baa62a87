"""Shared plumbing for the experiment scripts: load a config, apply overrides, run."""
from __future__ import annotations

import argparse
import csv
import sys
import time
from pathlib import Path

from aoi_eh.cli import cmd_cycles, cmd_paired, cmd_run, load_config

ROOT = Path(__file__).resolve().parents[1]


def parser(desc: str, default_cfg: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=desc)
    ap.add_argument("--config", default=str(ROOT / "configs" / default_cfg))
    ap.add_argument("--out", default=None, help="output directory (default results/<name>)")
    ap.add_argument("--paths", type=int, default=None, help="override n_paths (e.g. 20 for a quick look)")
    ap.add_argument("--T", type=float, default=None, help="override the horizon")
    ap.add_argument("--workers", type=int, default=1)
    return ap


def load(args):
    exp = load_config(args.config)
    if args.paths is not None:
        exp.settings["n_paths"] = args.paths
    if args.T is not None:
        exp.settings["horizon_T"] = args.T
    out = Path(args.out or ROOT / "results" / exp.settings.get("name", "experiment"))
    return exp, out


def print_tsv(path: Path, cols=None) -> None:
    with open(path) as fp:
        rows = list(csv.reader(fp, delimiter="\t"))
    idx = range(len(rows[0])) if cols is None else [rows[0].index(c) for c in cols]
    for r in rows:
        print("  ".join(f"{r[i]:>14.14}" for i in idx))


def run(kind: str, desc: str, default_cfg: str, cols=None) -> None:
    args = parser(desc, default_cfg).parse_args()
    exp, out = load(args)
    t = time.perf_counter()
    if kind == "run":
        code = cmd_run(exp, out, workers=args.workers)
        table = out / "summary.tsv"
    elif kind == "paired":
        code = cmd_paired(exp, out)
        table = None
    else:
        code = cmd_cycles(exp, out, workers=args.workers)
        table = out / "cycles.tsv"
    if table is not None:
        print_tsv(table, cols)
    print(f"wrote {out} in {time.perf_counter() - t:.1f}s (exit {code})")
    sys.exit(code)
