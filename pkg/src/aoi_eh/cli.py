"""Command-line experiment driver.

Config files are flat ``key = value`` lines; ``#`` starts a comment. Repeating
``policy``, ``p`` or ``T0`` turns that key into a sweep axis. Example::

    policy = BU
    p = 0.2
    p = 0.6
    p = 1.0
    horizon_T = 100000
    n_paths = 200
    seed = 7

Exit codes: 0 ok, 1 config or I/O error, 2 invariant violation during
simulation, 3 acceptance threshold missed (bound check, dominance check).
"""
from __future__ import annotations

import argparse
import csv
import itertools
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .analysis import (
    bu_er_stage2_mean_cap,
    bur_er_stage2_exit_prob,
    compare_to_bound,
    cycle_statistics,
    lb_feedback,
    lb_no_feedback,
)
from .engine import _PARENT, run_ensemble, run_paired, run_path
from .model import ConfigError, InvariantViolation, SimConfig
from .policies import PolicyKind, PolicySpec, Spacings

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_THRESHOLD = 0, 1, 2, 3

SWEEP_KEYS = ("policy", "p", "T0")
SCALAR_KEYS = {
    "horizon_T": float,
    "lam": float,
    "E0": int,
    "n_paths": int,
    "seed": int,
    "n_checkpoints": int,
    "record_trace": lambda s: _parse_bool(s),
    "spacings": str,
    "spacing_tail": float,
    "name": str,
}
ALIASES = {"T": "horizon_T", "lambda": "lam", "horizon": "horizon_T"}
IGNORED_KEYS = ("code_version",)
DEFAULTS = {
    "lam": 1.0,
    "E0": 1,
    "n_paths": 200,
    "seed": 0,
    "n_checkpoints": 32,
    "record_trace": False,
    "spacing_tail": 0.0,
    "name": "experiment",
}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class ExperimentConfig:
    """One base configuration plus sweep axes."""

    settings: dict = field(default_factory=dict)
    policies: list = field(default_factory=list)
    ps: list = field(default_factory=list)
    T0s: list = field(default_factory=list)

    def _spacings(self) -> Optional[Spacings]:
        text = self.settings.get("spacings")
        if text is None:
            return None
        try:
            prefix = tuple(float(v) for v in text.replace(",", " ").split())
            return Spacings(prefix, float(self.settings.get("spacing_tail", 0.0)))
        except ValueError as exc:
            raise ConfigError("spacings", str(exc)) from None

    def cells(self) -> list[SimConfig]:
        """Every sweep point as a validated ``SimConfig``."""
        if not self.policies:
            raise ConfigError("policy", "at least one policy is required")
        if not self.ps:
            raise ConfigError("p", "at least one success probability is required")
        if "horizon_T" not in self.settings:
            raise ConfigError("horizon_T", "missing")
        s = {**DEFAULTS, **self.settings}
        out = []
        for kind, p in itertools.product(self.policies, self.ps):
            if kind.is_energy_removal:
                if not self.T0s:
                    raise ConfigError("T0", f"{kind.value} needs T0")
                specs = [PolicySpec(kind, T0=t0) for t0 in self.T0s]
            elif kind is PolicyKind.CONSTANT_RENEWAL:
                sp = self._spacings()
                if sp is None:
                    raise ConfigError("spacings", "ConstantRenewal needs spacings")
                specs = [PolicySpec(kind, renewal_spacings=sp)]
            else:
                specs = [PolicySpec(kind)]
            for spec in specs:
                out.append(SimConfig(
                    p=p,
                    horizon_T=s["horizon_T"],
                    policy=spec,
                    lam=s["lam"],
                    E0=s["E0"],
                    n_paths=s["n_paths"],
                    seed=s["seed"],
                    record_trace=s["record_trace"],
                    n_checkpoints=s["n_checkpoints"],
                ))
        return out

    def to_text(self) -> str:
        """Resolved configuration in the input format (the run manifest)."""
        s = {**DEFAULTS, **self.settings}
        lines = [f"code_version = {__version__}"]
        lines += [f"policy = {k.value}" for k in self.policies]
        lines += [f"p = {p!r}" for p in self.ps]
        lines += [f"T0 = {t!r}" for t in self.T0s]
        for key in SCALAR_KEYS:
            if key in s:
                val = s[key]
                lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = ALIASES.get(key, key)
        try:
            if key == "policy":
                cfg.policies.append(PolicyKind.parse(value))
            elif key == "p":
                cfg.ps.append(float(value))
            elif key == "T0":
                cfg.T0s.append(float(value))
            elif key in SCALAR_KEYS:
                if key in cfg.settings:
                    raise ConfigError(key, "only policy, p and T0 may be repeated")
                cfg.settings[key] = SCALAR_KEYS[key](value)
            elif key in IGNORED_KEYS:
                continue
            else:
                raise ConfigError(key, "unknown key")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    try:
        cfg.cells()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("policy", str(exc)) from None
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# output


def cell_label(cfg: SimConfig) -> str:
    return f"{cfg.policy.label}_p{cfg.p:g}"


def _write_tsv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


CURVE_HEADER = ("t", "mean", "stderr", "p05", "p50", "p95", "bound", "gap")
SUMMARY_HEADER = ("policy", "T0", "p", "lam", "horizon_T", "n_paths", "mean", "stderr",
                  "p05", "p50", "p95", "bound", "gap", "checkpoints_below_bound")


def cmd_run(exp: ExperimentConfig, out: Path, workers: int = 1, trace: bool = False) -> int:
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(exp.to_text())
    summary_rows = []
    long_rows = []
    failed = False
    for cfg in exp.cells():
        summ = run_ensemble(cfg, workers=workers)
        rep = compare_to_bound(summ)
        band = summ.series_percentiles((5, 50, 95))
        curve = [
            (float(t), float(m), float(se), float(a), float(b), float(c), rep.bound, float(g))
            for t, m, se, a, b, c, g in zip(summ.checkpoints, summ.series_mean, summ.series_stderr,
                                            band[0], band[1], band[2], rep.gap_series)
        ]
        label = cell_label(cfg)
        _write_tsv(out / f"curve_{label}.tsv", CURVE_HEADER, curve)
        t0 = "" if cfg.T0 is None else cfg.T0
        for row in curve:
            long_rows.append((cfg.policy.kind.value, t0, cfg.p) + row)
        pct = summ.percentiles((5, 50, 95))
        summary_rows.append((cfg.policy.kind.value, t0, cfg.p, cfg.lam, cfg.horizon_T, summ.n_paths,
                             summ.mean, summ.stderr, *map(float, pct), rep.bound, rep.gap,
                             int(rep.below_bound.size)))
        failed |= not rep.ok
        if trace:
            res = run_path(replace(cfg, record_trace=True), 0)
            with open(out / f"trace_{label}_path0.jsonl", "w") as fp:
                res.trace.write_jsonl(fp)
    _write_tsv(out / "curves.tsv", ("policy", "T0", "p") + CURVE_HEADER, long_rows)
    _write_tsv(out / "summary.tsv", SUMMARY_HEADER, summary_rows)
    return EXIT_THRESHOLD if failed else EXIT_OK


def bounds_table(ps: Sequence[float]) -> list[tuple[float, float, float]]:
    return [(float(p), lb_no_feedback(p), lb_feedback(p)) for p in ps]


def cmd_bounds(ps: Sequence[float], out: Optional[Path] = None) -> int:
    rows = bounds_table(ps)
    header = ("p", "bound_no_feedback", "bound_feedback")
    if out is None:
        w = csv.writer(sys.stdout, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_tsv(out, header, rows)
    return EXIT_OK


PAIRED_HEADER = ("parent", "variant", "p", "path", "n_compared", "aoi_violations",
                 "battery_violations", "first_violation_time", "avg_aoi_parent",
                 "avg_aoi_variant", "gap")


def cmd_paired(exp: ExperimentConfig, out: Path, parent: Optional[PolicyKind] = None) -> int:
    cells = [c for c in exp.cells() if c.policy.kind.is_energy_removal]
    if not cells:
        raise ConfigError("policy", "paired runs need an energy-removal policy (BU_ER or BUR_ER)")
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(exp.to_text())
    rows = []
    total = 0
    for var in cells:
        kind = parent or _PARENT[var.policy.kind]
        try:
            par = replace(var, policy=PolicySpec(kind), feedback=None)
            rep = run_paired(par, var)
        except ValueError as exc:
            raise ConfigError("policy", str(exc)) from None
        total += rep.total_aoi_violations + rep.total_battery_violations
        for i in range(rep.path_indices.shape[0]):
            rows.append((rep.parent, rep.variant, var.p, int(rep.path_indices[i]),
                         int(rep.n_compared[i]), int(rep.aoi_violations[i]),
                         int(rep.battery_violations[i]), float(rep.first_violation_time[i]),
                         float(rep.avg_aoi_parent[i]), float(rep.avg_aoi_variant[i]),
                         float(rep.gap[i])))
        print(f"{rep.variant} vs {rep.parent} p={var.p:g}: aoi violations {rep.total_aoi_violations}, "
              f"battery violations {rep.total_battery_violations}, "
              f"mean gap {rep.mean_gap:.5g} +- {rep.gap_stderr:.2g}")
    _write_tsv(out / "paired.tsv", PAIRED_HEADER, rows)
    return EXIT_THRESHOLD if total else EXIT_OK


CYCLE_KEYS = ("n_cycles", "t1_mean", "t1_se", "t1_m2", "t2_mean", "t2_se", "t2_m2",
              "residual_mean", "residual_se", "residual_m2", "stage2_epochs_mean",
              "stage2_epochs_se", "geom_relation", "geom_relation_se")


def cmd_cycles(exp: ExperimentConfig, out: Path, workers: int = 1) -> int:
    cells = exp.cells()
    bad = [c.policy.label for c in cells if not c.policy.kind.is_energy_removal]
    if bad:
        raise ConfigError("policy", f"cycle statistics need energy-removal policies, got {bad}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(exp.to_text())
    rows = []
    for cfg in cells:
        summ = run_ensemble(cfg, workers=workers)
        stats = cycle_statistics(summ.cycle_table)
        if cfg.policy.kind is PolicyKind.BUR_ER:
            ref_name, ref = "stage2_epochs_theory", 1.0 / bur_er_stage2_exit_prob(cfg.p)
        else:
            ref_name, ref = "t2_mean_cap", bu_er_stage2_mean_cap(cfg.p) / cfg.lam
        rows.append((cfg.policy.kind.value, cfg.p, cfg.T0)
                    + tuple(stats.get(k, math.nan) for k in CYCLE_KEYS) + (ref_name, ref))
    _write_tsv(out / "cycles.tsv", ("policy", "p", "T0") + CYCLE_KEYS + ("reference", "reference_value"),
               rows)
    return EXIT_OK


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aoi-eh", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        if needs_config:
            sp.add_argument("--config", "-c", required=True, help="experiment config file")
        sp.add_argument("--out", "-o", default="results", help="output directory")
        sp.add_argument("--workers", "-j", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        sp.add_argument("--checkpoints", type=int, default=None, help="number of convergence checkpoints")
        sp.add_argument("--paths", type=int, default=None, help="override n_paths")

    run = sub.add_parser("run", help="ensemble runs over the config's sweep grid")
    common(run)
    run.add_argument("--trace", action="store_true", help="also dump the event trace of path 0 per cell")
    run.add_argument("--check-bound", action="store_true",
                     help="exit 3 if any checkpoint mean is significantly below the lower bound")

    b = sub.add_parser("bounds", help="print the closed-form lower bounds")
    b.add_argument("--p", type=float, action="append", required=True, help="success probability (repeatable)")
    b.add_argument("--out", "-o", default=None, help="write the table here instead of stdout")

    pr = sub.add_parser("paired", help="common-random-number dominance check against the parent policy")
    common(pr)
    pr.add_argument("--parent", default=None, help="parent policy (default: BU for BU_ER, BUR for BUR_ER)")

    cy = sub.add_parser("cycles", help="renewal-cycle statistics for energy-removal policies")
    common(cy)
    return ap


def _apply_overrides(exp: ExperimentConfig, args) -> ExperimentConfig:
    for flag, key in (("seed", "seed"), ("checkpoints", "n_checkpoints"), ("paths", "n_paths")):
        val = getattr(args, flag, None)
        if val is not None:
            exp.settings[key] = val
    exp.cells()
    return exp


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "bounds":
            for p in args.p:
                if not 0 < p <= 1:
                    raise ConfigError("p", f"must satisfy 0 < p <= 1, got {p}")
            return cmd_bounds(args.p, Path(args.out) if args.out else None)
        exp = _apply_overrides(load_config(args.config), args)
        out = Path(args.out)
        if args.command == "run":
            code = cmd_run(exp, out, workers=args.workers, trace=args.trace)
            return code if args.check_bound else EXIT_OK
        if args.command == "paired":
            parent = PolicyKind.parse(args.parent) if args.parent else None
            return cmd_paired(exp, out, parent)
        return cmd_cycles(exp, out, workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
