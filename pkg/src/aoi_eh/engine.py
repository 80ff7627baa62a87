"""Path simulation, ensembles, paired (common random number) runs and cycle statistics."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from . import kernels as K
from .model import (
    EventKind,
    InvariantViolation,
    Outcome,
    SimConfig,
    UpdateRecord,
    area_from_success_times,
)
from .policies import PolicyKind, PolicyState, Stage
from .streams import RandomStreams

AREA_RTOL = 1e-9

_GRID_CODES = {
    PolicyKind.BU: K.GRID_BU,
    PolicyKind.BUR: K.GRID_BUR,
    PolicyKind.BU_ER: K.GRID_BU_ER,
    PolicyKind.BUR_ER: K.GRID_BUR_ER,
}
_KINDS = [EventKind.ARRIVAL, EventKind.ATTEMPT, EventKind.DEPLETE, EventKind.RESET]
_OUTCOMES = [Outcome.SUCCESS, Outcome.ERASED, Outcome.SKIPPED_NO_ENERGY]


def checkpoint_times(T: float, n: int = 32) -> np.ndarray:
    """Geometrically spaced checkpoints from ``T / 1000`` to ``T`` (inclusive)."""
    if n == 1:
        return np.array([float(T)])
    cps = np.geomspace(T / 1000.0, T, n)
    cps[-1] = T
    return cps


# ---------------------------------------------------------------------------
# traces


@dataclass
class Trace:
    """Column view of a path's event log, in reported time units."""

    time: np.ndarray
    kind: np.ndarray  # EventKind index
    epoch: np.ndarray
    attempt: np.ndarray
    outcome: np.ndarray  # Outcome index, -1 for non-attempt events
    battery: np.ndarray
    E0: int

    @classmethod
    def from_table(cls, table: np.ndarray, E0: int, scale: float) -> "Trace":
        return cls(
            time=table[:, 0] * scale,
            kind=table[:, 1].astype(np.int8),
            epoch=table[:, 2].astype(np.int64),
            attempt=table[:, 3].astype(np.int64),
            outcome=table[:, 4].astype(np.int8),
            battery=table[:, 5].astype(np.int64),
            E0=E0,
        )

    def __len__(self) -> int:
        return self.time.shape[0]

    def records(self) -> list[UpdateRecord]:
        out = []
        for t, k, e, a, o, b in zip(self.time, self.kind, self.epoch, self.attempt,
                                    self.outcome, self.battery):
            out.append(UpdateRecord(
                time=float(t),
                epoch_index=int(e),
                attempt_index=int(a),
                outcome=None if o < 0 else _OUTCOMES[o],
                battery_after=int(b),
                kind=_KINDS[k],
            ))
        return out

    @property
    def attempt_mask(self) -> np.ndarray:
        return self.kind == K.KIND_ATTEMPT

    @property
    def success_mask(self) -> np.ndarray:
        return self.attempt_mask & (self.outcome == K.OUT_SUCCESS)

    def write_jsonl(self, fp: IO[str]) -> None:
        for rec in self.records():
            fp.write(json.dumps(rec.to_dict()) + "\n")

    def state_after(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Last success instant and battery level after every event at or before each time."""
        times = np.asarray(times, dtype=float)
        if not len(self):
            return np.zeros_like(times), np.full(times.shape, self.E0, dtype=np.int64)
        last = np.maximum.accumulate(np.where(self.success_mask, self.time, 0.0))
        idx = np.searchsorted(self.time, times, side="right") - 1
        has = idx >= 0
        safe = np.maximum(idx, 0)
        return np.where(has, last[safe], 0.0), np.where(has, self.battery[safe], self.E0)


def check_trace(trace: Trace) -> None:
    """Replay the battery along a trace and check every causality rule.

    Independent of the kernels: battery levels are rebuilt from the event
    kinds alone and compared with the logged values.
    """
    battery = trace.E0
    prev_t = -math.inf
    for rec in trace.records():
        if rec.time < prev_t:
            raise InvariantViolation(f"trace out of order at t={rec.time}")
        prev_t = rec.time
        if rec.kind is EventKind.ARRIVAL:
            battery += 1
        elif rec.kind is EventKind.ATTEMPT:
            if rec.outcome is Outcome.SKIPPED_NO_ENERGY:
                if battery != 0:
                    raise InvariantViolation(f"skipped with energy {battery} at t={rec.time}")
            else:
                if battery < 1:
                    raise InvariantViolation(f"attempt on empty battery at t={rec.time}")
                battery -= 1
        elif rec.kind is EventKind.DEPLETE:
            battery = 0
        elif rec.kind is EventKind.RESET:
            if battery < 1:
                raise InvariantViolation(f"cycle reset with empty battery at t={rec.time}")
            battery = 1
        if battery != rec.battery_after:
            raise InvariantViolation(
                f"battery replay {battery} != logged {rec.battery_after} at t={rec.time}")


# ---------------------------------------------------------------------------
# per-path results


@dataclass(frozen=True)
class CycleStats:
    t1: float
    t2: float
    residual: float
    completed: bool
    stage2_epochs: int = -1
    origin: float = 0.0


@dataclass
class PathResult:
    path_index: int
    avg_aoi: float
    n_success: int
    n_attempts: int
    n_arrivals: int
    area: float
    area_incremental: float
    horizon: float
    checkpoints: np.ndarray
    convergence_series: np.ndarray
    final_battery: int
    final_state: PolicyState
    cycles: list[CycleStats] = field(default_factory=list)
    success_times: Optional[np.ndarray] = None
    trace: Optional[Trace] = None


def _grid_epochs(horizon: float, rate: float) -> int:
    n = int(math.floor(horizon * rate))
    while (n + 1) / rate <= horizon:
        n += 1
    while n > 0 and n / rate > horizon:
        n -= 1
    return n


def run_path(config: SimConfig, path_index: int) -> PathResult:
    """Simulate one sample path; a pure function of ``(config, path_index)``."""
    H = config.internal_horizon
    scale = 1.0 / config.lam
    kind = config.policy.kind
    streams = RandomStreams(config.seed, path_index, config.p)
    arrivals = streams.arrival_times(H)
    n_arr = arrivals.shape[0]
    cps = checkpoint_times(config.horizon_T, config.n_checkpoints) * config.lam
    cps[-1] = H
    series = np.full(cps.shape[0], np.nan)
    E0 = int(config.E0)
    cycles = np.zeros((0, 6))
    final = np.zeros(3)

    trace_cap = 0
    while True:
        fs, st = K._new_state(E0)
        if kind in _GRID_CODES:
            rate = config.p if kind in (PolicyKind.BUR, PolicyKind.BUR_ER) else 1.0
            n_ep = _grid_epochs(H, rate)
            g = streams.channel.table(n_ep)
            if config.record_trace and not trace_cap:
                attempts_bound = min(E0 + n_arr, int(g.sum()))
                trace_cap = n_arr + attempts_bound + 3 * n_ep + 16
            succ = np.zeros(max(n_ep, 1))
            trace = np.zeros((trace_cap, 6))
            cycles = np.zeros((n_ep + 2, 6))
            T0 = config.internal_T0 if config.internal_T0 is not None else math.inf
            K.run_grid(_GRID_CODES[kind], rate, n_ep, arrivals, g, H, T0,
                       cps, series, succ, trace, cycles, fs, st, final)
            next_index = n_ep + 1
        elif kind is PolicyKind.GREEDY:
            g = streams.channel.table(n_arr)
            if config.record_trace and not trace_cap:
                trace_cap = 2 * n_arr + 16
            succ = np.zeros(max(n_arr, 1))
            trace = np.zeros((trace_cap, 6))
            K.run_greedy(arrivals, g, H, cps, series, succ, trace, fs, st)
            next_index = n_arr + 1
        else:
            sp = config.policy.renewal_spacings.scaled(config.lam)
            bound = E0 + n_arr + 1
            g = streams.channel.table(bound)
            if config.record_trace and not trace_cap:
                trace_cap = 3 * n_arr + E0 + 1024
            succ = np.zeros(bound)
            trace = np.zeros((trace_cap, 6))
            K.run_renewal(np.asarray(sp.prefix), sp.tail_step, arrivals, g, H, cps,
                          series, succ, trace, fs, st, final)
        if st[K.STATUS] == K.STATUS_TRACE_FULL:
            trace_cap *= 2
            continue
        break

    if st[K.STATUS] == K.STATUS_CAUSALITY:
        raise InvariantViolation(
            f"path {path_index}: energy causality violated near t={fs[K.CLOCK] * scale}")

    n_succ = int(st[K.NSUCC])
    n_att = int(st[K.NATT])
    success_times = succ[:n_succ]
    last = fs[K.LAST]
    area_closed = 0.5 * ((fs[K.SQ] + fs[K.SQ_C]) + (H - last) ** 2)
    area_inc = fs[K.AREA] + fs[K.AREA_C]
    area_direct = area_from_success_times(success_times, H)
    for name, other in (("integrated", area_inc), ("recomputed", area_direct)):
        if not math.isclose(area_closed, other, rel_tol=AREA_RTOL):
            raise InvariantViolation(
                f"path {path_index}: AoI area {area_closed!r} disagrees with {name} {other!r}")
    if not n_succ <= n_att <= E0 + n_arr:
        raise InvariantViolation(
            f"path {path_index}: counters out of range (N={n_succ}, M={n_att}, energy={E0 + n_arr})")
    if np.isnan(series).any():
        raise InvariantViolation(f"path {path_index}: checkpoint left unevaluated")

    cyc = [
        CycleStats(
            t1=row[K.CYC_T1] * scale,
            t2=row[K.CYC_T2] * scale,
            residual=row[K.CYC_RESIDUAL] * scale,
            completed=bool(row[K.CYC_COMPLETED]),
            stage2_epochs=int(row[K.CYC_STAGE2_EPOCHS]),
            origin=row[K.CYC_ORIGIN] * scale,
        )
        for row in cycles[: st[K.NCYC]]
    ]
    if kind.is_energy_removal:
        state = PolicyState(next_epoch_index=next_index, cycle_origin=final[1] * scale,
                            stage=Stage(int(final[0])))
    elif kind is PolicyKind.CONSTANT_RENEWAL:
        state = PolicyState(next_epoch_index=int(final[2]), cycle_origin=last * scale,
                            retransmission_count=int(final[1]))
    else:
        state = PolicyState(next_epoch_index=next_index)

    return PathResult(
        path_index=path_index,
        avg_aoi=area_closed / H * scale,
        n_success=n_succ,
        n_attempts=n_att,
        n_arrivals=n_arr,
        area=area_closed * scale * scale,
        area_incremental=area_inc * scale * scale,
        horizon=config.horizon_T,
        checkpoints=cps * scale,
        convergence_series=series * scale,
        final_battery=int(st[K.BATT]),
        final_state=state,
        cycles=cyc,
        success_times=success_times * scale if config.record_trace else None,
        trace=Trace.from_table(trace[: st[K.NTR]], E0, scale) if config.record_trace else None,
    )


# ---------------------------------------------------------------------------
# cycles


def extract_cycles(trace: Trace, policy_kind: PolicyKind) -> list[CycleStats]:
    """Rebuild the renewal cycles of an energy-removal run from its trace alone."""
    if not policy_kind.is_energy_removal:
        raise ValueError(f"{policy_kind.value} has no energy-removal cycles")
    out = []
    origin = 0.0
    last_s = 0.0
    stage = 1
    t1 = residual = boundary = math.nan
    boundary_epoch = 0
    for rec in trace.records():
        if rec.kind is EventKind.ATTEMPT and rec.outcome is Outcome.SUCCESS:
            last_s = rec.time
        if stage == 1:
            hit = (rec.kind is EventKind.ATTEMPT and rec.outcome is not Outcome.SKIPPED_NO_ENERGY
                   and rec.battery_after == 0)
            if hit or rec.kind is EventKind.DEPLETE:
                stage = 2
                boundary = rec.time
                boundary_epoch = rec.epoch_index
                t1 = rec.time - origin
                residual = rec.time - last_s
        elif rec.kind is EventKind.RESET:
            out.append(CycleStats(t1=t1, t2=rec.time - boundary, residual=residual, completed=True,
                                  stage2_epochs=rec.epoch_index - boundary_epoch, origin=origin))
            origin = rec.time
            stage = 1
            t1 = residual = boundary = math.nan
    out.append(CycleStats(t1=t1, t2=math.nan, residual=residual, completed=False,
                          stage2_epochs=-1, origin=origin))
    return out


# ---------------------------------------------------------------------------
# ensembles

_CYCLE_COLUMNS = ("path", "t1", "t2", "residual", "stage2_epochs", "completed", "origin")


@dataclass
class EnsembleSummary:
    """Per-path values kept in path-index order; all statistics derive from them."""

    config: SimConfig
    path_indices: np.ndarray
    avg_aoi: np.ndarray
    checkpoints: np.ndarray
    series: np.ndarray  # (n_paths, n_checkpoints)
    n_success: np.ndarray
    n_attempts: np.ndarray
    n_arrivals: np.ndarray
    cycle_table: np.ndarray  # columns: _CYCLE_COLUMNS

    @classmethod
    def from_results(cls, config: SimConfig, results: Sequence[PathResult]) -> "EnsembleSummary":
        results = sorted(results, key=lambda r: r.path_index)
        rows = [
            (r.path_index, c.t1, c.t2, c.residual, c.stage2_epochs, float(c.completed), c.origin)
            for r in results for c in r.cycles
        ]
        return cls(
            config=config,
            path_indices=np.array([r.path_index for r in results], dtype=np.int64),
            avg_aoi=np.array([r.avg_aoi for r in results]),
            checkpoints=results[0].checkpoints.copy(),
            series=np.vstack([r.convergence_series for r in results]),
            n_success=np.array([r.n_success for r in results], dtype=np.int64),
            n_attempts=np.array([r.n_attempts for r in results], dtype=np.int64),
            n_arrivals=np.array([r.n_arrivals for r in results], dtype=np.int64),
            cycle_table=np.array(rows, dtype=float).reshape(-1, len(_CYCLE_COLUMNS)),
        )

    @property
    def n_paths(self) -> int:
        return int(self.path_indices.shape[0])

    @property
    def mean(self) -> float:
        return float(np.mean(self.avg_aoi))

    @property
    def stderr(self) -> float:
        return _stderr(self.avg_aoi)

    def percentiles(self, q: Iterable[float] = (5, 50, 95)) -> np.ndarray:
        return np.percentile(self.avg_aoi, list(q))

    @property
    def series_mean(self) -> np.ndarray:
        return self.series.mean(axis=0)

    @property
    def series_stderr(self) -> np.ndarray:
        if self.n_paths < 2:
            return np.full(self.series.shape[1], np.nan)
        return self.series.std(axis=0, ddof=1) / math.sqrt(self.n_paths)

    def series_percentiles(self, q: Iterable[float] = (5, 50, 95)) -> np.ndarray:
        return np.percentile(self.series, list(q), axis=0)

    def cycles(self, completed_only: bool = True) -> np.ndarray:
        tab = self.cycle_table
        if completed_only:
            tab = tab[tab[:, 5] == 1.0]
        return tab

    def merge(self, other: "EnsembleSummary") -> "EnsembleSummary":
        """Combine disjoint path sets of the same experiment."""
        if replace(self.config, n_paths=1) != replace(other.config, n_paths=1):
            raise ValueError("cannot merge ensembles of different configurations")
        if np.intersect1d(self.path_indices, other.path_indices).size:
            raise ValueError("ensembles share path indices")
        idx = np.concatenate([self.path_indices, other.path_indices])
        order = np.argsort(idx, kind="stable")
        cyc = np.vstack([self.cycle_table, other.cycle_table])
        cyc = cyc[np.argsort(cyc[:, 0], kind="stable")]
        cat = lambda a, b: np.concatenate([a, b])[order]  # noqa: E731
        return EnsembleSummary(
            config=replace(self.config, n_paths=self.n_paths + other.n_paths),
            path_indices=idx[order],
            avg_aoi=cat(self.avg_aoi, other.avg_aoi),
            checkpoints=self.checkpoints,
            series=np.vstack([self.series, other.series])[order],
            n_success=cat(self.n_success, other.n_success),
            n_attempts=cat(self.n_attempts, other.n_attempts),
            n_arrivals=cat(self.n_arrivals, other.n_arrivals),
            cycle_table=cyc,
        )


def _stderr(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return math.nan
    return float(np.std(x, ddof=1) / math.sqrt(x.shape[0]))


def _run_chunk(config: SimConfig, indices: Sequence[int]) -> list[PathResult]:
    return [run_path(config, i) for i in indices]


def run_ensemble(config: SimConfig, workers: int = 1, path_offset: int = 0) -> EnsembleSummary:
    """Run paths ``path_offset .. path_offset + n_paths - 1`` and summarize them.

    The summary is identical for any ``workers`` value.
    """
    cfg = replace(config, record_trace=False)
    indices = list(range(path_offset, path_offset + config.n_paths))
    if workers <= 1 or len(indices) == 1:
        results = _run_chunk(cfg, indices)
    else:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [cfg] * len(chunks), chunks)
            results = [r for part in parts for r in part]
    return EnsembleSummary.from_results(config, results)


# ---------------------------------------------------------------------------
# paired runs

_PARENT = {PolicyKind.BU_ER: PolicyKind.BU, PolicyKind.BUR_ER: PolicyKind.BUR}


@dataclass
class PairedReport:
    """Path-wise comparison of a variant policy against its parent under common randomness."""

    parent: str
    variant: str
    path_indices: np.ndarray
    n_compared: np.ndarray
    aoi_violations: np.ndarray
    battery_violations: np.ndarray
    first_violation_time: np.ndarray
    avg_aoi_parent: np.ndarray
    avg_aoi_variant: np.ndarray
    identical: np.ndarray

    @property
    def total_aoi_violations(self) -> int:
        return int(self.aoi_violations.sum())

    @property
    def total_battery_violations(self) -> int:
        return int(self.battery_violations.sum())

    @property
    def gap(self) -> np.ndarray:
        return self.avg_aoi_variant - self.avg_aoi_parent

    @property
    def mean_gap(self) -> float:
        return float(self.gap.mean())

    @property
    def gap_stderr(self) -> float:
        return _stderr(self.gap)


def _check_pair(a: SimConfig, b: SimConfig) -> None:
    base_a = replace(a, policy=b.policy, feedback=None, record_trace=False)
    base_b = replace(b, feedback=None, record_trace=False)
    if base_a != base_b:
        raise ValueError("paired configs may differ only in policy")
    ka, kb = a.policy.kind, b.policy.kind
    if a.policy == b.policy:
        return
    if _PARENT.get(kb) is not ka:
        raise ValueError(f"{b.policy.label} is not an energy-removal variant of {a.policy.label}")


def compare_paths(parent: PathResult, variant: PathResult) -> tuple[int, int, int, float, bool]:
    """Count instants where the variant's age is below, or its battery above, the parent's."""
    ta, tb = parent.trace, variant.trace
    times = np.union1d(ta.time, tb.time)
    sa, ba = ta.state_after(times)
    sb, bb = tb.state_after(times)
    aoi_bad = (times - sb) < (times - sa)
    batt_bad = bb > ba
    bad = aoi_bad | batt_bad
    first = float(times[np.argmax(bad)]) if bad.any() else math.nan
    same = (len(ta) == len(tb) and np.array_equal(ta.time, tb.time)
            and np.array_equal(ta.battery, tb.battery) and np.array_equal(ta.outcome, tb.outcome))
    return times.shape[0], int(aoi_bad.sum()), int(batt_bad.sum()), first, bool(same)


def run_paired(parent: SimConfig, variant: SimConfig, path_offset: int = 0) -> PairedReport:
    _check_pair(parent, variant)
    pa = replace(parent, record_trace=True)
    pb = replace(variant, record_trace=True)
    cols = {k: [] for k in ("idx", "n", "aoi", "bat", "first", "ra", "rb", "same")}
    for i in range(path_offset, path_offset + parent.n_paths):
        ra = run_path(pa, i)
        rb = run_path(pb, i)
        n, aoi_bad, bat_bad, first, same = compare_paths(ra, rb)
        for key, val in zip(cols, (i, n, aoi_bad, bat_bad, first, ra.avg_aoi, rb.avg_aoi, same)):
            cols[key].append(val)
    return PairedReport(
        parent=parent.policy.label,
        variant=variant.policy.label,
        path_indices=np.array(cols["idx"]),
        n_compared=np.array(cols["n"]),
        aoi_violations=np.array(cols["aoi"]),
        battery_violations=np.array(cols["bat"]),
        first_violation_time=np.array(cols["first"]),
        avg_aoi_parent=np.array(cols["ra"]),
        avg_aoi_variant=np.array(cols["rb"]),
        identical=np.array(cols["same"]),
    )
