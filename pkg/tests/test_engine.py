import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from aoi_eh import (
    InvariantViolation,
    PolicyKind,
    PolicySpec,
    SimConfig,
    Spacings,
    extract_cycles,
    run_ensemble,
    run_paired,
    run_path,
)
from aoi_eh.analysis import lb_no_feedback, moment_check
from aoi_eh.engine import check_trace, checkpoint_times
from aoi_eh.model import area_from_success_times


def cfg(kind, p=0.6, T=2000.0, T0=None, **kw):
    spacings = kw.pop("spacings", None)
    return SimConfig(p=p, horizon_T=T, policy=PolicySpec(kind, T0=T0, renewal_spacings=spacings), **kw)


ALL = [
    (PolicyKind.BU, None, None),
    (PolicyKind.BUR, None, None),
    (PolicyKind.GREEDY, None, None),
    (PolicyKind.BU_ER, 30.5, None),
    (PolicyKind.BUR_ER, 30.0, None),
    (PolicyKind.CONSTANT_RENEWAL, None, Spacings.constant(1 / 0.6)),
    (PolicyKind.CONSTANT_RENEWAL, None, Spacings.linear(1.0)),
    (PolicyKind.CONSTANT_RENEWAL, None, Spacings((0.5, 2.0, 2.5), 1.0)),
]


def test_checkpoints_end_at_horizon():
    c = checkpoint_times(1e5, 32)
    assert c.size == 32 and c[0] == 100.0 and c[-1] == 1e5
    assert np.all(np.diff(c) > 0)


@pytest.mark.parametrize("kind,T0,sp", ALL)
@pytest.mark.parametrize("p", [0.2, 0.6, 1.0])
def test_trace_replays_cleanly(kind, T0, sp, p):
    r = run_path(cfg(kind, p=p, T0=T0, spacings=sp, record_trace=True, seed=5), 3)
    check_trace(r.trace)
    assert r.n_success == int(r.trace.success_mask.sum())
    assert r.n_attempts == int((r.trace.attempt_mask & (r.trace.outcome != 2)).sum())
    assert math.isclose(area_from_success_times(r.success_times, r.horizon), r.area, rel_tol=1e-9)
    assert r.convergence_series[-1] == pytest.approx(r.avg_aoi, rel=1e-12)


def test_replay_catches_tampering():
    r = run_path(cfg(PolicyKind.BU, record_trace=True), 0)
    r.trace.battery[5] += 1
    with pytest.raises(InvariantViolation):
        check_trace(r.trace)


@pytest.mark.parametrize("kind,T0,sp", ALL)
def test_path_is_pure(kind, T0, sp):
    c = cfg(kind, T0=T0, spacings=sp, record_trace=True, seed=17)
    a, b = run_path(c, 4), run_path(c, 4)
    assert a.avg_aoi == b.avg_aoi
    assert np.array_equal(a.trace.time, b.trace.time)
    assert np.array_equal(a.convergence_series, b.convergence_series)


def test_trace_toggle_does_not_change_result():
    c = cfg(PolicyKind.BUR_ER, T0=50.0, seed=2)
    assert run_path(c, 1).avg_aoi == run_path(replace(c, record_trace=True), 1).avg_aoi


def test_perfect_channel_huge_reserve():
    # successes at 1..100, sawtooth of unit teeth: area 100 * 1/2
    r = run_path(cfg(PolicyKind.BU, p=1.0, T=100.0, E0=10 ** 6, record_trace=True), 0)
    assert np.array_equal(r.success_times, np.arange(1.0, 101.0))
    assert r.avg_aoi == 0.5


def test_skip_then_next_epoch():
    r = run_path(cfg(PolicyKind.BU, p=1.0, T=50.0, record_trace=True, seed=3), 0)
    recs = [x for x in r.trace.records() if x.kind.value == "attempt"]
    skipped = [x for x in recs if x.outcome.value == "SkippedNoEnergy"]
    assert skipped, "seed should produce at least one empty epoch"
    times = [x.time for x in recs]
    assert times == sorted(times) and times == [float(n) for n in range(1, 51)]


def test_bur_epochs_on_stretched_grid():
    r = run_path(cfg(PolicyKind.BUR, p=0.5, T=100.0, record_trace=True), 0)
    t = r.trace.time[r.trace.attempt_mask]
    assert set(np.unique(t)) <= {2.0 * n for n in range(1, 51)}


def test_greedy_attempts_at_arrivals():
    r = run_path(cfg(PolicyKind.GREEDY, record_trace=True), 0)
    tr = r.trace
    arr = tr.time[tr.kind == 0]
    att = tr.time[tr.attempt_mask]
    assert np.array_equal(arr, att)


def test_greedy_perfect_channel_poisson_oracle():
    s = run_ensemble(cfg(PolicyKind.GREEDY, p=1.0, T=2e4, n_paths=20, seed=1))
    assert abs(s.mean - 1.0) < 3 * s.stderr + 1e-3


def test_time_rescaling():
    base = run_path(cfg(PolicyKind.BU_ER, T=4000.0, T0=100.0, seed=9), 2)
    fast = run_path(cfg(PolicyKind.BU_ER, T=2000.0, T0=50.0, lam=2.0, seed=9), 2)
    assert fast.avg_aoi == pytest.approx(base.avg_aoi / 2, rel=1e-12)
    assert fast.n_success == base.n_success
    assert np.allclose(fast.checkpoints, base.checkpoints / 2)


def test_summary_of_one_path():
    c = cfg(PolicyKind.BUR, n_paths=1, seed=4)
    s = run_ensemble(c)
    assert s.mean == run_path(c, 0).avg_aoi
    assert math.isnan(s.stderr)


def test_merge_equals_single_run():
    c = cfg(PolicyKind.BU, n_paths=6, seed=8)
    whole = run_ensemble(c)
    a = run_ensemble(replace(c, n_paths=2))
    b = run_ensemble(replace(c, n_paths=4), path_offset=2)
    m = b.merge(a)
    assert np.array_equal(m.path_indices, whole.path_indices)
    assert np.array_equal(m.avg_aoi, whole.avg_aoi)
    assert m.mean == whole.mean and m.stderr == whole.stderr
    assert np.array_equal(m.series, whole.series)


def test_parallel_matches_serial():
    c = cfg(PolicyKind.BUR_ER, T0=40.0, n_paths=4, seed=12)
    a, b = run_ensemble(c), run_ensemble(c, workers=2)
    assert np.array_equal(a.avg_aoi, b.avg_aoi)
    assert np.array_equal(a.cycle_table, b.cycle_table, equal_nan=True)


def test_paired_identical_policy():
    c = cfg(PolicyKind.BU, n_paths=3, seed=6)
    rep = run_paired(c, c)
    assert rep.identical.all()
    assert rep.total_aoi_violations == 0 and rep.total_battery_violations == 0


@pytest.mark.parametrize("er,parent", [(PolicyKind.BU_ER, PolicyKind.BU), (PolicyKind.BUR_ER, PolicyKind.BUR)])
def test_paired_dominance_small(er, parent):
    var = cfg(er, T=3000.0, T0=60.0, n_paths=5, seed=21)
    rep = run_paired(replace(var, policy=PolicySpec(parent), feedback=None), var)
    assert rep.total_aoi_violations == 0 and rep.total_battery_violations == 0
    assert (rep.gap >= 0).all()


def test_paired_rejects_unrelated():
    a = cfg(PolicyKind.BUR, n_paths=2)
    b = cfg(PolicyKind.BU_ER, T0=50.0, n_paths=2)
    with pytest.raises(ValueError):
        run_paired(a, b)
    with pytest.raises(ValueError):
        run_paired(cfg(PolicyKind.BU, n_paths=2, seed=1), cfg(PolicyKind.BU, n_paths=2, seed=2))


@pytest.mark.parametrize("kind,T0", [(PolicyKind.BU_ER, 25.0), (PolicyKind.BU_ER, 40.5),
                                     (PolicyKind.BUR_ER, 25.0)])
@pytest.mark.parametrize("p", [0.3, 0.6, 1.0])
def test_trace_cycles_match_kernel(kind, T0, p):
    r = run_path(cfg(kind, p=p, T=5000.0, T0=T0, record_trace=True, seed=13), 1)
    rebuilt = extract_cycles(r.trace, kind)
    assert len(rebuilt) == len(r.cycles) and len(rebuilt) > 3
    for a, b in zip(rebuilt, r.cycles):
        assert a.completed == b.completed
        assert a.origin == pytest.approx(b.origin, nan_ok=True)
        assert a.t1 == pytest.approx(b.t1, nan_ok=True)
        assert a.residual == pytest.approx(b.residual, nan_ok=True)
        if b.completed:
            assert a.t2 == pytest.approx(b.t2)
            assert a.stage2_epochs == b.stage2_epochs
    assert sum(not c.completed for c in r.cycles) == 1
    assert not r.cycles[-1].completed


def test_bu_er_deadline_caps_stage_one():
    r = run_path(cfg(PolicyKind.BU_ER, p=0.6, T=20000.0, T0=12.5, seed=3), 0)
    t1 = np.array([c.t1 for c in r.cycles if c.completed])
    assert t1.max() <= 12.5 and (t1 == 12.5).any()


def test_short_horizon_single_open_cycle():
    r = run_path(cfg(PolicyKind.BU_ER, T=0.5, T0=100.0), 0)
    assert len(r.cycles) == 1 and not r.cycles[0].completed
    assert r.avg_aoi == pytest.approx(0.25)


def test_bu_no_outage_gaps_geometric():
    p = 0.3
    r = run_path(cfg(PolicyKind.BU, p=p, T=2e4, E0=10 ** 6, record_trace=True, seed=1), 0)
    gaps = np.diff(r.success_times, prepend=0.0)
    assert moment_check(gaps, 1 / p, (1 - p) / p ** 2).passes(3.0)


def test_renewal_linear_unit_matches_no_feedback_bound():
    s = run_ensemble(cfg(PolicyKind.CONSTANT_RENEWAL, T=5e4, spacings=Spacings.linear(1.0), n_paths=10))
    assert s.mean == pytest.approx(lb_no_feedback(0.6), rel=0.03)


def test_renewal_grid_spacing_never_bursts():
    p = 0.6
    r = run_path(cfg(PolicyKind.CONSTANT_RENEWAL, p=p, T=3000.0, spacings=Spacings.linear(1 / p),
                     record_trace=True, seed=2), 0)
    tr = r.trace
    last = 0.0
    for t, kind, out in zip(tr.time, tr.kind, tr.outcome):
        if kind != 1 or out == 2:
            continue
        k = (t - last) * p
        assert abs(k - round(k)) < 1e-9 and round(k) >= 1
        if out == 0:
            last = t
    att = tr.time[tr.attempt_mask & (tr.outcome != 2)]
    assert np.all(np.diff(att) > 0)


def test_jsonl_records():
    r = run_path(cfg(PolicyKind.BUR_ER, T=200.0, T0=20.0, record_trace=True), 0)
    buf = io.StringIO()
    r.trace.write_jsonl(buf)
    rows = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert len(rows) == len(r.trace)
    assert {"time", "kind", "outcome", "battery"} <= rows[0].keys()


def test_bu_no_outage_second_moment_large_sample():
    p = 0.6
    r = run_path(cfg(PolicyKind.BU, p=p, T=2e5, E0=10 ** 6, record_trace=True, seed=7), 0)
    x = np.diff(r.success_times, prepend=0.0)
    assert x.size >= 10 ** 5
    se1 = x.std(ddof=1) / math.sqrt(x.size)
    se2 = (x * x).std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - 1 / p) <= 3 * se1
    assert abs((x * x).mean() - (2 - p) / p ** 2) <= 3 * se2


@pytest.mark.parametrize("kind,T0", [(PolicyKind.BU, None), (PolicyKind.BUR, None), (PolicyKind.GREEDY, None),
                                     (PolicyKind.BU_ER, 50.0), (PolicyKind.BUR_ER, 50.0)])
def test_attempts_never_exceed_energy(kind, T0):
    for i in range(5):
        r = run_path(cfg(kind, p=0.4, T0=T0, E0=1, seed=31), i)
        assert r.n_success <= r.n_attempts <= 1 + r.n_arrivals
