"""Compiled event loops: one per schedule family, on the rate-one time axis.

Loop state lives in two small arrays so the helpers can update it in place:

``fs`` (float64): last success, clock, sum X^2 (+comp), sum X (+comp),
integrated area (+comp).
``st`` (int64): battery, arrival cursor, successes, attempts, checkpoint
cursor, trace length, status, cycle count.

Within one instant, arrivals are processed before attempts, and attempts in
attempt order.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .policies import (
    ER_DEPLETE,
    ER_ENTER_STAGE2,
    ER_RESET,
    bu_attempt,
    bu_er_deadline_due,
    bu_er_step,
    bur_epoch_attempts,
    bur_er_step,
    constant_renewal_step,
    greedy_step,
    spacing_at,
)

# fs slots
LAST, CLOCK, SQ, SQ_C, SUM, SUM_C, AREA, AREA_C = range(8)
# st slots
BATT, AI, NSUCC, NATT, CI, NTR, STATUS, NCYC = range(8)

STATUS_OK = 0
STATUS_CAUSALITY = 1
STATUS_TRACE_FULL = 2

KIND_ARRIVAL, KIND_ATTEMPT, KIND_DEPLETE, KIND_RESET = 0, 1, 2, 3
OUT_SUCCESS, OUT_ERASED, OUT_SKIPPED, OUT_NONE = 0, 1, 2, -1

GRID_BU, GRID_BUR, GRID_BU_ER, GRID_BUR_ER = 0, 1, 2, 3

# cycle table columns
CYC_T1, CYC_T2, CYC_RESIDUAL, CYC_STAGE2_EPOCHS, CYC_COMPLETED, CYC_ORIGIN = range(6)


@njit(cache=True)
def _neu_add(fs, i, x):
    s = fs[i]
    t = s + x
    if abs(s) >= abs(x):
        fs[i + 1] += (s - t) + x
    else:
        fs[i + 1] += (x - t) + s
    fs[i] = t


@njit(cache=True)
def _advance(fs, st, t, checkpoints, series):
    clock = fs[CLOCK]
    last = fs[LAST]
    ci = st[CI]
    while ci < checkpoints.shape[0] and checkpoints[ci] <= t:
        c = checkpoints[ci]
        age = c - last
        series[ci] = 0.5 * ((fs[SQ] + fs[SQ_C]) + age * age) / c
        ci += 1
    st[CI] = ci
    if t <= clock:
        return
    _neu_add(fs, AREA, 0.5 * (t - clock) * ((clock - last) + (t - last)))
    fs[CLOCK] = t


@njit(cache=True)
def _trace(st, trace, t, kind, epoch, attempt, outcome, battery):
    cap = trace.shape[0]
    if cap == 0:
        return
    i = st[NTR]
    if i >= cap:
        st[STATUS] = STATUS_TRACE_FULL
        return
    trace[i, 0] = t
    trace[i, 1] = kind
    trace[i, 2] = epoch
    trace[i, 3] = attempt
    trace[i, 4] = outcome
    trace[i, 5] = battery
    st[NTR] = i + 1


@njit(cache=True)
def _deposit(fs, st, t, arrivals, checkpoints, series, trace):
    """Credit every arrival at or before ``t``."""
    ai = st[AI]
    n = arrivals.shape[0]
    while ai < n and arrivals[ai] <= t:
        a = arrivals[ai]
        _advance(fs, st, a, checkpoints, series)
        st[BATT] += 1
        ai += 1
        _trace(st, trace, a, KIND_ARRIVAL, ai, 0, OUT_NONE, st[BATT])
    st[AI] = ai
    _advance(fs, st, t, checkpoints, series)


@njit(cache=True)
def _consume(st):
    if st[BATT] < 1:
        st[STATUS] = STATUS_CAUSALITY
        return False
    st[BATT] -= 1
    st[NATT] += 1
    return True


@njit(cache=True)
def _success(fs, st, t, success_times):
    x = t - fs[LAST]
    _neu_add(fs, SQ, x * x)
    _neu_add(fs, SUM, x)
    success_times[st[NSUCC]] = t
    st[NSUCC] += 1
    fs[LAST] = t


@njit(cache=True)
def _finish(fs, st, horizon, arrivals, checkpoints, series, trace):
    _deposit(fs, st, horizon, arrivals, checkpoints, series, trace)


def _new_state(E0):
    fs = np.zeros(8)
    st = np.zeros(8, dtype=np.int64)
    st[BATT] = E0
    return fs, st


@njit(cache=True)
def _cycle_row(cycles, st, t1, t2, residual, stage2_epochs, completed, origin):
    i = st[NCYC]
    cycles[i, CYC_T1] = t1
    cycles[i, CYC_T2] = t2
    cycles[i, CYC_RESIDUAL] = residual
    cycles[i, CYC_STAGE2_EPOCHS] = stage2_epochs
    cycles[i, CYC_COMPLETED] = completed
    cycles[i, CYC_ORIGIN] = origin
    st[NCYC] = i + 1


@njit(cache=True)
def run_grid(kind, rate, n_epochs, arrivals, first_success, horizon, T0,
             checkpoints, series, success_times, trace, cycles, fs, st, final):
    """BU / BUR and their energy-removal variants on the grid ``n / rate``.

    Energy-removal cycles restart at a success epoch, which lies on the same
    grid, so cycle-relative schedules coincide with the global one and epoch
    ``n`` always reads channel index ``n``.
    """
    retransmit = kind == GRID_BUR or kind == GRID_BUR_ER
    er = kind == GRID_BU_ER or kind == GRID_BUR_ER
    stage = 1
    origin = 0.0
    boundary = math.nan  # absolute time stage one ended
    boundary_epoch = 0
    t1 = math.nan
    residual = math.nan
    last_epoch = 0
    for n in range(1, n_epochs + 1):
        t = n / rate
        if er and kind == GRID_BU_ER and bu_er_deadline_due(stage, origin, T0, t):
            td = origin + T0
            _deposit(fs, st, td, arrivals, checkpoints, series, trace)
            st[BATT] = 0
            _trace(st, trace, td, KIND_DEPLETE, last_epoch, 0, OUT_NONE, 0)
            stage = 2
            boundary = td
            boundary_epoch = last_epoch
            t1 = T0
            residual = td - fs[LAST]
        _deposit(fs, st, t, arrivals, checkpoints, series, trace)
        g = first_success[n]
        battery = st[BATT]
        if retransmit:
            attempts, success, after = bur_epoch_attempts(battery, g)
            if attempts == 0:
                _trace(st, trace, t, KIND_ATTEMPT, n, 1, OUT_SKIPPED, battery)
            for k in range(1, attempts + 1):
                if not _consume(st):
                    return
                ok = success and k == attempts
                if ok:
                    _success(fs, st, t, success_times)
                _trace(st, trace, t, KIND_ATTEMPT, n, k, OUT_SUCCESS if ok else OUT_ERASED, st[BATT])
        else:
            attempted, success, after = bu_attempt(battery, g)
            attempts = 1 if attempted else 0
            if attempted:
                if not _consume(st):
                    return
                if success:
                    _success(fs, st, t, success_times)
                _trace(st, trace, t, KIND_ATTEMPT, n, 1, OUT_SUCCESS if success else OUT_ERASED, st[BATT])
            else:
                _trace(st, trace, t, KIND_ATTEMPT, n, 1, OUT_SKIPPED, battery)
        last_epoch = n
        if not er:
            continue
        prev_stage = stage
        if kind == GRID_BU_ER:
            stage, new_batt, event = bu_er_step(stage, st[BATT], attempts > 0, success)
        else:
            stage, new_batt, event = bur_er_step(stage, st[BATT], attempts, success, t - origin, T0)
        if event == ER_ENTER_STAGE2 or event == ER_DEPLETE:
            if event == ER_DEPLETE:
                st[BATT] = 0
                _trace(st, trace, t, KIND_DEPLETE, n, 0, OUT_NONE, 0)
            boundary = t
            boundary_epoch = n
            t1 = t - origin
            residual = t - fs[LAST]
        elif event == ER_RESET and prev_stage == 2:
            st[BATT] = new_batt
            _trace(st, trace, t, KIND_RESET, n, 0, OUT_NONE, new_batt)
            _cycle_row(cycles, st, t1, t - boundary, residual, n - boundary_epoch, 1.0, origin)
            origin = t
            boundary = math.nan
            t1 = math.nan
            residual = math.nan
    if er and kind == GRID_BU_ER and stage == 1 and origin + T0 < horizon:
        td = origin + T0
        _deposit(fs, st, td, arrivals, checkpoints, series, trace)
        st[BATT] = 0
        _trace(st, trace, td, KIND_DEPLETE, last_epoch, 0, OUT_NONE, 0)
        stage = 2
        t1 = T0
        residual = td - fs[LAST]
    _finish(fs, st, horizon, arrivals, checkpoints, series, trace)
    if er:
        _cycle_row(cycles, st, t1, math.nan, residual, -1.0, 0.0, origin)
    final[0] = stage
    final[1] = origin


@njit(cache=True)
def run_greedy(arrivals, first_success, horizon, checkpoints, series,
               success_times, trace, fs, st):
    """One attempt at every energy arrival; channel index = arrival index."""
    n = arrivals.shape[0]
    for j in range(n):
        a = arrivals[j]
        _deposit(fs, st, a, arrivals, checkpoints, series, trace)
        success, after = greedy_step(st[BATT], first_success[j + 1])
        if not _consume(st):
            return
        if success:
            _success(fs, st, a, success_times)
        _trace(st, trace, a, KIND_ATTEMPT, j + 1, 1, OUT_SUCCESS if success else OUT_ERASED, st[BATT])
    _finish(fs, st, horizon, arrivals, checkpoints, series, trace)


@njit(cache=True)
def run_renewal(prefix, tail_step, arrivals, first_success, horizon, checkpoints,
                series, success_times, trace, fs, st, final):
    """Renewal schedule ``last_success + x_k`` with perfect feedback.

    Channel index = renewal cycle (successes so far + 1); the attempt index
    counts attempts actually made within the cycle.
    """
    cycle = 1
    made = 0
    k = 1
    t = spacing_at(prefix, tail_step, 1)
    n_arr = arrivals.shape[0]
    while t <= horizon:
        _deposit(fs, st, t, arrivals, checkpoints, series, trace)
        if st[BATT] >= 1:
            if not _consume(st):
                return
            made += 1
            ok = made == first_success[cycle]
            if ok:
                _success(fs, st, t, success_times)
            _trace(st, trace, t, KIND_ATTEMPT, cycle, made, OUT_SUCCESS if ok else OUT_ERASED, st[BATT])
            if ok:
                cycle += 1
                made = 0
                k = 1
                t = t + spacing_at(prefix, tail_step, 1)
            else:
                k, t = constant_renewal_step(prefix, tail_step, fs[LAST], k, t, True)
        else:
            _trace(st, trace, t, KIND_ATTEMPT, cycle, made + 1, OUT_SKIPPED, 0)
            k, nt = constant_renewal_step(prefix, tail_step, fs[LAST], k, t, False)
            if math.isnan(nt):
                if st[AI] >= n_arr:
                    break
                nt = arrivals[st[AI]]
            t = nt
    _finish(fs, st, horizon, arrivals, checkpoints, series, trace)
    final[0] = k
    final[1] = made
    final[2] = cycle
