"""Updating policies as scalar, jit-compiled transition functions.

Each function moves one epoch (or one arrival) forward given the battery level
and the channel's pre-committed erasure pattern. The erasure pattern at a
channel index is summarized by ``first_success``: attempts ``1..first_success-1``
are erased and attempt ``first_success`` gets through.

All times here are on the rate-one axis.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit


class Feedback(str, enum.Enum):
    NONE = "None"
    PERFECT = "Perfect"


class PolicyKind(str, enum.Enum):
    BU = "BU"
    BUR = "BUR"
    GREEDY = "Greedy"
    BU_ER = "BU_ER"
    BUR_ER = "BUR_ER"
    CONSTANT_RENEWAL = "ConstantRenewal"

    @property
    def is_energy_removal(self) -> bool:
        return self in (PolicyKind.BU_ER, PolicyKind.BUR_ER)

    @property
    def uses_feedback(self) -> bool:
        return self in (PolicyKind.BUR, PolicyKind.BUR_ER, PolicyKind.CONSTANT_RENEWAL)

    @classmethod
    def parse(cls, text: str) -> "PolicyKind":
        key = text.strip().replace("-", "_").lower()
        for kind in cls:
            if kind.value.lower() == key or kind.name.lower() == key:
                return kind
        raise ValueError(f"unknown policy {text!r}")


class Stage(enum.IntEnum):
    STAGE1 = 1
    STAGE2 = 2


@dataclass(frozen=True)
class Spacings:
    """Delays ``x_1 <= x_2 <= ...`` after a success, as a prefix plus a linear tail.

    ``x_k = prefix[k-1]`` for ``k <= len(prefix)`` and
    ``x_k = prefix[-1] + (k - len(prefix)) * tail_step`` beyond it.
    """

    prefix: tuple[float, ...]
    tail_step: float = 0.0

    def __post_init__(self):
        prefix = tuple(float(x) for x in self.prefix)
        object.__setattr__(self, "prefix", prefix)
        if not prefix:
            raise ValueError("spacings need at least one value")
        if prefix[0] <= 0 or not all(math.isfinite(x) for x in prefix):
            raise ValueError("spacings must be positive and finite")
        if any(b < a for a, b in zip(prefix, prefix[1:])):
            raise ValueError("spacings must be non-decreasing")
        if self.tail_step < 0 or not math.isfinite(self.tail_step):
            raise ValueError("tail_step must be finite and non-negative")

    @classmethod
    def constant(cls, c: float) -> "Spacings":
        return cls((c,), 0.0)

    @classmethod
    def linear(cls, d: float) -> "Spacings":
        """``x_k = d * k``."""
        return cls((d,), d)

    def __getitem__(self, k: int) -> float:
        if k < 1:
            raise IndexError("spacings are indexed from 1")
        return float(spacing_at(np.asarray(self.prefix), self.tail_step, k))

    def scaled(self, factor: float) -> "Spacings":
        return Spacings(tuple(x * factor for x in self.prefix), self.tail_step * factor)


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    T0: Optional[float] = None
    renewal_spacings: Optional[Spacings] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.kind.is_energy_removal:
            if self.T0 is None or not (self.T0 > 0 and math.isfinite(self.T0)):
                raise ValueError(f"{self.kind.value} needs a positive deadline T0")
        elif self.T0 is not None:
            raise ValueError(f"T0 only applies to energy-removal policies, not {self.kind.value}")
        if self.kind is PolicyKind.CONSTANT_RENEWAL:
            if self.renewal_spacings is None:
                raise ValueError("ConstantRenewal needs renewal_spacings")
        elif self.renewal_spacings is not None:
            raise ValueError("renewal_spacings only apply to ConstantRenewal")

    def required_feedback(self) -> Feedback:
        return Feedback.PERFECT if self.kind.uses_feedback else Feedback.NONE

    @property
    def label(self) -> str:
        if self.kind.is_energy_removal:
            return f"{self.kind.value}_{self.T0:g}"
        return self.kind.value


@dataclass(frozen=True)
class PolicyState:
    """Snapshot of a policy's state machine at the end of a path."""

    next_epoch_index: int
    cycle_origin: float = 0.0
    stage: Optional[Stage] = None
    retransmission_count: int = 0


# ---------------------------------------------------------------------------
# transition functions (callable from Python and from the engine kernels)

# energy-removal events
ER_NONE = 0
ER_ENTER_STAGE2 = 1
ER_DEPLETE = 2
ER_RESET = 3


@njit(cache=True)
def bu_epochs(n):
    """Scheduled time of the n-th BU epoch, relative to the schedule origin."""
    return float(n)


@njit(cache=True)
def bur_epochs(n, p):
    return n / p


@njit(cache=True)
def bu_attempt(battery, first_success):
    """One BU epoch: a single attempt if energy allows.

    Returns ``(attempted, success, battery_after)``.
    """
    if battery < 1:
        return False, False, battery
    return True, first_success == 1, battery - 1


@njit(cache=True)
def bur_epoch_attempts(battery, first_success):
    """One BUR epoch: retransmit at the same instant until success or empty battery.

    Returns ``(attempts, success, battery_after)``.
    """
    if battery >= first_success:
        return first_success, True, battery - first_success
    return battery, False, 0


@njit(cache=True)
def greedy_step(battery, first_success):
    """Attempt on an energy arrival; ``battery`` already includes that arrival.

    Returns ``(success, battery_after)``.
    """
    if battery < 1:
        return False, -1
    return first_success == 1, battery - 1


@njit(cache=True)
def bu_er_deadline_due(stage, cycle_origin, T0, t):
    """Whether the stage-one deadline ``cycle_origin + T0`` has passed strictly before ``t``."""
    return stage == 1 and cycle_origin + T0 < t


@njit(cache=True)
def bu_er_step(stage, battery_after, attempted, success):
    """Stage bookkeeping after a BU-ER epoch. Returns ``(stage, battery, event)``.

    Stage one ends when an attempt drains the battery. Stage two ends at the
    first success that leaves energy behind; the battery is cut to one and a
    new cycle starts at that epoch.
    """
    if stage == 1:
        if attempted and battery_after == 0:
            return 2, 0, ER_ENTER_STAGE2
        return 1, battery_after, ER_NONE
    if success and battery_after >= 1:
        return 1, 1, ER_RESET
    return 2, battery_after, ER_NONE


@njit(cache=True)
def bur_er_step(stage, battery_after, attempts, success, cycle_time, T0):
    """Stage bookkeeping after a BUR-ER epoch. Returns ``(stage, battery, event)``.

    In stage one, an epoch that empties the battery starts stage two; so does
    the first success at cycle time ``>= T0``, after which the battery is
    depleted.
    """
    if stage == 1:
        if attempts > 0 and battery_after == 0:
            return 2, 0, ER_ENTER_STAGE2
        if success and cycle_time >= T0:
            return 2, 0, ER_DEPLETE
        return 1, battery_after, ER_NONE
    if success and battery_after >= 1:
        return 1, 1, ER_RESET
    return 2, battery_after, ER_NONE


@njit(cache=True)
def spacing_at(prefix, tail_step, k):
    m = prefix.shape[0]
    if k <= m:
        return prefix[k - 1]
    return prefix[m - 1] + (k - m) * tail_step


@njit(cache=True)
def constant_renewal_step(prefix, tail_step, last_success, k, now, attempted):
    """Next step of a renewal schedule after the step at ``now``.

    ``k`` is the step just executed (1-based). After an attempt the schedule
    moves to step ``k + 1`` at ``last_success + x_{k+1}`` (or immediately, if
    that instant has already passed). After a skipped attempt the schedule
    moves on to the first step strictly later than ``now``. Returns
    ``(next_k, next_time)``; ``next_time`` is NaN when no later step exists,
    meaning the pending attempt waits for the next energy arrival.
    """
    k += 1
    if attempted:
        return k, max(last_success + spacing_at(prefix, tail_step, k), now)
    m = prefix.shape[0]
    while last_success + spacing_at(prefix, tail_step, k) <= now:
        if k >= m and tail_step == 0.0:
            return k, math.nan
        if k >= m:
            # jump straight past ``now`` along the linear tail
            need = (now - last_success - prefix[m - 1]) / tail_step
            if need > 2.0 ** 53:
                raise ValueError("renewal step index overflow: tail_step too small")
            k = max(k + 1, m + int(math.floor(need)) + 1)
        else:
            k += 1
    return k, last_success + spacing_at(prefix, tail_step, k)


def first_success_from_draws(draws: Sequence[bool]) -> int:
    """Index of the first successful attempt in an explicit erasure pattern."""
    for i, ok in enumerate(draws, start=1):
        if ok:
            return i
    raise ValueError("erasure pattern contains no success")
