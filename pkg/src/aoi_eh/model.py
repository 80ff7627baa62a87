"""Physical model: configuration, battery queue and AoI bookkeeping.

Time is measured in units where energy arrives at rate one. A config with
``lam != 1`` is simulated on the rescaled axis ``t * lam`` and every reported
time (and age) is stretched back by ``1 / lam``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .policies import Feedback, PolicyKind, PolicySpec


class ConfigError(ValueError):
    """Invalid simulation or experiment configuration.

    ``key`` names the offending field so the CLI can point at it.
    """

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class InvariantViolation(RuntimeError):
    """A physical or accounting invariant failed during a simulated path."""


class Outcome(str, enum.Enum):
    SUCCESS = "Success"
    ERASED = "Erased"
    SKIPPED_NO_ENERGY = "SkippedNoEnergy"


class EventKind(str, enum.Enum):
    ARRIVAL = "arrival"
    ATTEMPT = "attempt"
    DEPLETE = "deplete"
    RESET = "reset"


@dataclass(frozen=True)
class SimConfig:
    """Full parameterization of one experiment cell."""

    p: float
    horizon_T: float
    policy: PolicySpec
    lam: float = 1.0
    E0: int = 1
    feedback: Optional[Feedback] = None
    n_paths: int = 1
    seed: int = 0
    record_trace: bool = False
    n_checkpoints: int = 32

    def __post_init__(self):
        if self.feedback is None:
            object.__setattr__(self, "feedback", self.policy.required_feedback())
        else:
            object.__setattr__(self, "feedback", Feedback(self.feedback))
        self.validate()

    @property
    def T0(self) -> Optional[float]:
        return self.policy.T0

    def validate(self) -> None:
        if not (0.0 < self.p <= 1.0):
            raise ConfigError("p", f"must satisfy 0 < p <= 1, got {self.p}")
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise ConfigError("lam", f"must be positive, got {self.lam}")
        if not (self.horizon_T > 0.0 and math.isfinite(self.horizon_T)):
            raise ConfigError("horizon_T", f"must be positive, got {self.horizon_T}")
        if int(self.E0) != self.E0 or self.E0 < 0:
            raise ConfigError("E0", f"must be a non-negative integer, got {self.E0}")
        if self.policy.kind in (PolicyKind.BU, PolicyKind.BU_ER) and self.E0 < 1:
            raise ConfigError("E0", "BU-family policies need E0 >= 1")
        if self.policy.kind.is_energy_removal and self.E0 != 1:
            raise ConfigError("E0", "energy-removal policies start every cycle with E0 = 1")
        if self.n_paths < 1:
            raise ConfigError("n_paths", f"must be >= 1, got {self.n_paths}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self.n_checkpoints < 1:
            raise ConfigError("n_checkpoints", "must be >= 1")
        if self.feedback is not self.policy.required_feedback():
            raise ConfigError(
                "feedback",
                f"{self.policy.kind.value} requires feedback={self.policy.required_feedback().value}",
            )

    # internal (rate-one) time axis
    @property
    def internal_horizon(self) -> float:
        return self.horizon_T * self.lam

    @property
    def internal_T0(self) -> Optional[float]:
        return None if self.T0 is None else self.T0 * self.lam


# ---------------------------------------------------------------------------
# battery queue


@dataclass(frozen=True)
class BatteryState:
    level: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise InvariantViolation(f"negative battery level {self.level}")


def battery_deposit(state: BatteryState, arrivals_in_window: int) -> BatteryState:
    if arrivals_in_window < 0:
        raise ValueError("arrival count must be non-negative")
    return BatteryState(state.level + arrivals_in_window)


def battery_consume(state: BatteryState) -> BatteryState:
    """Spend one unit on an update. An empty battery is a causality violation."""
    if state.level < 1:
        raise InvariantViolation("energy causality violated: update attempted with empty battery")
    return BatteryState(state.level - 1)


def battery_deplete(state: BatteryState) -> BatteryState:
    return BatteryState(0)


def battery_reduce_to_one(state: BatteryState) -> BatteryState:
    """Energy removal at a cycle restart; only ever lowers the level."""
    if state.level < 1:
        raise InvariantViolation("cannot restart a cycle with an empty battery")
    return BatteryState(1)


# ---------------------------------------------------------------------------
# AoI accounting


@dataclass(frozen=True)
class UpdateRecord:
    time: float
    epoch_index: int
    attempt_index: int
    outcome: Optional[Outcome]
    battery_after: int
    kind: EventKind = EventKind.ATTEMPT

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "kind": self.kind.value,
            "epoch": self.epoch_index,
            "attempt": self.attempt_index,
            "outcome": None if self.outcome is None else self.outcome.value,
            "battery": self.battery_after,
        }


class _Neumaier:
    """Compensated running sum."""

    __slots__ = ("total", "comp")

    def __init__(self):
        self.total = 0.0
        self.comp = 0.0

    def add(self, x: float) -> None:
        t = self.total + x
        if abs(self.total) >= abs(x):
            self.comp += (self.total - t) + x
        else:
            self.comp += (x - t) + self.total
        self.total = t

    @property
    def value(self) -> float:
        return self.total + self.comp


@dataclass
class AoiAccumulator:
    """Area under the AoI sawtooth, kept two ways.

    ``area`` integrates the age piecewise as time advances; the inter-success
    sums give the closed form ``(sum X_i^2 + (T - S_N)^2) / 2``. The two must
    agree at finalization.
    """

    last_success_time: float = 0.0
    clock: float = 0.0
    n_success: int = 0
    n_attempts: int = 0
    _area: _Neumaier = field(default_factory=_Neumaier, repr=False)
    _sq: _Neumaier = field(default_factory=_Neumaier, repr=False)
    _sum: _Neumaier = field(default_factory=_Neumaier, repr=False)

    @property
    def area(self) -> float:
        return self._area.value

    @property
    def inter_success_sq_sum(self) -> float:
        return self._sq.value

    @property
    def inter_success_sum(self) -> float:
        return self._sum.value

    def advance(self, t: float) -> None:
        if t < self.clock:
            raise ValueError(f"time went backwards: {t} < {self.clock}")
        a0 = self.clock - self.last_success_time
        a1 = t - self.last_success_time
        self._area.add(0.5 * (t - self.clock) * (a0 + a1))
        self.clock = t

    def record_attempt(self) -> None:
        self.n_attempts += 1

    def record_success(self, t: float) -> None:
        if t < self.last_success_time:
            raise ValueError(f"non-monotone success time {t} < {self.last_success_time}")
        self.advance(t)
        x = t - self.last_success_time
        self._sq.add(x * x)
        self._sum.add(x)
        self.n_success += 1
        self.last_success_time = t

    def cumulative_area(self, T: float) -> float:
        """R(T) from the closed form."""
        tail = T - self.last_success_time
        return 0.5 * (self.inter_success_sq_sum + tail * tail)

    def finalize(self, T: float) -> float:
        return aoi_finalize(self, T)

    @classmethod
    def from_success_times(cls, times: Iterable[float]) -> "AoiAccumulator":
        acc = cls()
        for t in times:
            acc.record_success(float(t))
        acc.n_attempts = acc.n_success
        return acc


def aoi_record_success(acc: AoiAccumulator, t: float) -> AoiAccumulator:
    acc.record_success(t)
    return acc


def aoi_finalize(acc: AoiAccumulator, T: float, rtol: float = 1e-9) -> float:
    """Time-average AoI over [0, T]."""
    if T <= 0:
        raise ValueError("horizon must be positive")
    if T < acc.last_success_time:
        raise ValueError("horizon precedes the last success")
    closed = acc.cumulative_area(T)
    acc.advance(T)
    if not math.isclose(closed, acc.area, rel_tol=rtol, abs_tol=0.0):
        raise InvariantViolation(f"AoI area mismatch: closed form {closed!r} vs integrated {acc.area!r}")
    return closed / T


def area_from_success_times(times, T: float) -> float:
    """R(T) recomputed directly from the success instants."""
    times = np.asarray(times, dtype=float)
    gaps = np.diff(times, prepend=0.0, append=float(T))
    return 0.5 * math.fsum(gaps * gaps)
