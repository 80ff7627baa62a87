"""Closed-form bounds, renewal-objective series and moment diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .policies import Feedback, Spacings

SERIES_TOL = 1e-12


def _check_p(p: float) -> float:
    p = float(p)
    if not (0.0 < p <= 1.0):
        raise ValueError(f"success probability must lie in (0, 1], got {p}")
    return p


def lb_no_feedback(p: float) -> float:
    """Optimal long-run average AoI without feedback, ``(2 - p) / (2p)``."""
    p = _check_p(p)
    return (2.0 - p) / (2.0 * p)


def lb_feedback(p: float) -> float:
    """Optimal long-run average AoI with perfect feedback, ``1 / (2p)``."""
    p = _check_p(p)
    return 1.0 / (2.0 * p)


def bound_for(feedback: Feedback, p: float, lam: float = 1.0) -> float:
    """Lower bound for the feedback mode, in time units of an arrival rate ``lam``."""
    b = lb_feedback(p) if Feedback(feedback) is Feedback.PERFECT else lb_no_feedback(p)
    return b / lam


# ---------------------------------------------------------------------------
# geometric attempt counts


def success_weights(p: float, tol: float = SERIES_TOL) -> np.ndarray:
    """``p_k = (1-p)^(k-1) p`` for ``k = 1..K``, cut once the remaining mass drops below ``tol``."""
    p = _check_p(p)
    if p == 1.0:
        return np.array([1.0])
    K = int(math.ceil(math.log(tol) / math.log1p(-p)))
    k = np.arange(1, max(K, 1) + 1)
    return p * np.exp((k - 1) * math.log1p(-p))


def geometric_moments(p: float) -> tuple[float, float]:
    """Mean and second moment of a geometric(p) count on ``{1, 2, ...}``."""
    p = _check_p(p)
    return 1.0 / p, (2.0 - p) / (p * p)


def geometric_moments_series(p: float, tol: float = SERIES_TOL) -> tuple[float, float]:
    w = success_weights(p, tol)
    k = np.arange(1, w.shape[0] + 1, dtype=float)
    return math.fsum(k * w), math.fsum(k * k * w)


# ---------------------------------------------------------------------------
# renewal objective


SpacingRule = Union[Spacings, Callable[[int], float]]


@dataclass(frozen=True)
class RenewalObjectiveInput:
    spacings: SpacingRule
    p: float
    tol: float = SERIES_TOL
    max_terms: int = 10_000_000


def _spacing_values(rule: SpacingRule, k: np.ndarray) -> np.ndarray:
    if isinstance(rule, Spacings):
        prefix = np.asarray(rule.prefix)
        m = prefix.shape[0]
        tail = prefix[-1] + (k - m) * rule.tail_step
        return np.where(k <= m, prefix[np.minimum(k, m) - 1], tail)
    try:
        return np.array([float(rule(int(i))) for i in k])
    except OverflowError:
        raise ValueError("renewal series does not converge; spacings overflow") from None


def renewal_moments(inp: RenewalObjectiveInput) -> tuple[float, float]:
    """``(E[X], E[X^2])`` when the inter-success delay is ``x_k`` with probability ``p_k``.

    Raises ``ValueError`` if the weighted sums do not settle by ``max_terms``.
    """
    p = _check_p(inp.p)
    m1 = m2 = 0.0
    start = 1
    block = 4096
    q = math.log1p(-p) if p < 1.0 else -math.inf
    while True:
        k = np.arange(start, start + block)
        w = p * np.exp((k - 1) * q) if p < 1.0 else (k == 1).astype(float)
        x = _spacing_values(inp.spacings, k)
        if np.any(x <= 0) or np.any(np.diff(x) < 0) or not np.all(np.isfinite(x)):
            raise ValueError("spacings must be positive, finite and non-decreasing")
        t1 = x * w
        t2 = x * x * w
        m1 += math.fsum(t1)
        m2 += math.fsum(t2)
        end = start + block - 1
        mass_left = math.exp(end * q) if p < 1.0 else 0.0
        if mass_left < inp.tol and t2[-1] <= inp.tol * m2 and t1[-1] <= inp.tol * m1:
            return m1, m2
        start = end + 1
        if start > inp.max_terms:
            raise ValueError("renewal series does not converge; spacings grow too fast")
        block = min(block * 2, 1 << 20)


def renewal_objective(inp: RenewalObjectiveInput) -> tuple[float, bool]:
    """Long-run AoI ``E[X^2] / (2 E[X])`` and whether the success rate ``1/E[X] <= p``."""
    m1, m2 = renewal_moments(inp)
    feasible = m1 * inp.p >= 1.0 - 1e-9
    return m2 / (2.0 * m1), feasible


@dataclass
class GridCandidate:
    family: str
    parameter: float
    objective: float
    feasible: bool


@dataclass
class GridSearchReport:
    p: float
    best: GridCandidate
    best_by_family: dict[str, GridCandidate]
    bound: float
    bound_respected: bool
    candidates: list[GridCandidate] = field(repr=False, default_factory=list)


def default_families(p: float, n: int = 200) -> dict[str, list[tuple[float, Spacings]]]:
    """Constant delays ``c`` on ``[1/p, 3/p]`` and linear delays ``d*k`` on ``[1, 3]``."""
    consts = np.linspace(1.0 / p, 3.0 / p, n)
    consts[0] = 1.0 / p
    lins = np.linspace(1.0, 3.0, n)
    return {
        "constant": [(float(c), Spacings.constant(float(c))) for c in consts],
        "linear": [(float(d), Spacings.linear(float(d))) for d in lins],
    }


def renewal_grid_search(
    p: float,
    families: Optional[Mapping[str, Sequence[tuple[float, SpacingRule]]]] = None,
    tol: float = SERIES_TOL,
) -> GridSearchReport:
    """Minimize the renewal objective over feasible candidates."""
    p = _check_p(p)
    families = default_families(p) if families is None else families
    cands = []
    for name, members in families.items():
        for param, rule in members:
            obj, feas = renewal_objective(RenewalObjectiveInput(rule, p, tol))
            cands.append(GridCandidate(name, param, obj, feas))
    feasible = [c for c in cands if c.feasible]
    if not feasible:
        raise ValueError("no feasible candidate in the search grid")
    best_by_family = {}
    for c in feasible:
        cur = best_by_family.get(c.family)
        if cur is None or c.objective < cur.objective:
            best_by_family[c.family] = c
    best = min(feasible, key=lambda c: c.objective)
    bound = lb_feedback(p)
    return GridSearchReport(
        p=p,
        best=best,
        best_by_family=best_by_family,
        bound=bound,
        bound_respected=all(c.objective >= bound - 1e-9 for c in feasible),
        candidates=cands,
    )


# ---------------------------------------------------------------------------
# hitting-time bounds for the battery walk


def gamma_bu(alpha: float) -> float:
    """Log-MGF exponent for the walk with Poisson(1) - 1 steps."""
    return math.expm1(-alpha) + alpha


def gamma_bu_prime(alpha: float) -> float:
    return -math.expm1(-alpha)


def hitting_bound_bu(alpha: float) -> float:
    """Lower bound ``e^{-a} / gamma'(a)`` on the mean zero-hitting time of the BU battery walk."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return math.exp(-alpha) / gamma_bu_prime(alpha)


def _bur_domain(alpha: float, p: float) -> None:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if (1.0 - p) * math.exp(alpha) >= 1.0:
        raise ValueError(f"alpha={alpha} outside the domain (1-p) e^alpha < 1 for p={p}")


def gamma_bur(alpha: float, p: float) -> float:
    """Log-MGF exponent for steps Poisson(1/p) - geometric(p)."""
    p = _check_p(p)
    _bur_domain(alpha, p)
    # log(p e^a / (1 - (1-p) e^a)) == a - log1p(-(1-p) expm1(a) / p)
    return math.expm1(-alpha) / p + alpha - math.log1p(-(1.0 - p) * math.expm1(alpha) / p)


def gamma_bur_prime(alpha: float, p: float) -> float:
    p = _check_p(p)
    _bur_domain(alpha, p)
    return -math.exp(-alpha) / p + 1.0 / (1.0 - (1.0 - p) * math.exp(alpha))


def hitting_bound_bur(alpha: float, p: float) -> float:
    """Lower bound ``(1 - e^{-a}) / gamma(a)`` on the mean zero-hitting time of the BUR battery walk."""
    return -math.expm1(-alpha) / gamma_bur(alpha, p)


# ---------------------------------------------------------------------------
# stage-two references for the energy-removal policies


def bu_er_stage2_mean_cap(p: float) -> float:
    """Mean of the dominating geometric stage-two length for BU-ER, ``1 / (p (1 - 2/e))``."""
    p = _check_p(p)
    return 1.0 / (p * (1.0 - 2.0 * math.exp(-1.0)))


def bur_er_stage2_exit_prob(p: float, tol: float = 1e-15) -> float:
    """Chance a BUR-ER stage-two epoch ends the stage.

    Each stage-two epoch starts from an empty battery, collects a Poisson(1/p)
    number of units and needs a geometric(p) number of attempts; the stage
    ends when a success leaves at least one unit, i.e. ``A >= G + 1``.
    """
    p = _check_p(p)
    mu = 1.0 / p
    w = success_weights(p, tol)
    n = w.shape[0] + 2
    pmf = np.empty(n)
    pmf[0] = math.exp(-mu)
    for i in range(1, n):
        pmf[i] = pmf[i - 1] * mu / i
    tail = 1.0 - np.cumsum(pmf)  # tail[j] = P(A > j) = P(A >= j + 1)
    g = np.arange(1, w.shape[0] + 1)
    return float(math.fsum(w * np.clip(tail[g], 0.0, 1.0)))


# ---------------------------------------------------------------------------
# moment diagnostics


@dataclass(frozen=True)
class MomentCheck:
    n: int
    mean: float
    mean_se: float
    var: float
    var_se: float
    mean_z: float
    var_z: float

    def passes(self, z: float = 3.0) -> bool:
        return abs(self.mean_z) <= z and abs(self.var_z) <= z


def moment_check(samples, mean_expected: float, var_expected: float) -> MomentCheck:
    """z-scores of sample mean and variance against expected values."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples")
    mu = x.mean()
    d = x - mu
    var = float(d @ d / (n - 1))
    m4 = float(np.mean(d ** 4))
    mean_se = math.sqrt(var / n)
    var_se = math.sqrt(max(m4 - var * var, 0.0) / n)
    return MomentCheck(
        n=n,
        mean=float(mu),
        mean_se=mean_se,
        var=var,
        var_se=var_se,
        mean_z=(mu - mean_expected) / mean_se if mean_se > 0 else (0.0 if mu == mean_expected else math.inf),
        var_z=(var - var_expected) / var_se if var_se > 0 else (0.0 if var == var_expected else math.inf),
    )


def geometric_relation(samples) -> tuple[float, float]:
    """``var - mean (mean - 1)`` and its standard error; zero for a geometric law on {1, 2, ...}."""
    x = np.asarray(samples, dtype=float)
    n = x.shape[0]
    mu = x.mean()
    d = x - mu
    var = float(d @ d / n)
    stat = float(var - mu * (mu - 1.0))
    influence = d * d - var - (2.0 * mu - 1.0) * d
    return stat, float(np.std(influence, ddof=1) / math.sqrt(n))


# ---------------------------------------------------------------------------
# bound comparison


@dataclass
class BoundReport:
    p: float
    bound_no_feedback: float
    bound_feedback: float
    bound: float
    mean: float
    stderr: float
    gap: float
    checkpoints: np.ndarray = field(repr=False)
    gap_series: np.ndarray = field(repr=False)
    stderr_series: np.ndarray = field(repr=False)
    below_bound: np.ndarray = field(repr=False)  # checkpoint indices with mean < bound - 3 se

    @property
    def ok(self) -> bool:
        return self.below_bound.size == 0

    def to_row(self) -> dict:
        return {
            "p": self.p,
            "bound_no_feedback": self.bound_no_feedback,
            "bound_feedback": self.bound_feedback,
            "bound": self.bound,
            "mean": self.mean,
            "stderr": self.stderr,
            "gap": self.gap,
            "checkpoints_below_bound": int(self.below_bound.size),
        }


def compare_to_bound(summary, bound: Optional[float] = None, z: float = 3.0) -> BoundReport:
    """Gap between an ensemble's mean AoI and the lower bound, at the horizon and every checkpoint."""
    cfg = summary.config
    if bound is None:
        bound = bound_for(cfg.feedback, cfg.p, cfg.lam)
    mean_series = summary.series_mean
    se_series = summary.series_stderr
    se0 = np.nan_to_num(se_series, nan=0.0)
    below = np.flatnonzero(mean_series < bound - z * se0)
    return BoundReport(
        p=cfg.p,
        bound_no_feedback=lb_no_feedback(cfg.p) / cfg.lam,
        bound_feedback=lb_feedback(cfg.p) / cfg.lam,
        bound=bound,
        mean=summary.mean,
        stderr=summary.stderr,
        gap=summary.mean - bound,
        checkpoints=summary.checkpoints,
        gap_series=mean_series - bound,
        stderr_series=se_series,
        below_bound=below,
    )


def cycle_statistics(cycle_table: np.ndarray) -> dict[str, float]:
    """Sample moments of completed energy-removal cycles (table from ``EnsembleSummary.cycles``)."""
    tab = cycle_table[cycle_table[:, 5] == 1.0]
    n = tab.shape[0]
    out: dict[str, float] = {"n_cycles": float(n)}
    for col, name in ((1, "t1"), (2, "t2"), (3, "residual"), (4, "stage2_epochs")):
        x = tab[:, col]
        out[f"{name}_mean"] = float(x.mean()) if n else math.nan
        out[f"{name}_se"] = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        out[f"{name}_m2"] = float(np.mean(x * x)) if n else math.nan
    if n > 1:
        stat, se = geometric_relation(tab[:, 4])
        out["geom_relation"] = stat
        out["geom_relation_se"] = se
    return out
