"""Planning-time probability machinery for the adaptive weight choice.

Given smooth survival models per group (fitted splines or analytic
scenario curves) plus recruitment, dropout and allocation assumptions,
this module computes at-risk probabilities, the drift and variance
trajectories of weighted log-rank statistics, conditional power given an
interim p-value, the argmax weight selection, analytic overall power of
a two-stage single-weight design, and effect-size calibration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from ._numeric import adaptive_gl
from .design import TwoStageDesign, conditional_error, crossing_probability
from .weights import FLEMING_HARRINGTON, WeightSpec

__all__ = [
    "PlanningAssumptions",
    "CandidateReport",
    "CpReport",
    "UniformRecruitment",
    "ExponentialDropout",
    "at_risk_prob",
    "drift",
    "variance_proxy",
    "drift_and_variance",
    "conditional_power",
    "select_weight",
    "overall_power",
    "calibrate_theta",
]


@dataclass(frozen=True)
class UniformRecruitment:
    """Entry-time CDF for uniform recruitment on [0, duration]."""

    duration: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("recruitment duration must be positive")

    def __call__(self, u):
        return np.clip(np.asarray(u, dtype=float) / self.duration, 0.0, 1.0)

    @property
    def breaks(self) -> tuple:
        return (0.0, self.duration)


@dataclass(frozen=True)
class ExponentialDropout:
    rate: float

    def __call__(self, s):
        return -np.expm1(-self.rate * np.asarray(s, dtype=float))

    @property
    def breaks(self) -> tuple:
        return ()


@dataclass(frozen=True)
class PlanningAssumptions:
    """Distributional assumptions frozen at planning/interim time.

    ``survival0``/``survival1`` expose vectorized ``survival``,
    ``density`` and ``hazard`` accessors; ``recruit_cdf`` maps calendar
    time to the entry-time CDF; ``dropout_cdf`` may be None for no loss
    to follow-up; ``r`` is the probability of assignment to group 1 and
    ``n`` the planned total sample size.
    """

    survival0: object
    survival1: object
    recruit_cdf: object
    n: int
    r: float = 0.5
    dropout_cdf: object = None

    def __post_init__(self):
        if not 0 < self.r < 1:
            raise ValueError("allocation r must lie in (0, 1)")
        if self.n < 1:
            raise ValueError("planned sample size must be >= 1")

    def no_dropout(self, s):
        if self.dropout_cdf is None:
            return np.ones_like(np.asarray(s, dtype=float))
        return 1.0 - self.dropout_cdf(s)


@dataclass(frozen=True)
class CandidateReport:
    spec: WeightSpec
    drift_increment: float
    sd_increment: float
    conditional_power: float


@dataclass(frozen=True)
class CpReport:
    candidates: tuple
    selected: int
    conditional_error_used: float

    @property
    def selected_spec(self) -> WeightSpec:
        return self.candidates[self.selected].spec


def at_risk_prob(assumptions: PlanningAssumptions, k: int, t: float, s) -> float:
    """P[assigned to group k and still at risk s time units in, at calendar t]."""
    s = np.asarray(s, dtype=float)
    p_k = assumptions.r if k == 1 else 1.0 - assumptions.r
    model = assumptions.survival1 if k == 1 else assumptions.survival0
    lag = np.maximum(t - s, 0.0)
    out = p_k * assumptions.recruit_cdf(lag) * assumptions.no_dropout(s) \
        * model.survival(s)
    return float(out) if out.ndim == 0 else out


def _limit_weight_fn(spec, assumptions: PlanningAssumptions):
    """Large-sample limit of a weight function under the assumed curves."""
    if callable(spec):
        return spec
    r = assumptions.r

    def pooled_surv(s):
        return (1.0 - r) * assumptions.survival0.survival(s) \
            + r * assumptions.survival1.survival(s)

    if spec.family == FLEMING_HARRINGTON:
        rho, gamma = spec.rho, spec.gamma

        def fh(s):
            surv = pooled_surv(s)
            return (1.0 - surv) ** rho * surv ** gamma

        return fh

    ref = float(pooled_surv(np.asarray(spec.s_star)))

    def modest(s):
        return 1.0 / np.maximum(pooled_surv(s), ref)

    return modest


def _breakpoints(assumptions: PlanningAssumptions, specs, t: float):
    pts = set()
    recruit_breaks = getattr(assumptions.recruit_cdf, "breaks", ())
    for rb in recruit_breaks:
        pts.add(t - rb)
    for model in (assumptions.survival0, assumptions.survival1):
        pts.update(getattr(model, "quad_breakpoints", ()))
    for spec in specs:
        if isinstance(spec, WeightSpec) and spec.family != FLEMING_HARRINGTON:
            pts.add(spec.s_star)
    return tuple(p for p in pts if 0.0 < p < t)


def drift_and_variance(assumptions: PlanningAssumptions, specs, t: float,
                       rel_tol: float = 1e-8):
    """Drift and variance trajectories at calendar ``t`` for many weights.

    All weight candidates are integrated in one adaptive pass since they
    share the at-risk, hazard and density factors.  Returns a pair of
    arrays aligned with ``specs``.
    """
    specs = list(specs)
    if t <= 0:
        return np.zeros(len(specs)), np.zeros(len(specs))
    weight_fns = [_limit_weight_fn(sp, assumptions) for sp in specs]
    r = assumptions.r
    s0, s1 = assumptions.survival0, assumptions.survival1

    def integrand(s):
        surv0 = s0.survival(s)
        surv1 = s1.survival(s)
        lam0 = s0.hazard(s)
        lam1 = s1.hazard(s)
        f_mix = (1.0 - r) * s0.density(s) + r * s1.density(s)
        exposure = assumptions.recruit_cdf(np.maximum(t - s, 0.0)) \
            * assumptions.no_dropout(s)
        pi0 = (1.0 - r) * exposure * surv0
        pi1 = r * exposure * surv1
        denom = pi0 + pi1
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(denom > 0, pi0 * pi1 / denom, 0.0)
            ratio_sq = np.where(denom > 0, pi0 * pi1 / denom ** 2, 0.0)
        drift_core = ratio * (lam0 - lam1)
        var_core = ratio_sq * exposure * f_mix
        cols = []
        for fn in weight_fns:
            q = fn(s)
            cols.append(q * drift_core)
            cols.append(q * q * var_core)
        return np.stack(cols, axis=-1)

    vals = adaptive_gl(integrand, 0.0, t,
                       breakpoints=_breakpoints(assumptions, specs, t),
                       rel_tol=rel_tol)
    return vals[0::2].copy(), vals[1::2].copy()


def drift(assumptions: PlanningAssumptions, spec, t: float) -> float:
    """Expected trajectory of the non-standardized weighted log-rank process."""
    d, _ = drift_and_variance(assumptions, [spec], t)
    return float(d[0])


def variance_proxy(assumptions: PlanningAssumptions, spec, t: float) -> float:
    """Large-sample limit of the variance estimator of the process."""
    _, v = drift_and_variance(assumptions, [spec], t)
    return float(v[0])


def _increments(assumptions, specs, t1, t2):
    d1, v1 = drift_and_variance(assumptions, specs, t1)
    d2, v2 = drift_and_variance(assumptions, specs, t2)
    return d2 - d1, v2 - v1


def conditional_power(assumptions: PlanningAssumptions, spec,
                      design: TwoStageDesign, p1: float) -> float:
    """P[second-stage rejection | p1] under the planning assumptions."""
    alpha2 = conditional_error(design, p1)
    d_inc, v_inc = _increments(assumptions, [spec], design.t1, design.t2)
    if v_inc[0] <= 0:
        raise ValueError("variance increment is not positive under the assumptions")
    mean_shift = d_inc[0] * math.sqrt(assumptions.n) / math.sqrt(v_inc[0])
    return float(ndtr(ndtri(alpha2) + mean_shift))


def select_weight(assumptions: PlanningAssumptions, candidates,
                  design: TwoStageDesign, p1: float) -> CpReport:
    """Evaluate conditional power per candidate and pick the argmax.

    Ties keep the first-listed candidate.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("at least one candidate weight is required")
    alpha2 = conditional_error(design, p1)
    d_inc, v_inc = _increments(assumptions, candidates, design.t1, design.t2)
    if np.any(v_inc <= 0):
        raise ValueError("variance increment is not positive under the assumptions")
    sd_inc = np.sqrt(v_inc)
    shift = d_inc * math.sqrt(assumptions.n) / sd_inc
    cp = ndtr(ndtri(alpha2) + shift)
    rows = tuple(CandidateReport(spec=sp, drift_increment=float(d),
                                 sd_increment=float(s),
                                 conditional_power=float(c))
                 for sp, d, s, c in zip(candidates, d_inc, sd_inc, cp))
    selected = int(np.argmax(cp))  # argmax keeps the first maximal entry
    return CpReport(candidates=rows, selected=selected,
                    conditional_error_used=float(alpha2))


def overall_power(assumptions: PlanningAssumptions, design: TwoStageDesign,
                  spec) -> float:
    """Analytic power of the two-stage single-weight design.

    The stage-wise z-statistics are modeled as independent normals with
    unit variance and means given by the standardized drift at the
    interim and the standardized drift increment.
    """
    d1, v1 = drift_and_variance(assumptions, [spec], design.t1)
    d2, v2 = drift_and_variance(assumptions, [spec], design.t2)
    if v1[0] <= 0 or v2[0] - v1[0] <= 0:
        raise ValueError("design yields no information in one of the stages")
    root_n = math.sqrt(assumptions.n)
    mu1 = d1[0] * root_n / math.sqrt(v1[0])
    mu2 = (d2[0] - d1[0]) * root_n / math.sqrt(v2[0] - v1[0])
    return crossing_probability(design, mu1, mu2)


def calibrate_theta(assumptions_for_theta, design: TwoStageDesign, spec,
                    target: float, theta_hint: float = -0.25,
                    tol: float = 1e-4, max_iter: int = 200) -> float:
    """Find theta <= 0 with ``overall_power == target`` by bracketing
    and bisection.  ``assumptions_for_theta`` maps theta to a
    :class:`PlanningAssumptions`; power must increase as theta decreases.
    """
    if not 0 < target < 1:
        raise ValueError("target power must lie in (0, 1)")

    def power(theta):
        return overall_power(assumptions_for_theta(theta), design, spec)

    hi = 0.0
    lo = theta_hint
    for _ in range(60):
        if power(lo) >= target:
            break
        hi = lo
        lo *= 2.0
    else:
        raise RuntimeError("failed to bracket the target power")

    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        p_mid = power(mid)
        if abs(p_mid - target) <= tol:
            return mid
        if p_mid > target:
            lo, hi = mid, hi
        else:
            lo, hi = lo, mid
    raise RuntimeError("theta calibration did not converge")
