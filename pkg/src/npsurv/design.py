"""Two-stage adaptive design machinery.

Covers p-value combination functions (inverse normal, Fisher product),
sequential efficacy/futility bounds in the O'Brien-Fleming and Pocock
shapes, the type-I-level equation, conditional error, and the stage-wise
decision rule.  All stage-one/stage-two probabilities reduce to one
dimensional integrals of the conditional normal, evaluated adaptively.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.special import ndtr, ndtri

__all__ = [
    "StageDecision",
    "TwoStageDesign",
    "INVERSE_NORMAL",
    "FISHER",
    "combine",
    "conditional_error",
    "decide",
    "level_check",
    "obf_bounds",
    "pocock_bounds",
    "crossing_probability",
    "bivariate_normal_cdf",
    "design_from_config",
    "design_to_config",
]

INVERSE_NORMAL = "inverse_normal"
FISHER = "fisher"

_P_EPS = 1e-15
_EQUAL_WEIGHT = 1.0 / math.sqrt(2.0)


class StageDecision(enum.Enum):
    REJECT_AT_INTERIM = "reject_at_interim"
    FUTILITY_STOP = "futility_stop"
    CONTINUE = "continue"
    REJECT_AT_FINAL = "reject_at_final"
    ACCEPT_AT_FINAL = "accept_at_final"

    @property
    def rejected(self) -> bool:
        return self in (StageDecision.REJECT_AT_INTERIM,
                        StageDecision.REJECT_AT_FINAL)


@dataclass(frozen=True)
class TwoStageDesign:
    """A fully specified two-stage adaptive design.

    ``alpha1`` is the interim efficacy bound, ``alpha0`` the futility
    bound (1 disables it only in the sense that continuation requires
    p1 < 1), and ``c`` the critical value for the combined p-value.
    ``t1``/``t2`` are the interim and final analysis calendar times.
    """

    alpha: float
    alpha1: float
    alpha0: float
    c: float
    combination: str = INVERSE_NORMAL
    w1: float = _EQUAL_WEIGHT
    w2: float = _EQUAL_WEIGHT
    t1: float = 0.0
    t2: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= self.alpha1 <= self.alpha0 <= 1:
            raise ValueError("need 0 <= alpha1 <= alpha0 <= 1")
        if self.combination not in (INVERSE_NORMAL, FISHER):
            raise ValueError(f"unknown combination {self.combination!r}")
        if self.combination == INVERSE_NORMAL:
            if self.w1 < 0 or self.w2 < 0:
                raise ValueError("stage weights must be nonnegative")
            if abs(self.w1 ** 2 + self.w2 ** 2 - 1.0) > 1e-9:
                raise ValueError("stage weights must satisfy w1^2 + w2^2 = 1")
        if self.t2 and not self.t1 < self.t2:
            raise ValueError("analysis times must satisfy t1 < t2")


def _clamp(p: float) -> float:
    return min(max(float(p), _P_EPS), 1.0 - _P_EPS)


def combine(design: TwoStageDesign, p1: float, p2: float) -> float:
    """Combined p-value C(p1, p2); nondecreasing in both arguments."""
    p1, p2 = _clamp(p1), _clamp(p2)
    if design.combination == FISHER:
        return p1 * p2
    z = design.w1 * (-ndtri(p1)) + design.w2 * (-ndtri(p2))
    return float(ndtr(-z))


def _conditional_error_raw(design: TwoStageDesign, p1: float) -> float:
    p1 = _clamp(p1)
    if design.c <= 0.0:
        return 0.0
    if design.combination == FISHER:
        return min(1.0, design.c / p1)
    if design.c >= 1.0:
        return 1.0
    if design.w2 == 0:
        return 0.0
    z_c = -ndtri(design.c)
    z_1 = -ndtri(p1)
    return float(ndtr(-(z_c - design.w1 * z_1) / design.w2))


def conditional_error(design: TwoStageDesign, p1: float) -> float:
    """Largest second-stage p-value that still rejects, given ``p1``."""
    if not design.alpha1 < p1 <= design.alpha0:
        raise ValueError("p1 outside the continuation region")
    return _conditional_error_raw(design, p1)


def level_check(design: TwoStageDesign) -> float:
    """Evaluate the attained one-sided level of the design numerically."""
    if design.alpha0 <= design.alpha1:
        return design.alpha1
    points = None
    if design.combination == FISHER and design.alpha1 < design.c < design.alpha0:
        points = [design.c]
    val, _ = integrate.quad(lambda p: _conditional_error_raw(design, p),
                            design.alpha1, design.alpha0,
                            epsabs=1e-10, epsrel=1e-10, limit=400, points=points)
    return design.alpha1 + val


def decide(design: TwoStageDesign, p1: float, p2=None) -> StageDecision:
    """Stage-wise decision rule (interim bounds inclusive)."""
    if p1 <= design.alpha1:
        return StageDecision.REJECT_AT_INTERIM
    if p1 >= design.alpha0:
        return StageDecision.FUTILITY_STOP
    if p2 is None:
        return StageDecision.CONTINUE
    if combine(design, p1, p2) <= design.c:
        return StageDecision.REJECT_AT_FINAL
    return StageDecision.ACCEPT_AT_FINAL


def crossing_probability(design: TwoStageDesign, mu1: float = 0.0,
                         mu2: float = 0.0) -> float:
    """P[reject] when the stage-wise z-statistics are N(mu1,1), N(mu2,1).

    The stage-one p-value is taken as 1 - Phi(Z1); rejection happens at
    the interim (p1 <= alpha1) or at the final analysis inside the
    continuation region when p2 <= conditional error.
    """
    b1 = -ndtri(_clamp(design.alpha1)) if design.alpha1 > 0 else np.inf
    p_interim = float(ndtr(mu1 - b1)) if np.isfinite(b1) else 0.0
    z_hi = b1
    z_lo = -ndtri(_clamp(design.alpha0))
    if z_hi <= z_lo:
        return p_interim

    def integrand(z):
        a2 = _conditional_error_raw(design, float(ndtr(-z)))
        a2 = min(max(a2, _P_EPS), 1.0 - _P_EPS)
        return math.exp(-0.5 * (z - mu1) ** 2) / math.sqrt(2 * math.pi) \
            * float(ndtr(mu2 + ndtri(a2)))

    lo = max(z_lo, mu1 - 10.0)
    hi = min(z_hi, mu1 + 10.0) if np.isfinite(z_hi) else mu1 + 10.0
    if hi <= lo:
        return p_interim
    val, _ = integrate.quad(integrand, lo, hi,
                            epsabs=1e-10, epsrel=1e-10, limit=400)
    return p_interim + val


def bivariate_normal_cdf(a: float, b: float, rho: float = 0.0) -> float:
    """P[Z1 <= a, Z2 <= b] for standard normals with correlation ``rho``."""
    if not -1 < rho < 1:
        raise ValueError("rho must lie in (-1, 1)")
    if rho == 0.0:
        return float(ndtr(a) * ndtr(b))
    denom = math.sqrt(1.0 - rho * rho)

    def integrand(z):
        return math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi) \
            * ndtr((b - rho * z) / denom)

    # Mass below 13 sigma is negligible at the 1e-10 accuracy target.
    lo = min(-13.0, a - 2.0)
    val, _ = integrate.quad(integrand, lo, a,
                            epsabs=1e-10, epsrel=1e-10, limit=400)
    return val


def _solve_two_stage(alpha: float, w1: float, w2: float, shape: str):
    """Solve the stage-wise z-boundary level equation for OBF/Pocock bounds."""
    if w2 == 0.0:
        b1 = -ndtri(alpha)
        return alpha, float(ndtr(-w1 * b1))

    def level(b):
        b1 = b * math.sqrt(2.0) if shape == "obf" else b
        design = TwoStageDesign(alpha=alpha, alpha1=float(ndtr(-b1)), alpha0=1.0,
                                c=float(ndtr(-b)), combination=INVERSE_NORMAL,
                                w1=w1, w2=w2)
        return crossing_probability(design) - alpha

    try:
        b = optimize.brentq(level, 0.1, 8.0, xtol=1e-12, rtol=8.9e-16)
    except ValueError as exc:
        raise RuntimeError(f"failed to bracket the boundary solve: {exc}") from None
    b1 = b * math.sqrt(2.0) if shape == "obf" else b
    return float(ndtr(-b1)), float(ndtr(-b))


def obf_bounds(alpha: float, weights=( _EQUAL_WEIGHT, _EQUAL_WEIGHT)):
    """O'Brien-Fleming-shaped (alpha1, c) for the inverse-normal design."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return _solve_two_stage(alpha, weights[0], weights[1], "obf")


def pocock_bounds(alpha: float, weights=(_EQUAL_WEIGHT, _EQUAL_WEIGHT)):
    """Pocock-shaped (alpha1, c): equal stage-wise z-boundaries."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    return _solve_two_stage(alpha, weights[0], weights[1], "pocock")


_DESIGN_KEYS = {"alpha", "alpha0", "combination", "bounds", "t1", "t2"}
_COMB_KEYS = {"type", "w1", "w2"}
_BOUND_KEYS = {"type", "alpha1", "c"}


def design_from_config(cfg: dict) -> TwoStageDesign:
    """Build a design from its JSON dict form, rejecting unknown keys."""
    unknown = set(cfg) - _DESIGN_KEYS
    if unknown:
        raise ValueError(f"unknown design keys: {sorted(unknown)}")
    alpha = float(cfg["alpha"])
    alpha0 = float(cfg.get("alpha0", 1.0))
    comb = cfg.get("combination", {"type": INVERSE_NORMAL})
    unknown = set(comb) - _COMB_KEYS
    if unknown:
        raise ValueError(f"unknown combination keys: {sorted(unknown)}")
    comb_type = comb.get("type", INVERSE_NORMAL)
    w1 = float(comb.get("w1", _EQUAL_WEIGHT))
    w2 = float(comb.get("w2", _EQUAL_WEIGHT))
    bounds = cfg.get("bounds", {"type": "obf"})
    unknown = set(bounds) - _BOUND_KEYS
    if unknown:
        raise ValueError(f"unknown bounds keys: {sorted(unknown)}")
    btype = bounds.get("type", "obf")
    if btype == "explicit":
        alpha1, c = float(bounds["alpha1"]), float(bounds["c"])
    elif btype in ("obf", "pocock"):
        if comb_type != INVERSE_NORMAL:
            raise ValueError(f"{btype} bounds require the inverse-normal combination")
        solver = obf_bounds if btype == "obf" else pocock_bounds
        alpha1, c = solver(alpha, (w1, w2))
    else:
        raise ValueError(f"unknown bounds type {btype!r}")
    return TwoStageDesign(alpha=alpha, alpha1=alpha1, alpha0=alpha0, c=c,
                          combination=comb_type, w1=w1, w2=w2,
                          t1=float(cfg.get("t1", 0.0)), t2=float(cfg.get("t2", 0.0)))


def design_to_config(design: TwoStageDesign) -> dict:
    return {
        "alpha": design.alpha,
        "alpha0": design.alpha0,
        "combination": {"type": design.combination,
                        "w1": design.w1, "w2": design.w2},
        "bounds": {"type": "explicit", "alpha1": design.alpha1, "c": design.c},
        "t1": design.t1,
        "t2": design.t2,
    }
