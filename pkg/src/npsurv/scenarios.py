"""Synthetic-trial generation for the operating-characteristic studies.

The control arm is exponential; the experimental arm's log hazard ratio
is proportional to the limiting Fleming-Harrington weight with indices
(rho*, gamma*) evaluated at the control CDF, which makes the matching
weighted log-rank test the locally most powerful one.  theta = 0 is the
null, and more negative theta means a larger advantage for group 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._numeric import _GL_NODES, _GL_WEIGHTS
from .dataset import Subject, SurvivalDataset
from .planning import ExponentialDropout, PlanningAssumptions, UniformRecruitment

__all__ = [
    "ScenarioSpec",
    "ExponentialCurve",
    "ExperimentalCurve",
    "hazard_ratio_fn",
    "survival_model",
    "sample_survival",
    "sample_trial",
    "planning_assumptions",
    "scenario_from_config",
    "DEFAULT_CONTROL_RATE",
]

DEFAULT_CONTROL_RATE = -math.log(1.0 - 0.3)  # 30% annual event rate

_GRID_POINTS = 4096
_TAIL_MASS = 1e-13


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one synthetic-trial scenario."""

    rho_star: float = 0.0
    gamma_star: float = 0.0
    theta: float = 0.0
    control_rate: float = DEFAULT_CONTROL_RATE
    accrual: float = 6.0
    t1: float = 5.0
    t2: float = 8.0
    n_per_group: int = 500
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.control_rate <= 0:
            raise ValueError("control_rate must be positive")
        if self.theta > 0:
            raise ValueError("theta must be <= 0 (0 is the null)")
        if self.rho_star < 0 or self.gamma_star < 0:
            raise ValueError("optimality indices must be >= 0")
        if self.accrual <= 0:
            raise ValueError("accrual duration must be positive")
        if not 0 < self.t1 < self.t2:
            raise ValueError("analysis times must satisfy 0 < t1 < t2")
        if self.dropout_rate < 0:
            raise ValueError("dropout rate must be >= 0")

    def with_theta(self, theta: float) -> "ScenarioSpec":
        return replace(self, theta=float(theta))


def hazard_ratio_fn(spec: ScenarioSpec):
    """Trial-time hazard ratio lambda1(s)/lambda0(s) of the scenario."""
    rate = spec.control_rate
    rho, gamma = spec.rho_star, spec.gamma_star
    theta = spec.theta

    def ratio(s):
        s = np.asarray(s, dtype=float)
        surv = np.exp(-rate * s)
        weight = (1.0 - surv) ** rho * surv ** gamma
        return np.exp(theta * weight)

    return ratio


@dataclass(frozen=True)
class ExponentialCurve:
    rate: float

    def survival(self, s):
        return np.exp(-self.rate * np.asarray(s, dtype=float))

    def density(self, s):
        return self.rate * self.survival(s)

    def hazard(self, s):
        s = np.asarray(s, dtype=float)
        return np.full_like(s, self.rate)

    @property
    def quad_breakpoints(self) -> tuple:
        return ()


class ExperimentalCurve:
    """Experimental-arm law with a cached cumulative-hazard grid.

    The cumulative hazard is accumulated with Gauss-Legendre panels on a
    monotone grid that extends far enough for the residual tail mass to
    be negligible; arbitrary evaluations integrate from the nearest grid
    point so accuracy does not depend on the grid resolution.
    """

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        self._ratio = hazard_ratio_fn(spec)
        floor = spec.control_rate * math.exp(spec.theta)
        s_max = -math.log(_TAIL_MASS) / floor
        edges = np.linspace(0.0, s_max, _GRID_POINTS + 1)
        half = 0.5 * np.diff(edges)
        centers = edges[:-1] + half
        nodes = centers[:, None] + half[:, None] * _GL_NODES[None, :]
        cell = (self.hazard(nodes) * _GL_WEIGHTS[None, :]).sum(axis=1) * half
        self._edges = edges
        self._cumhaz = np.concatenate(([0.0], np.cumsum(cell)))

    def hazard(self, s):
        return self.spec.control_rate * self._ratio(s)

    def cumulative_hazard(self, s):
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s).astype(float)
        idx = np.clip(np.searchsorted(self._edges, flat, side="right") - 1,
                      0, self._edges.size - 2)
        lo = self._edges[idx]
        half = 0.5 * (flat - lo)
        nodes = lo[:, None] + half[:, None] * (_GL_NODES[None, :] + 1.0)
        partial = (self.hazard(nodes) * _GL_WEIGHTS[None, :]).sum(axis=1) * half
        out = self._cumhaz[idx] + partial
        # beyond the grid the tail is effectively exponential
        over = flat > self._edges[-1]
        if np.any(over):
            tail_rate = float(self.hazard(np.asarray(self._edges[-1])))
            out[over] = self._cumhaz[-1] + tail_rate * (flat[over] - self._edges[-1])
        return out[0] if s.ndim == 0 else out

    def survival(self, s):
        return np.exp(-self.cumulative_hazard(s))

    def density(self, s):
        return self.hazard(np.asarray(s, dtype=float)) * self.survival(s)

    @property
    def quad_breakpoints(self) -> tuple:
        return ()

    def inverse_cdf(self, u):
        """Vectorized inversion of the CDF to 1e-10 in probability."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        target = -np.log1p(-u)
        idx = np.clip(np.searchsorted(self._cumhaz, target) - 1,
                      0, self._edges.size - 2)
        lo = self._edges[idx].copy()
        hi = self._edges[idx + 1].copy()
        over = target > self._cumhaz[-1]
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            high = self.cumulative_hazard(mid) > target
            hi = np.where(high, mid, hi)
            lo = np.where(high, lo, mid)
        out = 0.5 * (lo + hi)
        if np.any(over):
            tail_rate = float(self.hazard(np.asarray(self._edges[-1])))
            out[over] = self._edges[-1] \
                + (target[over] - self._cumhaz[-1]) / tail_rate
        return out


def survival_model(spec: ScenarioSpec, group: int):
    """Analytic survival law object for one arm of the scenario."""
    if group == 0:
        return ExponentialCurve(rate=spec.control_rate)
    if group != 1:
        raise ValueError("group must be 0 or 1")
    if spec.theta == 0.0 or (spec.rho_star == 0.0 and spec.gamma_star == 0.0):
        # null, or proportional hazards: weight is constant 1
        return ExponentialCurve(rate=spec.control_rate * math.exp(spec.theta))
    return ExperimentalCurve(spec)


def sample_survival(spec: ScenarioSpec, group: int, rng: np.random.Generator,
                    size=None):
    """Draw event times for one arm by inverse-transform sampling."""
    model = survival_model(spec, group)
    if isinstance(model, ExponentialCurve):
        return rng.exponential(1.0 / model.rate, size)
    u = rng.random(size)
    out = model.inverse_cdf(np.atleast_1d(u))
    return float(out[0]) if size is None else out


def sample_trial(spec: ScenarioSpec, rng: np.random.Generator) -> SurvivalDataset:
    """One synthetic trial panel: uniform accrual, balanced groups."""
    n = spec.n_per_group
    if n < 1:
        raise ValueError("n_per_group must be >= 1")
    entries = rng.uniform(0.0, spec.accrual, 2 * n)
    t0 = sample_survival(spec, 0, rng, n)
    t1 = sample_survival(spec, 1, rng, n)
    if spec.dropout_rate > 0:
        dropout = rng.exponential(1.0 / spec.dropout_rate, 2 * n)
    else:
        dropout = np.full(2 * n, math.inf)
    times = np.concatenate([t0, t1])
    groups = np.repeat([0, 1], n)
    subjects = tuple(
        Subject(id=str(i), entry=float(entries[i]), event_time=float(times[i]),
                dropout_time=float(dropout[i]), group=int(groups[i]))
        for i in range(2 * n))
    return SurvivalDataset(subjects)


def planning_assumptions(spec: ScenarioSpec) -> PlanningAssumptions:
    """True-law planning assumptions of the scenario (for calibration)."""
    dropout = ExponentialDropout(spec.dropout_rate) if spec.dropout_rate > 0 \
        else None
    return PlanningAssumptions(
        survival0=survival_model(spec, 0),
        survival1=survival_model(spec, 1),
        recruit_cdf=UniformRecruitment(spec.accrual),
        n=2 * spec.n_per_group,
        r=0.5,
        dropout_cdf=dropout,
    )


_SCENARIO_KEYS = {"control_rate", "rho_star", "gamma_star", "theta",
                  "accrual", "t1", "t2", "n_per_group", "dropout_rate"}


def scenario_from_config(cfg: dict) -> ScenarioSpec:
    unknown = set(cfg) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    return ScenarioSpec(**{k: (int(v) if k == "n_per_group" else float(v))
                           for k, v in cfg.items()})
