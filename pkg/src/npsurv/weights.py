"""Weight families and the weighted log-rank statistic machinery.

The statistic is oriented so that positive values are evidence for the
one-sided alternative of superiority of group 1 (lower hazard in group 1).
Equivalently it accumulates observed-minus-expected events in group 0,
which keeps the drift, increment and conditional-power machinery in one
consistent direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .dataset import Snapshot

__all__ = [
    "WeightSpec",
    "WlrResult",
    "IncrementResult",
    "EventTable",
    "ZeroInformationError",
    "weight_value",
    "wlr_statistic",
    "covariance_matrix",
    "standardized_increment",
    "event_table",
    "weight_values_at_events",
]

FLEMING_HARRINGTON = "fleming_harrington"
MODEST = "modest"


class ZeroInformationError(RuntimeError):
    """Raised when a variance (increment) is not positive."""


@dataclass(frozen=True)
class WeightSpec:
    """Descriptor of one log-rank weight function.

    Fleming-Harrington weights are F(s-)^rho * S(s-)^gamma evaluated on
    the pooled Kaplan-Meier curve; modest weights are
    1 / max(S(s-), S(s_star-)).
    """

    family: str
    rho: float = 0.0
    gamma: float = 0.0
    s_star: float = 0.0

    def __post_init__(self):
        if self.family not in (FLEMING_HARRINGTON, MODEST):
            raise ValueError(f"unknown weight family {self.family!r}")
        if self.family == FLEMING_HARRINGTON:
            if self.rho < 0 or self.gamma < 0:
                raise ValueError("Fleming-Harrington parameters must be >= 0")
        elif self.s_star < 0:
            raise ValueError("modest threshold must be >= 0")

    @classmethod
    def fh(cls, rho: float, gamma: float) -> "WeightSpec":
        return cls(family=FLEMING_HARRINGTON, rho=float(rho), gamma=float(gamma))

    @classmethod
    def modest(cls, s_star: float) -> "WeightSpec":
        return cls(family=MODEST, s_star=float(s_star))

    @classmethod
    def parse(cls, text: str) -> "WeightSpec":
        """Parse the CLI form ``fh:rho,gamma`` or ``modest:s_star``."""
        head, sep, tail = text.partition(":")
        if not sep:
            raise ValueError(f"malformed weight spec {text!r}")
        if head == "fh":
            parts = tail.split(",")
            if len(parts) != 2:
                raise ValueError(f"malformed weight spec {text!r}")
            return cls.fh(float(parts[0]), float(parts[1]))
        if head == "modest":
            return cls.modest(float(tail))
        raise ValueError(f"unknown weight family in {text!r}")

    def __str__(self) -> str:
        if self.family == FLEMING_HARRINGTON:
            return f"fh:{self.rho:g},{self.gamma:g}"
        return f"modest:{self.s_star:g}"


@dataclass(frozen=True)
class WlrResult:
    statistic: float
    variance: float
    standardized: float
    events_used: int


@dataclass(frozen=True)
class IncrementResult:
    z: float
    p2: float


@dataclass(frozen=True)
class EventTable:
    """Per-event quantities shared by every statistic on one snapshot.

    One row per observed event (ties kept separate, all sharing the
    pre-removal risk set).  ``km_left`` is the pooled Kaplan-Meier value
    just before the event time; ``record_index`` locates the event
    subject among the snapshot records (for multiplier bootstraps).
    """

    s: np.ndarray
    z: np.ndarray
    at_risk: np.ndarray
    at_risk_1: np.ndarray
    km_left: np.ndarray
    record_index: np.ndarray
    unique_times: np.ndarray
    km_after: np.ndarray
    n_total: int
    n_records: int

    @property
    def n_events(self) -> int:
        return self.s.shape[0]

    def km_left_at(self, s: float) -> float:
        """Pooled KM left limit at an arbitrary trial time."""
        idx = np.searchsorted(self.unique_times, s, side="left")
        return 1.0 if idx == 0 else float(self.km_after[idx - 1])


def event_table(snap: Snapshot) -> EventTable:
    xs = np.sort(snap.x)
    xs1 = np.sort(snap.x[snap.z == 1])
    ev_mask = snap.delta == 1
    ev_idx = np.flatnonzero(ev_mask)
    ev_x = snap.x[ev_idx]
    order = np.argsort(ev_x, kind="stable")
    ev_idx = ev_idx[order]
    ev_x = ev_x[order]

    times = np.unique(ev_x)
    pos = np.searchsorted(times, ev_x)
    d = np.bincount(pos, minlength=times.size)
    at_risk_u = xs.size - np.searchsorted(xs, times, side="left")
    at_risk1_u = xs1.size - np.searchsorted(xs1, times, side="left")
    km_after = np.cumprod(1.0 - d / at_risk_u) if times.size else np.empty(0)
    km_before = np.concatenate(([1.0], km_after[:-1])) if times.size else np.empty(0)

    return EventTable(
        s=ev_x,
        z=snap.z[ev_idx].astype(float),
        at_risk=at_risk_u[pos].astype(float),
        at_risk_1=at_risk1_u[pos].astype(float),
        km_left=km_before[pos] if times.size else np.empty(0),
        record_index=ev_idx,
        unique_times=times,
        km_after=km_after,
        n_total=snap.n_total,
        n_records=snap.n_records,
    )


def weight_value(spec: WeightSpec, pooled_km, s: float) -> float:
    """Evaluate a weight function at trial time ``s`` given the pooled KM."""
    surv_left = pooled_km.left_limit(s)
    if spec.family == FLEMING_HARRINGTON:
        return float((1.0 - surv_left) ** spec.rho * surv_left ** spec.gamma)
    ref = pooled_km.left_limit(spec.s_star)
    return float(1.0 / max(surv_left, ref))


def weight_values_at_events(table: EventTable, spec: WeightSpec) -> np.ndarray:
    if spec.family == FLEMING_HARRINGTON:
        # 0**0 == 1.0 in numpy, which is the convention needed at F(s-)=0.
        return (1.0 - table.km_left) ** spec.rho * table.km_left ** spec.gamma
    ref = table.km_left_at(spec.s_star)
    return 1.0 / np.maximum(table.km_left, ref)


class EmptyGroupsError(ValueError):
    pass


def _check_two_groups(snap: Snapshot):
    if snap.n_records == 0 or (snap.z == 0).sum() == 0 or (snap.z == 1).sum() == 0:
        raise EmptyGroupsError("both groups must be present in the snapshot")


def _statistic_from_parts(weights: np.ndarray, table: EventTable):
    share1 = table.at_risk_1 / table.at_risk
    contrib = weights * (share1 - table.z)
    stat = contrib.sum() / np.sqrt(table.n_total)
    var = (weights ** 2 * share1 * (1.0 - share1)).sum() / table.n_total
    return float(stat), float(var)


def wlr_statistic(snap: Snapshot, spec: WeightSpec) -> WlrResult:
    """Non-standardized weighted log-rank statistic with its variance."""
    _check_two_groups(snap)
    table = event_table(snap)
    weights = weight_values_at_events(table, spec)
    stat, var = _statistic_from_parts(weights, table)
    std = stat / np.sqrt(var) if var > 0 else float("nan")
    return WlrResult(statistic=stat, variance=var, standardized=std,
                     events_used=table.n_events)


def covariance_matrix(snap: Snapshot, specs) -> np.ndarray:
    """Estimated covariance of the weighted log-rank statistic vector."""
    specs = list(specs)
    if not specs:
        raise ValueError("at least one weight spec is required")
    _check_two_groups(snap)
    table = event_table(snap)
    q = np.column_stack([weight_values_at_events(table, s) for s in specs]) \
        if table.n_events else np.zeros((0, len(specs)))
    share1 = table.at_risk_1 / table.at_risk if table.n_events else np.empty(0)
    w = share1 * (1.0 - share1)
    sigma = (q * w[:, None]).T @ q / table.n_total
    return 0.5 * (sigma + sigma.T)


def standardized_increment(snap1: Snapshot, snap2: Snapshot,
                           spec: WeightSpec) -> IncrementResult:
    """Standardized calendar-time increment of the weighted log-rank process.

    Weights and risk sets are re-evaluated from each snapshot's own
    pooled Kaplan-Meier curve; the denominator is the increment of the
    variance estimator between the two looks.
    """
    if not snap1.calendar_time < snap2.calendar_time:
        raise ValueError("snapshots must be ordered in calendar time")
    if snap1.n_total != snap2.n_total:
        raise ValueError("snapshots must come from the same dataset")
    r1 = wlr_statistic(snap1, spec) if snap1.n_events else None
    r2 = wlr_statistic(snap2, spec)
    stat1 = r1.statistic if r1 is not None else 0.0
    var1 = r1.variance if r1 is not None else 0.0
    dvar = r2.variance - var1
    if dvar <= 0:
        raise ZeroInformationError(
            "no additional information accrued between the two looks")
    z = (r2.statistic - stat1) / np.sqrt(dvar)
    return IncrementResult(z=float(z), p2=float(special.ndtr(-z)))
