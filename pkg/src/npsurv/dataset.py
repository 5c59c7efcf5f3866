"""Trial panel data model, calendar-time snapshots, and nonparametric estimators.

A trial panel stores, per subject, the calendar entry time, the trial-time
event and dropout times, and a binary group label.  All estimators operate
on a :class:`Snapshot`, i.e. the panel administratively censored at a given
calendar time, so interim and final looks are ordinary function calls.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Subject",
    "SurvivalDataset",
    "Snapshot",
    "StepFunction",
    "EmptyGroupError",
    "IpdParseError",
    "snapshot",
    "kaplan_meier",
    "nelson_aalen",
    "ingest_ipd",
    "impute_recruitment",
]


class EmptyGroupError(ValueError):
    """Raised when an estimator is asked for a group with no records."""


class IpdParseError(ValueError):
    """Raised for malformed IPD files; carries the offending row number."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class Subject:
    """One trial participant.

    ``entry`` is calendar time; ``event_time`` and ``dropout_time`` are
    trial times measured from entry.  Either may be ``inf`` when the
    corresponding endpoint was never reached.
    """

    id: str
    entry: float
    event_time: float
    dropout_time: float
    group: int

    def __post_init__(self):
        if self.entry < 0:
            raise ValueError(f"subject {self.id}: entry must be >= 0")
        if not self.event_time > 0:
            raise ValueError(f"subject {self.id}: event_time must be > 0")
        if not self.dropout_time > 0:
            raise ValueError(f"subject {self.id}: dropout_time must be > 0")
        if self.group not in (0, 1):
            raise ValueError(f"subject {self.id}: group must be 0 or 1")


@dataclass(frozen=True)
class SurvivalDataset:
    """An ordered collection of subjects with cached column arrays."""

    subjects: tuple
    entries_known: bool = True
    entry: np.ndarray = field(init=False, repr=False, compare=False)
    event_time: np.ndarray = field(init=False, repr=False, compare=False)
    dropout_time: np.ndarray = field(init=False, repr=False, compare=False)
    group: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        subs = tuple(self.subjects)
        if not subs:
            raise ValueError("dataset must contain at least one subject")
        object.__setattr__(self, "subjects", subs)
        object.__setattr__(self, "entry",
                           np.array([s.entry for s in subs], dtype=float))
        object.__setattr__(self, "event_time",
                           np.array([s.event_time for s in subs], dtype=float))
        object.__setattr__(self, "dropout_time",
                           np.array([s.dropout_time for s in subs], dtype=float))
        object.__setattr__(self, "group",
                           np.array([s.group for s in subs], dtype=np.int8))

    @property
    def n(self) -> int:
        return len(self.subjects)


@dataclass(frozen=True)
class Snapshot:
    """The dataset as observable at calendar time ``calendar_time``.

    ``x``/``delta``/``z`` hold the censored observation time, event
    indicator and group of every subject enrolled by that time.
    ``n_total`` is the full panel size and fixes the n^(-1/2) scaling of
    the log-rank processes, so increments across snapshots of the same
    dataset are comparable.
    """

    calendar_time: float
    x: np.ndarray
    delta: np.ndarray
    z: np.ndarray
    n_total: int

    @property
    def n_records(self) -> int:
        return self.x.shape[0]

    @property
    def n_events(self) -> int:
        return int(self.delta.sum())

    def group_records(self, group: int):
        """(observed time, event indicator) arrays for one group."""
        mask = self.z == group
        return self.x[mask], self.delta[mask]


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function with an explicit left-limit query."""

    jump_times: np.ndarray
    values: np.ndarray
    initial_value: float = 1.0

    def __call__(self, s):
        idx = np.searchsorted(self.jump_times, s, side="right")
        return self._pick(idx)

    def left_limit(self, s):
        """Value immediately before ``s`` (ties excluded)."""
        idx = np.searchsorted(self.jump_times, s, side="left")
        return self._pick(idx)

    def _pick(self, idx):
        padded = np.concatenate(([self.initial_value], self.values))
        out = padded[idx]
        if np.ndim(idx) == 0:
            return float(out)
        return out


def snapshot(dataset: SurvivalDataset, t: float) -> Snapshot:
    """Administratively censor the panel at calendar time ``t``.

    Subjects with ``entry > t`` have accrued no exposure and are dropped
    from the records (they still count toward ``n_total``).
    """
    if t < 0:
        raise ValueError("calendar time must be >= 0")
    enrolled = dataset.entry <= t
    exposure = np.maximum(t - dataset.entry[enrolled], 0.0)
    cens = np.minimum(dataset.dropout_time[enrolled], exposure)
    x = np.minimum(dataset.event_time[enrolled], cens)
    delta = (dataset.event_time[enrolled] <= cens).astype(np.int8)
    return Snapshot(calendar_time=float(t), x=x, delta=delta,
                    z=dataset.group[enrolled].copy(), n_total=dataset.n)


def _group_arrays(snap: Snapshot, group):
    if group == "pooled":
        return snap.x, snap.delta
    if group not in (0, 1):
        raise ValueError("group must be 0, 1 or 'pooled'")
    mask = snap.z == group
    if not mask.any():
        raise EmptyGroupError(f"no subjects in group {group} at t={snap.calendar_time}")
    return snap.x[mask], snap.delta[mask]


def _event_risk_table(x: np.ndarray, delta: np.ndarray):
    """Unique event times with event counts and pre-removal risk sets."""
    xs = np.sort(x)
    ev_times = x[delta == 1]
    if ev_times.size == 0:
        return np.empty(0), np.empty(0, dtype=int), np.empty(0, dtype=int)
    times = np.unique(ev_times)
    d = np.bincount(np.searchsorted(times, ev_times), minlength=times.size)
    at_risk = xs.size - np.searchsorted(xs, times, side="left")
    return times, d, at_risk


def kaplan_meier(snap: Snapshot, group="pooled") -> StepFunction:
    """Product-limit estimate of P[T >= s] from one snapshot.

    Tied events share the risk set counted before any removal at that
    time; censorings tied with events are removed afterwards.
    """
    x, delta = _group_arrays(snap, group)
    times, d, at_risk = _event_risk_table(x, delta)
    surv = np.cumprod(1.0 - d / at_risk) if times.size else np.empty(0)
    return StepFunction(jump_times=times, values=surv, initial_value=1.0)


def nelson_aalen(snap: Snapshot, group="pooled") -> StepFunction:
    """Nelson-Aalen estimate of the cumulative hazard from one snapshot."""
    x, delta = _group_arrays(snap, group)
    times, d, at_risk = _event_risk_table(x, delta)
    cumhaz = np.cumsum(d / at_risk) if times.size else np.empty(0)
    return StepFunction(jump_times=times, values=cumhaz, initial_value=0.0)


def ingest_ipd(path, fmt: str = "csv") -> SurvivalDataset:
    """Read an IPD file with header ``id,time,event,group[,entry]``.

    Without an ``entry`` column all entries are set to 0 and
    ``entries_known`` is False; run :func:`impute_recruitment` before
    taking snapshots at intermediate calendar times.
    """
    if fmt != "csv":
        raise ValueError(f"unsupported format: {fmt!r}")
    subjects = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        required = {"id", "time", "event", "group"}
        if not required.issubset(fields):
            missing = sorted(required - set(fields))
            raise IpdParseError(1, f"missing columns: {', '.join(missing)}")
        has_entry = "entry" in fields
        for rownum, row in enumerate(reader, start=2):
            try:
                time = float(row["time"])
                event = int(row["event"])
                grp = int(row["group"])
                entry = float(row["entry"]) if has_entry else 0.0
            except (TypeError, ValueError) as exc:
                raise IpdParseError(rownum, f"unparsable value ({exc})") from None
            if time <= 0:
                raise IpdParseError(rownum, f"time must be > 0, got {time}")
            if event not in (0, 1):
                raise IpdParseError(rownum, f"event must be 0 or 1, got {event}")
            if grp not in (0, 1):
                raise IpdParseError(rownum, f"group must be 0 or 1, got {grp}")
            if entry < 0:
                raise IpdParseError(rownum, f"entry must be >= 0, got {entry}")
            if event == 1:
                subjects.append(Subject(id=row["id"], entry=entry,
                                        event_time=time, dropout_time=math.inf,
                                        group=grp))
            else:
                subjects.append(Subject(id=row["id"], entry=entry,
                                        event_time=math.inf, dropout_time=time,
                                        group=grp))
    if not subjects:
        raise IpdParseError(2, "file contains no data rows")
    return SurvivalDataset(tuple(subjects), entries_known=has_entry)


def impute_recruitment(final_ipd: SurvivalDataset, t2: float,
                       rng: np.random.Generator) -> SurvivalDataset:
    """Reconstruct entry times from data observed at the final look ``t2``.

    Censored subjects get the deterministic entry ``t2 - X``; subjects
    with an observed event get an entry drawn uniformly on [0, t2 - T],
    which is the conditional law of a uniform recruitment given the
    event was observed by ``t2``.
    """
    x_final = np.minimum(final_ipd.event_time, final_ipd.dropout_time)
    if t2 < x_final.max():
        raise ValueError("t2 must be >= every observed time")
    subjects = []
    for subj, x in zip(final_ipd.subjects, x_final):
        if subj.event_time <= min(subj.dropout_time, t2):
            entry = float(rng.uniform(0.0, t2 - subj.event_time))
        else:
            entry = float(t2 - x)
        subjects.append(Subject(id=subj.id, entry=entry,
                                event_time=subj.event_time,
                                dropout_time=subj.dropout_time,
                                group=subj.group))
    return SurvivalDataset(tuple(subjects), entries_known=True)
