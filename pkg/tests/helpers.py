"""Shared fixtures/oracles for the test suite."""

import math

import numpy as np

from npsurv.dataset import Subject, SurvivalDataset


def make_subject(i, entry=0.0, event=math.inf, dropout=math.inf, group=0):
    return Subject(id=str(i), entry=entry, event_time=event,
                   dropout_time=dropout, group=group)


def simple_dataset(rows):
    """rows: iterable of (entry, event_time, dropout_time, group)."""
    return SurvivalDataset(tuple(
        make_subject(i, entry=r, event=t, dropout=c, group=g)
        for i, (r, t, c, g) in enumerate(rows)))


def random_dataset(rng, n_per_group=20, accrual=0.0, rate0=0.5, rate1=0.5,
                   dropout_rate=0.0):
    """Two-group exponential panel with optional uniform accrual/dropout."""
    rows = []
    for g, rate in ((0, rate0), (1, rate1)):
        entry = rng.uniform(0.0, accrual, n_per_group) if accrual > 0 \
            else np.zeros(n_per_group)
        t = rng.exponential(1.0 / rate, n_per_group)
        if dropout_rate > 0:
            c = rng.exponential(1.0 / dropout_rate, n_per_group)
        else:
            c = np.full(n_per_group, math.inf)
        rows.extend((e, ti, ci, g) for e, ti, ci in zip(entry, t, c))
    return simple_dataset(rows)


def km_oracle(times, events):
    """Brute-force product-limit estimate over sorted distinct event times."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    out_t, out_s = [], []
    s = 1.0
    for u in sorted(set(times[events == 1])):
        at_risk = int((times >= u).sum())
        d = int(((times == u) & (events == 1)).sum())
        s *= 1.0 - d / at_risk
        out_t.append(u)
        out_s.append(s)
    return np.array(out_t), np.array(out_s)


def logrank_oracle(times, events, groups):
    """Textbook log-rank O-E sum and hypergeometric variance (no ties).

    Oriented as observed-minus-expected events in group 0, matching the
    package's superiority-of-group-1 orientation.
    """
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=int)
    groups = np.asarray(groups, dtype=int)
    o_minus_e = 0.0
    var = 0.0
    for u in sorted(set(times[events == 1])):
        at_risk = (times >= u).sum()
        at_risk0 = ((times >= u) & (groups == 0)).sum()
        d = ((times == u) & (events == 1)).sum()
        d0 = ((times == u) & (events == 1) & (groups == 0)).sum()
        frac0 = at_risk0 / at_risk
        o_minus_e += d0 - d * frac0
        var += d * frac0 * (1 - frac0)
    return o_minus_e, var
