"""One-sided multi-directional log-rank combination test.

The statistic is the maximum of Wald-type quadratic forms over all
nonempty subsets of a weight collection, restricted to subsets whose
pseudo-inverse-transformed statistic vector is componentwise nonnegative.
Its null distribution is approximated by a Rademacher multiplier (wild)
bootstrap that sign-flips each subject's event contribution while reusing
the estimated covariance (the multipliers square to one, leaving the
quadratic covariance estimator unchanged).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._numeric import rng_from_key
from .dataset import Snapshot
from .weights import (EventTable, WeightSpec, event_table,
                      weight_values_at_events, _check_two_groups)

__all__ = [
    "MdirResult",
    "pseudo_inverse",
    "mdir_statistic",
    "mdir_from_stats",
    "wild_bootstrap_pvalue",
]

DEFAULT_REL_TOL = 1e-10
_MAX_WEIGHTS = 6
_MAX_EXHAUSTIVE = 20


@dataclass(frozen=True)
class MdirResult:
    statistic: float
    p_value: float
    bootstrap_reps: int
    achieving_subset: tuple


def pseudo_inverse(m: np.ndarray, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric matrix via eigendecomposition.

    Eigenvalues at or below ``rel_tol`` times the largest eigenvalue are
    treated as zero.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    scale = np.abs(m).max()
    if np.abs(m - m.T).max() > 1e-12 * max(scale, 1e-300):
        raise ValueError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    keep = vals > rel_tol * vals.max()
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / vals[keep]
    out = (vecs * inv) @ vecs.T
    return 0.5 * (out + out.T)


def _subset_masks(m: int):
    masks = []
    for bits in range(1, 2 ** m):
        masks.append(tuple(i for i in range(m) if bits >> i & 1))
    return masks


def _subset_pinvs(sigma: np.ndarray, rel_tol: float):
    pinvs = []
    for subset in _subset_masks(sigma.shape[0]):
        idx = np.array(subset)
        pinvs.append((subset, pseudo_inverse(sigma[np.ix_(idx, idx)], rel_tol)))
    return pinvs


def mdir_from_stats(t_vec: np.ndarray, sigma: np.ndarray,
                    rel_tol: float = DEFAULT_REL_TOL):
    """Maximum constrained Wald form from a statistic vector and covariance."""
    best = 0.0
    best_subset = ()
    for subset, pinv in _subset_pinvs(sigma, rel_tol):
        idx = np.array(subset)
        t_sub = t_vec[idx]
        direction = pinv @ t_sub
        if np.all(direction >= 0.0):
            value = float(t_sub @ direction)
            if value > best:
                best = value
                best_subset = subset
    return best, best_subset


def _stats_for_specs(table: EventTable, specs):
    q = np.column_stack([weight_values_at_events(table, s) for s in specs]) \
        if table.n_events else np.zeros((0, len(specs)))
    share1 = table.at_risk_1 / table.at_risk if table.n_events else np.empty(0)
    contrib = q * (share1 - table.z)[:, None]
    t_vec = contrib.sum(axis=0) / np.sqrt(table.n_total)
    w = share1 * (1.0 - share1)
    sigma = (q * w[:, None]).T @ q / table.n_total
    return t_vec, 0.5 * (sigma + sigma.T), contrib


def _validate_specs(specs):
    specs = tuple(specs)
    if not 1 <= len(specs) <= _MAX_WEIGHTS:
        raise ValueError(f"between 1 and {_MAX_WEIGHTS} weight specs required")
    if len(set(specs)) != len(specs):
        raise ValueError("weight specs must be pairwise distinct")
    return specs


def mdir_statistic(snap: Snapshot, specs, rel_tol: float = DEFAULT_REL_TOL):
    """One-sided combination statistic W and the subset attaining it."""
    specs = _validate_specs(specs)
    _check_two_groups(snap)
    table = event_table(snap)
    t_vec, sigma, _ = _stats_for_specs(table, specs)
    return mdir_from_stats(t_vec, sigma, rel_tol)


def _rademacher_rows(seed: int, b_reps: int, n: int) -> np.ndarray:
    signs = np.empty((b_reps, n))
    for b in range(b_reps):
        gen = rng_from_key(seed, b)
        signs[b] = gen.integers(0, 2, size=n) * 2.0 - 1.0
    return signs


def _exhaustive_rows(n: int) -> np.ndarray:
    if n > _MAX_EXHAUSTIVE:
        raise ValueError(f"exhaustive enumeration limited to n <= {_MAX_EXHAUSTIVE}")
    codes = np.arange(2 ** n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n)) & 1) * 2.0 - 1.0


def wild_bootstrap_pvalue(snap: Snapshot, specs, b_reps: int, seed: int = 0,
                          rel_tol: float = DEFAULT_REL_TOL,
                          exhaustive: bool = False) -> MdirResult:
    """Wild-bootstrap p-value for the one-sided combination statistic.

    Per replicate ``b`` the sign of every subject's event contribution
    is flipped by a Rademacher multiplier drawn from a counter-based
    stream keyed by ``(seed, b)``, so results do not depend on how
    replicates are scheduled.  With ``exhaustive`` all 2^n sign vectors
    are enumerated instead and ``b_reps`` is ignored.
    """
    specs = _validate_specs(specs)
    _check_two_groups(snap)
    if not exhaustive and b_reps < 1:
        raise ValueError("at least one bootstrap replicate is required")
    table = event_table(snap)
    t_vec, sigma, contrib = _stats_for_specs(table, specs)

    pinvs = _subset_pinvs(sigma, rel_tol)
    observed = 0.0
    best_subset = ()
    for subset, pinv in pinvs:
        idx = np.array(subset)
        direction = pinv @ t_vec[idx]
        if np.all(direction >= 0.0):
            value = float(t_vec[idx] @ direction)
            if value > observed:
                observed, best_subset = value, subset

    if exhaustive:
        signs = _exhaustive_rows(snap.n_records)
    else:
        signs = _rademacher_rows(seed, b_reps, snap.n_records)
    reps = signs.shape[0]
    t_star = (signs[:, table.record_index] @ contrib) / np.sqrt(table.n_total)

    w_star = np.zeros(reps)
    for subset, pinv in pinvs:
        idx = np.array(subset)
        t_sub = t_star[:, idx]
        direction = t_sub @ pinv
        ok = np.all(direction >= 0.0, axis=1)
        value = np.einsum("ij,ij->i", t_sub, direction)
        np.maximum(w_star, np.where(ok, value, 0.0), out=w_star)

    exceed = int(np.count_nonzero(w_star >= observed))
    p_value = (1.0 + exceed) / (reps + 1.0)
    return MdirResult(statistic=observed, p_value=float(p_value),
                      bootstrap_reps=reps, achieving_subset=best_subset)
