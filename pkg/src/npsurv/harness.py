"""End-to-end trial execution and replicated Monte Carlo studies.

One replicate draws a synthetic trial panel and runs every requested
testing procedure on the same data (a variance-reduction choice for the
procedure comparisons).  Replicate ``i`` consumes only streams keyed by
``(base_seed, i, ...)`` and per-procedure bootstrap seeds are keyed by
the procedure name, so adding a procedure or changing the worker count
never perturbs another procedure's results.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ._numeric import rng_from_key, seed_from_key
from .dataset import SurvivalDataset, snapshot
from .design import StageDecision, TwoStageDesign, combine, decide
from .mdir import wild_bootstrap_pvalue
from .planning import (PlanningAssumptions, UniformRecruitment,
                       calibrate_theta, select_weight)
from .scenarios import ScenarioSpec, planning_assumptions, sample_trial
from .splines import GroupExtrapolation, SplineFitError, fit_grid, select_model
from .weights import (WeightSpec, ZeroInformationError, standardized_increment,
                      wlr_statistic)

__all__ = [
    "ProcedureSpec",
    "TrialResult",
    "PlanningContext",
    "STANDARD_PROCEDURES",
    "MDIR_WEIGHTS",
    "CANDIDATE_WEIGHTS",
    "resolve_procedure",
    "run_two_stage_trial",
    "simulate_type1",
    "simulate_power",
    "write_csv",
]

OS_MDIR = "os_mdir"
TS_ADAPTIVE = "ts_adaptive"
TS_FIXED = "ts_fixed"

MDIR_WEIGHTS = (WeightSpec.fh(0, 0), WeightSpec.fh(1, 0), WeightSpec.fh(0, 1))
CANDIDATE_WEIGHTS = (WeightSpec.fh(0, 0), WeightSpec.fh(1, 0),
                     WeightSpec.fh(2, 0), WeightSpec.fh(3, 0),
                     WeightSpec.fh(1, 1), WeightSpec.fh(0, 1),
                     WeightSpec.fh(0, 2), WeightSpec.fh(0, 3))
STANDARD_PROCEDURES = ("OS_MDIR", "OS_restrMDIR", "TS_AD", "TS_restrAD",
                       "TS_LR", "TS_optFH")
DEFAULT_SPLINE_GRID = ((0, 1, 2), ("hazard", "odds", "normal"))


@dataclass(frozen=True)
class ProcedureSpec:
    """One testing procedure of the comparison studies."""

    name: str
    kind: str
    mdir_weights: tuple = ()
    candidate_weights: tuple = ()
    first_weight: WeightSpec = None
    second_weight: WeightSpec = None


@dataclass(frozen=True)
class TrialResult:
    decision: StageDecision
    p1: float
    p2: float = None
    selected_weight: WeightSpec = None
    selected_spline: tuple = None
    combined_p: float = None
    spline_fallback: bool = False


@dataclass(frozen=True)
class PlanningContext:
    """Design-time recruitment/dropout/allocation assumptions."""

    recruit_cdf: object
    dropout_cdf: object = None
    r: float = 0.5

    def assumptions(self, model0, model1, n: int) -> PlanningAssumptions:
        return PlanningAssumptions(survival0=model0, survival1=model1,
                                   recruit_cdf=self.recruit_cdf, n=n,
                                   r=self.r, dropout_cdf=self.dropout_cdf)


def _restricted_mdir(rho_star: float, gamma_star: float) -> tuple:
    if rho_star > gamma_star == 0:
        return (WeightSpec.fh(0, 0), WeightSpec.fh(1, 0))
    if gamma_star > rho_star == 0:
        return (WeightSpec.fh(0, 0), WeightSpec.fh(0, 1))
    return MDIR_WEIGHTS


def _restricted_candidates(rho_star: float, gamma_star: float,
                           candidates: tuple) -> tuple:
    if rho_star > gamma_star:
        keep = [w for w in candidates if w.rho > w.gamma]
    elif gamma_star > rho_star:
        keep = [w for w in candidates if w.gamma > w.rho]
    else:
        return tuple(w for w in candidates if abs(w.rho - w.gamma) <= 1)
    out = [WeightSpec.fh(0, 0)]
    out.extend(w for w in keep if w != WeightSpec.fh(0, 0))
    return tuple(out)


def resolve_procedure(name: str, scenario: ScenarioSpec = None,
                      mdir_weights: tuple = MDIR_WEIGHTS,
                      candidate_weights: tuple = CANDIDATE_WEIGHTS) -> ProcedureSpec:
    """Build one of the named standard procedures for a scenario."""
    if name in ("OS_restrMDIR", "TS_restrAD", "TS_optFH") and scenario is None:
        raise ValueError(f"{name} needs a scenario to resolve its weights")
    if name == "OS_MDIR":
        return ProcedureSpec(name=name, kind=OS_MDIR, mdir_weights=mdir_weights)
    if name == "OS_restrMDIR":
        return ProcedureSpec(name=name, kind=OS_MDIR,
                             mdir_weights=_restricted_mdir(
                                 scenario.rho_star, scenario.gamma_star))
    if name == "TS_AD":
        return ProcedureSpec(name=name, kind=TS_ADAPTIVE,
                             mdir_weights=mdir_weights,
                             candidate_weights=candidate_weights)
    if name == "TS_restrAD":
        return ProcedureSpec(
            name=name, kind=TS_ADAPTIVE,
            mdir_weights=_restricted_mdir(scenario.rho_star, scenario.gamma_star),
            candidate_weights=_restricted_candidates(
                scenario.rho_star, scenario.gamma_star, candidate_weights))
    if name == "TS_LR":
        w = WeightSpec.fh(0, 0)
        return ProcedureSpec(name=name, kind=TS_FIXED, first_weight=w,
                             second_weight=w)
    if name == "TS_optFH":
        w = WeightSpec.fh(scenario.rho_star, scenario.gamma_star)
        return ProcedureSpec(name=name, kind=TS_FIXED, first_weight=w,
                             second_weight=w)
    raise ValueError(f"unknown procedure {name!r}")


def _normal_stage1_pvalue(snap, spec) -> float:
    try:
        res = wlr_statistic(snap, spec)
    except ValueError:
        return 1.0
    if not math.isfinite(res.standardized):
        return 1.0
    return float(ndtr(-res.standardized))


def _fit_candidate_pairs(snap, spline_grid):
    p_values, scales = spline_grid
    grids = []
    for g in (0, 1):
        x, d = snap.group_records(g)
        if (d == 1).sum() < 2:
            return []
        grids.append(fit_grid(x, d.astype(bool), p_values=p_values,
                              scales=scales))
    g0, g1 = grids
    pairs = []
    for key in g0:
        m0, m1 = g0[key], g1.get(key)
        if isinstance(m0, Exception) or m1 is None or isinstance(m1, Exception):
            continue
        pairs.append(GroupExtrapolation(model0=m0, model1=m1))
    return pairs


def run_two_stage_trial(dataset: SurvivalDataset, design: TwoStageDesign,
                        procedure: ProcedureSpec,
                        spline_grid=DEFAULT_SPLINE_GRID,
                        bootstrap_b: int = 1000, seed: int = 0,
                        planning: PlanningContext = None) -> TrialResult:
    """Execute one trial under one procedure and return its outcome."""
    if procedure.kind == OS_MDIR:
        snap2 = snapshot(dataset, design.t2)
        res = wild_bootstrap_pvalue(snap2, procedure.mdir_weights,
                                    bootstrap_b, seed=seed)
        rejected = res.p_value <= design.alpha
        return TrialResult(
            decision=StageDecision.REJECT_AT_FINAL if rejected
            else StageDecision.ACCEPT_AT_FINAL,
            p1=res.p_value)

    snap1 = snapshot(dataset, design.t1)
    if procedure.kind == TS_FIXED:
        p1 = _normal_stage1_pvalue(snap1, procedure.first_weight)
        selected = procedure.second_weight
        cp_selected_spline = None
        fallback = False
    else:
        boot = wild_bootstrap_pvalue(snap1, procedure.mdir_weights,
                                     bootstrap_b, seed=seed)
        p1 = boot.p_value
        selected = None
        cp_selected_spline = None
        fallback = False

    decision = decide(design, p1)
    if decision is not StageDecision.CONTINUE:
        return TrialResult(decision=decision, p1=p1)

    if procedure.kind == TS_ADAPTIVE:
        if planning is None:
            raise ValueError("adaptive procedures need a planning context")
        pairs = _fit_candidate_pairs(snap1, spline_grid)
        try:
            best = select_model(pairs) if pairs else None
        except SplineFitError:
            best = None
        if best is None:
            selected = WeightSpec.fh(0, 0)
            fallback = True
        else:
            assumptions = planning.assumptions(best.model0, best.model1,
                                               dataset.n)
            report = select_weight(assumptions, procedure.candidate_weights,
                                   design, p1)
            selected = report.selected_spec
            cp_selected_spline = (best.p, best.scale)

    snap2 = snapshot(dataset, design.t2)
    inc = standardized_increment(snap1, snap2, selected)
    final = decide(design, p1, inc.p2)
    return TrialResult(decision=final, p1=p1, p2=inc.p2,
                       selected_weight=selected,
                       selected_spline=cp_selected_spline,
                       combined_p=combine(design, p1, inc.p2),
                       spline_fallback=fallback)


def _run_replicates(scenario, design, procedures, bootstrap_b, spline_grid,
                    base_seed, start, stop):
    planning = PlanningContext(
        recruit_cdf=UniformRecruitment(scenario.accrual),
        dropout_cdf=None, r=0.5)
    out = []
    for i in range(start, stop):
        dataset = sample_trial(scenario, rng_from_key(base_seed, i, 0))
        row = {}
        for proc in procedures:
            seed = seed_from_key(base_seed, i, 1, zlib.crc32(proc.name.encode()))
            res = run_two_stage_trial(dataset, design, proc,
                                      spline_grid=spline_grid,
                                      bootstrap_b=bootstrap_b, seed=seed,
                                      planning=planning)
            row[proc.name] = (res.decision.value,
                              str(res.selected_weight)
                              if res.selected_weight is not None else None,
                              res.selected_spline, res.spline_fallback)
        out.append((i, row))
    return out


def _collect(scenario, design, procedures, replicates, base_seed, threads,
             bootstrap_b, spline_grid):
    if replicates < 1:
        raise ValueError("at least one replicate is required")
    args = (scenario, design, tuple(procedures), bootstrap_b, spline_grid,
            base_seed)
    if threads <= 1:
        chunks = [_run_replicates(*args, 0, replicates)]
    else:
        bounds = np.linspace(0, replicates, 4 * threads + 1).astype(int)
        spans = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])
                 if a < b]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_worker, [(args, span) for span in spans]))
    results = [row for chunk in chunks for row in chunk]
    results.sort(key=lambda item: item[0])
    return [row for _, row in results]


def _worker(packed):
    args, (start, stop) = packed
    return _run_replicates(*args, start, stop)


def _is_rejection(decision_value: str) -> bool:
    return decision_value in (StageDecision.REJECT_AT_INTERIM.value,
                              StageDecision.REJECT_AT_FINAL.value)


def _summaries(records, procedures, scenario, theta_multiple, replicates,
               spline_grid=DEFAULT_SPLINE_GRID):
    power_rows, selection_rows, spline_rows = [], [], []
    for proc in procedures:
        decisions = [r[proc.name] for r in records]
        n_reject = sum(_is_rejection(d[0]) for d in decisions)
        n_early = sum(d[0] == StageDecision.REJECT_AT_INTERIM.value
                      for d in decisions)
        p_hat = n_reject / replicates
        base = {
            "scenario": f"fh({scenario.rho_star:g},{scenario.gamma_star:g})",
            "rho_star": scenario.rho_star,
            "gamma_star": scenario.gamma_star,
            "theta_multiple": theta_multiple,
            "procedure": proc.name,
            "n_per_group": scenario.n_per_group,
            "replicates": replicates,
        }
        power_rows.append(dict(
            base,
            power=p_hat,
            early_rejection_rate=n_early / replicates,
            mc_halfwidth=1.96 * math.sqrt(p_hat * (1 - p_hat) / replicates),
        ))
        if proc.kind != TS_ADAPTIVE:
            continue
        continued = [d for d in decisions if d[1] is not None]
        if not continued:
            continue
        for cand in proc.candidate_weights:
            freq = sum(d[1] == str(cand) for d in continued) / len(continued)
            is_fh = cand.family == "fleming_harrington"
            selection_rows.append(dict(
                base,
                candidate_rho=cand.rho if is_fh else cand.s_star,
                candidate_gamma=cand.gamma if is_fh else "",
                frequency=freq,
            ))
        p_values, scales = spline_grid
        for p in p_values:
            for scale in scales:
                freq = sum(d[2] == (p, scale) for d in continued) / len(continued)
                spline_rows.append(dict(base, p=p, scale=scale, frequency=freq))
    return power_rows, selection_rows, spline_rows


def simulate_type1(scenario: ScenarioSpec, design: TwoStageDesign,
                   procedures, replicates: int, base_seed: int = 0,
                   threads: int = 1, bootstrap_b: int = 1000,
                   spline_grid=DEFAULT_SPLINE_GRID):
    """Empirical rejection rates under the null (theta forced to 0)."""
    null_scenario = scenario.with_theta(0.0)
    procedures = [resolve_procedure(p, null_scenario) if isinstance(p, str)
                  else p for p in procedures]
    records = _collect(null_scenario, design, procedures, replicates,
                       base_seed, threads, bootstrap_b, spline_grid)
    return _summaries(records, procedures, null_scenario, 0.0, replicates,
                      spline_grid)


def simulate_power(scenario: ScenarioSpec, design: TwoStageDesign, procedures,
                   theta_multiples, replicates: int, base_seed: int = 0,
                   threads: int = 1, bootstrap_b: int = 1000,
                   spline_grid=DEFAULT_SPLINE_GRID, theta0: float = None,
                   target: float = 0.5):
    """Power/selection tables over multiples of the calibrated effect.

    ``theta0`` defaults to the effect size at which the analytically
    computed power of the two-stage test with the scenario's matching
    weight equals ``target``.
    """
    if theta0 is None:
        spec = WeightSpec.fh(scenario.rho_star, scenario.gamma_star)

        def assumptions_for(theta):
            return planning_assumptions(scenario.with_theta(theta))

        theta0 = calibrate_theta(assumptions_for, design, spec, target)
    power_rows, selection_rows, spline_rows = [], [], []
    for multiple in theta_multiples:
        sc = scenario.with_theta(multiple * theta0)
        procs = [resolve_procedure(p, sc) if isinstance(p, str) else p
                 for p in procedures]
        records = _collect(sc, design, procs, replicates, base_seed, threads,
                           bootstrap_b, spline_grid)
        p_rows, s_rows, m_rows = _summaries(records, procs, sc, multiple,
                                            replicates, spline_grid)
        power_rows.extend(p_rows)
        selection_rows.extend(s_rows)
        spline_rows.extend(m_rows)
    return power_rows, selection_rows, spline_rows, theta0


def _format_value(v):
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def write_csv(path, rows, fieldnames):
    """Write rows with fixed 6-significant-digit float formatting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(fieldnames) + "\n")
        for row in rows:
            fh.write(",".join(_format_value(row.get(k, "")) for k in fieldnames)
                     + "\n")


POWER_COLUMNS = ("scenario", "rho_star", "gamma_star", "theta_multiple",
                 "procedure", "n_per_group", "replicates", "power",
                 "early_rejection_rate", "mc_halfwidth")
SELECTION_COLUMNS = ("scenario", "rho_star", "gamma_star", "theta_multiple",
                     "procedure", "n_per_group", "replicates",
                     "candidate_rho", "candidate_gamma", "frequency")
SPLINE_COLUMNS = ("scenario", "rho_star", "gamma_star", "theta_multiple",
                  "procedure", "n_per_group", "replicates", "p", "scale",
                  "frequency")
