"""Adaptive two-stage survival testing under non-proportional hazards.

Building blocks: trial panels and snapshots, weighted log-rank statistics,
the one-sided multi-directional combination test with a wild bootstrap,
flexible parametric spline survival models for extrapolation, two-stage
adaptive designs, conditional-power based weight selection, synthetic
scenario generation, and a replicated Monte Carlo harness.
"""

from .dataset import (Snapshot, StepFunction, Subject, SurvivalDataset,
                      impute_recruitment, ingest_ipd, kaplan_meier,
                      nelson_aalen, snapshot)
from .design import (StageDecision, TwoStageDesign, combine, conditional_error,
                     decide, level_check, obf_bounds, pocock_bounds)
from .mdir import MdirResult, mdir_statistic, pseudo_inverse, wild_bootstrap_pvalue
from .weights import (IncrementResult, WeightSpec, WlrResult, covariance_matrix,
                      standardized_increment, weight_value, wlr_statistic)

__version__ = "0.1.0"
