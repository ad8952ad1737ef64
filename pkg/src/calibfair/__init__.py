"""Post-processing of group-labelled risk scores into calibrated scores with equal error rates."""

from .diagnostics import EvaluationReport, FiniteJoint, calibration_curve, evaluate, impossibility_check
from .estimator import EqualErrorRatePostProcessor
from .geometry import (
    ConvexPolygon,
    DecisionPolicy,
    FeasibilityReport,
    RocCurve,
    Verdict,
    achievable_set,
    breve_point,
    clip_halfplane,
    feasibility,
    feasible_region,
    intersect,
    roc_from_distribution,
)
from .ingest import DatasetSchema, SyntheticSpec, generate_synthetic, load_compas, load_csv
from .pipeline import PipelineResult, postprocess_pipeline
from .rates import PenaltySpec, RateTarget, expected_loss, optimize_basic, optimize_flexible, region_R_A
from .scores import DiscreteScoreDistribution, GroupStats, LabeledSample, Samples, calibrate_bins, discretize, group_stats
from .simplex import LinearProgram, LpSolution, LpStatus, solve_lp
from .transport import TargetUnreachable, TransportKernel, TransportProblemSpec, apply_kernel, build_lp, solve_kernel

__version__ = "0.1.0"
