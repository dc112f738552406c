"""Numerical laboratory for the Hesse-Koszul flow on flat tori."""

from .errors import (
    BadParameter,
    ConfigError,
    FieldError,
    HKFlowError,
    InsufficientSnapshots,
    MissingRun,
    NotPositiveDefinite,
    StepTooLarge,
    ZeroVector,
)
from .grid import Field, GridSpec
from .geometry import (
    HessianStructure,
    MetricField,
    PotentialJet,
    beta_tensor,
    christoffel_gamma,
    hessian_curvature,
    koszul_forms,
    log_det_field,
    metric_from_potential,
    min_eigen_gap,
    riemann_from_Q,
    t_tensor,
)
from .flow import FlowConfig, FlowState, Trajectory, run_flow
from .fixtures import get_fixture
from .diagnostics import DiagnosticsReport, beta_eigenvalues, decay_rate, lemma41_residuals
from .tangent_lift import kahler_curvature, kahler_ricci, lift_metric
from .gate import build_cutoff, sb_estimate

__version__ = "0.1.0"
