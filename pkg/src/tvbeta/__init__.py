"""Kernel-smoothed estimation for the time-varying directed beta-model."""
from .analysis import cluster, mds_embed, select_k, trajectory_distance
from .bandwidth import loo_cv, rate_bandwidth
from .estimator import (
    FitOptions,
    FitReport,
    change_point_scan,
    fit_trajectory,
    newton_solve,
    pointwise_fit,
    smooth_pointwise,
)
from .exceptions import (
    ClassViolation,
    DomainError,
    NoDataError,
    ParameterError,
    SingularJacobianError,
    TVBetaError,
)
from .inference import confidence_band, theoretical_bias, variance_estimate
from .kernel import EPANECHNIKOV, KernelSpec, moments
from .matclass import StructuredJacobian, approx_inverse, class_bounds
from .network import DynamicNetwork, ParamTrajectory, ParamVector, edge_prob, validate
from .simlab import ParamFamily, SimDesign, generate

__version__ = "0.1.0"
