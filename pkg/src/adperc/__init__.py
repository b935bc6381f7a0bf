"""Exact replica-symmetric theory and Monte-Carlo validation of the
teacher-student spherical perceptron under anomaly-detection class imbalance."""

__version__ = "0.1.0"

from .landscape import ControlParams, OrderParams
from .metrics import MetricsReport, boundary_density, report
from .saddle import SaddleSolution, SolverSettings, continuation_sweep, solve
from .simulator import SimConfig, SimResult, run_simulation
from .special import QuadratureSpec, gauss_tail_H, rho_intrinsic

__all__ = [
    "__version__",
    "ControlParams",
    "OrderParams",
    "MetricsReport",
    "QuadratureSpec",
    "SaddleSolution",
    "SimConfig",
    "SimResult",
    "SolverSettings",
    "boundary_density",
    "continuation_sweep",
    "gauss_tail_H",
    "report",
    "rho_intrinsic",
    "run_simulation",
    "solve",
]
