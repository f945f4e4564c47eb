"""qlklab: spectral-truncation laboratory for quasi-linear Kolmogorov
equations, the associated nonlinearly perturbed SPDE, and the small-noise
action functional."""

from .spectral import (
    SpectralModel,
    DiagonalOperator,
    GaussianMeasure,
    HolderReport,
    qt_covariance,
    lambda_t,
    kappa_probe,
    holder_seminorm,
    interpolation_probe,
    laplacian_preset,
    constant_alpha_preset,
)
from .fields import AnalyticField, ChebyshevField
from .ou import OUQuadrature, ou_apply, ou_grad, ou_hess_qtrace, smoothing_scan, propagate_cheb
from .coefficients import (
    FRAK_CATALOG,
    FFamily,
    CoefficientSet,
    sigma_apply,
    F_eval,
    check_hypotheses,
)
from .solver import (
    SolverGrids,
    SpaceTimeField,
    ContractionReport,
    gamma_term,
    picard_step,
    solve_qlpde,
    weighted_norm,
    sweep_delta,
    DeltaTooLargeError,
)
from .sde import (
    SimConfig,
    TrajectoryEnsemble,
    FKReport,
    spde_simulate,
    feynman_kac_verify,
    probabilistic_fixed_point,
    weighted_space_residual,
)
from .ldp import (
    ControlPath,
    ActionValue,
    skeleton_solve,
    controlled_solve,
    action_eval,
    minimize_action,
    ldp_mc_probe,
    continuity_probe,
)
from .util import ConfigError, NumericalError, PositivityError

__version__ = "0.1.0"
