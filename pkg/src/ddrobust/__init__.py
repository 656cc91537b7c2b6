"""Robustness certificates for data-driven state-feedback controllers."""

from .linalg import (
    EPS_FLOOR,
    EigensolverError,
    Spectrum,
    condition_number_spectral,
    eigenvalues,
    pseudoinverse,
    q_function,
    spectral_norm,
    spectral_radius,
    vec,
    vec_inverse,
)
from .lti import LtiSystem, Selector, TrainingData, collect, simulate, snapshot_matrices, vehicle_model
from .ctrlmaps import (
    CeLqrMap,
    ControllerMap,
    DareError,
    LqrWeights,
    PinvMap,
    ce_lqr_map,
    check_a1,
    dare_solve,
    identify,
    lqr_gain,
    map_from_descriptor,
    pinv_map,
)
from .sensitivity import (
    B_SOURCE_IDENTIFIED,
    B_SOURCE_TRUE,
    JacobianBundle,
    PerturbationModel,
    fd_jacobian,
    first_order_acl,
    lemma1_residual,
)
from .bounds import (
    BoundsReport,
    StabilityError,
    bauer_fike_check,
    jmax_envelope,
    theorem1_bounds,
    theorem2_rate,
    variance_params,
)
from .mc import (
    MODE_EXACT,
    MODE_FIRST_ORDER,
    MonteCarloReport,
    estimate_instability,
    random_support,
    sample_z,
    wilson_interval,
)

__version__ = "0.1.0"
