"""Growth exponents and essential-spectrum lower bounds for steady ideal
fluid flows on the torus, with a linearized-Euler oracle for cross-checks."""

__version__ = "0.1.0"

from .bas import (
    AdmissibleSample,
    BasResult,
    BasState,
    TransportMatrix,
    bas_rhs,
    integrate_bas,
    transport_matrix,
)
from .errors import (
    ConfigurationError,
    ContractViolationError,
    EmptyClassWarning,
    FluidexError,
    HypothesisViolationError,
    NumericalBlowupError,
    ResolutionError,
    TruncationWarning,
    UnsupportedClassError,
    UnsupportedOperationError,
)
from .exponents import (
    ClassReport,
    ExponentEstimate,
    ReportConfig,
    composite_report,
    estimate_exponent,
    ress_lower_bound,
    sample_admissible,
    theta_sup,
)
from .flows import (
    SteadyFlow,
    StagnationPoint,
    SupportSpec,
    catalog_entries,
    flow_map,
    get_flow,
    in_support,
    jacobian,
    planar_lift,
    velocity,
    verify_steady_euler,
    vorticity,
    vorticity_gradient,
)
from .oracle import (
    GrowthComparison,
    PerturbationState,
    compare_growth,
    evolve_linearized,
    predicted_wavepacket,
)
from .spectral import (
    FourierField,
    LemmaResidual,
    OperatorMatrix,
    SlopeFit,
    apply_B,
    build_B_matrix,
    factor_norm,
    helmholtz_project,
    lemma_residual,
    make_wavepacket,
    slope_fit,
)
