"""Branching random walks on Z^d with a single branching source."""
from .analysis import (
    DualityReport,
    GrowthForm,
    GrowthLaw,
    classify_regime,
    duality_check,
    fit_growth_rate,
    predicted_growth_law,
)
from .config import RunConfig, load_config, parse_config
from .errors import (
    BracketError,
    BrwError,
    ConfigError,
    EigenConvergenceError,
    EmptySystemError,
    IntegrationError,
    NumericalError,
    ParticleCapExceeded,
    SingularSolveError,
)
from .model import (
    BrwModel,
    OffspringLaw,
    WalkKernel,
    build_simple_kernel,
    eval_generating_function,
    is_admissible,
    validate_model,
)
from .moments import (
    evolve_first_moment,
    evolve_forward_first_moment,
    evolve_higher_moments,
    first_moment_from_generating_function,
    integral_moment_oracle,
    solve_generating_function,
    time_grid,
)
from .montecarlo import InitialCondition, ParticleSystem, estimate_moments, run
from .operators import (
    LatticeBox,
    build_operator,
    critical_intensity,
    green_function_at_origin,
    principal_eigenvalue,
    transition_probabilities,
)
from .vaccination import VaccinationParams, vaccinate, vaccinated_generating_function, vaccinated_model

__version__ = "0.1.0"

__all__ = [
    "DualityReport",
    "GrowthForm",
    "GrowthLaw",
    "classify_regime",
    "duality_check",
    "fit_growth_rate",
    "predicted_growth_law",
    "BracketError",
    "BrwError",
    "ConfigError",
    "EigenConvergenceError",
    "EmptySystemError",
    "IntegrationError",
    "NumericalError",
    "ParticleCapExceeded",
    "SingularSolveError",
    "BrwModel",
    "OffspringLaw",
    "WalkKernel",
    "build_simple_kernel",
    "eval_generating_function",
    "is_admissible",
    "validate_model",
    "evolve_first_moment",
    "evolve_forward_first_moment",
    "evolve_higher_moments",
    "first_moment_from_generating_function",
    "integral_moment_oracle",
    "solve_generating_function",
    "time_grid",
    "LatticeBox",
    "build_operator",
    "critical_intensity",
    "green_function_at_origin",
    "principal_eigenvalue",
    "transition_probabilities",
    "RunConfig",
    "load_config",
    "parse_config",
    "InitialCondition",
    "ParticleSystem",
    "estimate_moments",
    "run",
    "VaccinationParams",
    "vaccinate",
    "vaccinated_generating_function",
    "vaccinated_model",
]
