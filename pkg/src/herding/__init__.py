"""Agent-based simulation and Kramers analysis of a binary-forecast herding model."""

from .errors import (
    DegenerateRegimeError,
    HerdingError,
    NoEquilibriumError,
    NoTransitionError,
    ParameterError,
    UndefinedObservableError,
)
from .kramers import (
    KramersParams,
    KramersResult,
    QuadratureSpec,
    find_nash_eta,
    initial_density,
    langevin_simulate,
    log_phi,
    p_minus,
    ptilde_minus,
    q_mean_curve,
)
from .meanfield import (
    BranchSet,
    MeanFieldParams,
    Regime,
    Stability,
    drift,
    drift_derivative,
    find_eta_c,
    find_fixed_points,
    omega,
    pi_of_q,
)
from .model import (
    Basin,
    ModelParams,
    PopulationState,
    RealizationOutcome,
    Role,
    build_population,
    is_fixed_point,
    measure_q,
    run_ensemble,
    run_to_fixed_point,
    update_agent,
)

__version__ = "0.1.0"
