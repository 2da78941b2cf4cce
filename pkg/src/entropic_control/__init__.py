"""Monte-Carlo solver for entropy-penalized stochastic control with constraints in law."""

from .errors import (
    ConfigError,
    EntropicControlError,
    EstimationError,
    MviError,
    ParameterError,
    PreconditionError,
    ReweightingError,
    SimulationError,
    SolverError,
    StructuralError,
)
from .estimate import DriftField, RegressionConfig, conditional_expectation, density_ratio, nelson_drift
from .mvi import MviQuery, MviSolution, mvi_residual, solve_mvi_batch, solve_mvi_convex, solve_mvi_linear
from .oracle import (
    DriftShiftSpec,
    PoissonShiftSpec,
    entropy_drift_shift_analytic,
    entropy_mc_drift,
    entropy_mc_poisson,
    entropy_poisson_analytic,
    gaussian_entropy,
)
from .problem import (
    BridgeParams,
    ConstraintSet,
    ControlBox,
    ControlProblem,
    CostSpec,
    DistributionSpec,
    DynamicsSpec,
    HvacParams,
    LqSpec,
    TimeGrid,
    build_bridge_instance,
    build_hvac_instance,
    build_lq_instance,
    eval_cost_rate,
    eval_drift,
    validate_problem,
)
from .simulate import (
    ClosedFormPolicy,
    ConstantPolicy,
    MarkovPolicy,
    PathCostVector,
    PathEnsemble,
    accumulate_path_cost,
    empirical_marginal,
    resimulate,
    simulate_ensemble,
)
from .solver import (
    CloudPolicy,
    IterateReport,
    RunResult,
    SolverConfig,
    diagnostics,
    reference_lq_solution,
    run_alternating,
    step_p,
    step_q,
)
from .twist import (
    TwistResult,
    WeightVector,
    dv_gap_check,
    entropy_from_weights,
    twist_terminal_law,
    twist_unconstrained,
)

__version__ = "0.1.0"
