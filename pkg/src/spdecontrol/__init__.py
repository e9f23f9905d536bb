"""Insider stochastic control of SPDEs: conditional-density functionals,
forward solvers, maximum-principle verification, the wealth benchmark, and
nonlinear filtering reductions."""

from .donsker import (
    FirstOrderChaosSpec,
    HistorySnapshot,
    KFunctional,
    conditional_delta,
    conditional_malliavin_b,
    conditional_malliavin_n,
    effective_mean,
    gaussian_phi1,
    gaussian_weight,
    phi1,
    phi1_from_mean,
    phi_k,
)
from .errors import (
    BoundaryViolation,
    ConfigError,
    DegenerateCurvature,
    DegenerateVariance,
    DegenerateVolatility,
    DivisionUnstable,
    LinearSolveFailure,
    MassCollapse,
    MissingDerivativeCallback,
    NonParabolic,
    NumericalCheckFailure,
    QuadratureFailure,
    SpdeControlError,
    StepTooLarge,
    UnknownMark,
    WealthNonpositive,
    WeightDegeneracy,
)
from .forward import (
    AssembledOperator,
    CoefficientSet,
    ControlPolicy,
    OperatorSpec,
    PathHistory,
    SpatialGrid,
    StateField,
    assemble_operator,
    solve_forward,
    step_forward,
    weak_residual,
)
from .maxprinciple import (
    AdjointTriple,
    PerformanceEstimate,
    PerformanceSpec,
    PerturbationDirection,
    ReducedAdjointPath,
    estimate_j,
    gateaux_derivative,
    hamiltonian,
    perturbed_policy,
    reduced_adjoint_solve,
    run_ensemble,
    state_sensitivity,
    verify_x_independent_stationarity,
)
from .noise import (
    LevySpec,
    PathBundle,
    TimeGrid,
    brownian_value,
    compensated_jump_sum,
    ito_integral,
    sample_bundle,
)
from .portfolio import (
    MarketSpec,
    UtilitySpec,
    benchmark_market,
    martingale_match_check,
    optimal_pi,
    optimal_policy,
    run_portfolio_experiment,
)
from .zakai import (
    GirsanovWeight,
    ObservationPath,
    SignalModel,
    UnnormalizedDensity,
    coercivity_check,
    feedback_pi,
    girsanov_weight,
    kalman_bucy_oracle,
    normalize,
    particle_filter_oracle,
    simulate_signal_observation,
    solve_zakai,
    transformed_performance,
    zakai_step,
)

__version__ = "0.1.0"
