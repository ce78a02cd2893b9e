"""Sparse actuator scheduling, minimum-energy control and sparse tracking for linear systems."""

from .core import (
    ActuatorSchedule,
    GramianReport,
    LinearSystem,
    NoiseModel,
    PiecewiseSparseInput,
    RankTolerance,
    SelectionSet,
    SparseControllability,
    Trajectory,
    alpha_lower_bound,
    avg_energy,
    compute_inputs,
    controllability_matrix,
    full_gramian,
    gramian,
    greedy_guarantee_bound,
    minimal_polynomial_degree,
    numerical_rank,
    regularized_energy,
    simulate,
    sparse_controllability_check,
)
from .errors import (
    BoundUndefinedError,
    ConvergenceError,
    InputError,
    NotControllableError,
    NumericalError,
    ParseError,
    PreconditionError,
    SearchSpaceTooLarge,
    SparseCtlError,
)
from .noisy import (
    KalmanState,
    MseBoundInputs,
    Regularization,
    RiccatiSolution,
    TrackingRun,
    kalman_step,
    mse_floor,
    mse_upper_bound,
    steady_state_covariance,
    track,
)
from .scheduler import (
    GreedyRun,
    SensorSchedule,
    controllable_schedule,
    energy_aware_controllable_schedule,
    estimate_x0,
    iter_controllable_schedule,
    li_extension,
    optimal_energy_bruteforce,
    rbn_greedy,
    rbn_greedy_trace,
    sensor_schedule,
)
from .sparse_recovery import DecayFactorEstimate, OmpResult, decay_factor, omp
from .systems import (
    EdgeListGraph,
    erdos_renyi_system,
    graph_to_system,
    load_edge_list,
    random_b,
    random_feasible_schedule,
    zachary_karate_club,
)

__version__ = "0.1.0"
