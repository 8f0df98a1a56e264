"""Newton-type iteration with projection-based adaptive step size control.

The package provides the transformed field F(x) = A(x) f(x), the adaptive
solver, fixed-step and continuous-flow baselines, three benchmark systems,
and basin-of-attraction sampling with statistics and PPM rendering.
"""

from __future__ import annotations

from .adaptive import AcceptedStep, adaptive_step, gamma, initial_step, predict_step, project, solve_adaptive, solve_adaptive_many
from .basins import BasinGrid, Criterion, SolverSpec, StatsReport, convergence_stats, oracle_grid, render_ppm, sample_grid
from .classical import FlowStatus, Trajectory, attractor_oracle, attractor_oracle_many, integrate_reference, solve_fixed_step, solve_fixed_step_many
from .errors import (
    MissingOracleError,
    NewtonFlowError,
    NonFiniteError,
    SingularMatrixError,
    StepUnderflowError,
    ZeroDirectionError,
)
from .field import (
    FrozenNewton,
    NegIdentity,
    NewtonInverse,
    Preconditioner,
    ProblemDef,
    eval_f,
    eval_field,
    eval_jacobian,
    finite_difference_jacobian,
    make_preconditioner,
    solve_linear,
)
from .outcome import SolveOutcome, SolverConfig, Status, StepRecord
from .problems import BuiltinId, builtin_problem, singular_set_distance

__version__ = "0.1.0"
