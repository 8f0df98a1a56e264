"""Newton-type iteration with projection-based adaptive step size control.

A trial Euler step x1 = x0 + t F(x0) is compared against the field at x1.
With v = F(x0) + F(x1) the accepted iterate is x0 + t proj_v(F(x0)) and the
quantity t * gamma, gamma = |v/2 - proj_v(F(x0))|, estimates the distance to
the exact flow x(t) up to O(t^3).  Steps are halved until t * gamma <= tau;
the next step is predicted as min(1, tau / gamma), so t = 1 (plain Newton) is
recovered near regular roots.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from .errors import NonFiniteError, SingularMatrixError, StepUnderflowError, ZeroDirectionError
from .field import (
    NONFINITE,
    OK,
    SINGULAR,
    Preconditioner,
    ProblemDef,
    eval_f,
    eval_field,
    field_batch,
    vnorm,
)
from .outcome import BatchOutcome, SolveOutcome, SolverConfig, Status, StepRecord, match_root

__all__ = [
    "ZERO_DIRECTION_TOL",
    "initial_step",
    "predict_step",
    "project",
    "gamma",
    "AcceptedStep",
    "adaptive_step",
    "solve_adaptive",
    "solve_adaptive_many",
]

ZERO_DIRECTION_TOL = 1e-30

_RUNNING = -1


def initial_step(F0_norm: float, tau: float) -> float:
    """First step size min(1, sqrt(2 tau / |F(x0)|)); 1 when F(x0) = 0."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if F0_norm == 0:
        return 1.0
    return min(1.0, math.sqrt(2.0 * tau / F0_norm))


def predict_step(gamma_value: float, tau: float) -> float:
    """Step prediction after an accepted step; gamma = 0 means the field is locally constant."""
    if gamma_value == 0:
        return 1.0
    return min(1.0, tau / gamma_value)


def _projection(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    coef = np.sum(u * v, axis=-1) / np.sum(v * v, axis=-1)
    return coef[..., None] * v


def project(u, v) -> np.ndarray:
    """Orthogonal projection of ``u`` onto the line spanned by ``v``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(vnorm(v) <= ZERO_DIRECTION_TOL):
        raise ZeroDirectionError("cannot project onto a zero vector")
    return _projection(u, v)


def gamma(F0, F1) -> float:
    """Error indicator |v/2 - proj_v(F0)| with v = F0 + F1."""
    F0 = np.asarray(F0, dtype=float)
    v = F0 + np.asarray(F1, dtype=float)
    return float(vnorm(v / 2 - project(F0, v)))


class AcceptedStep(NamedTuple):
    x: np.ndarray
    gamma: float
    t: float
    rejections: int
    evaluations: int


def adaptive_step(
    problem: ProblemDef,
    precond: Preconditioner,
    x0,
    t: float,
    config: SolverConfig,
    F0: Optional[np.ndarray] = None,
) -> AcceptedStep:
    """Shrink ``t`` until the trial step passes t * gamma <= tau, then take it.

    A trial point where the field cannot be evaluated (singular Jacobian,
    overflow, or v = 0) counts as a rejection.  Raises
    :class:`StepUnderflowError` once t drops below ``config.t_lower``.
    """
    if not t > 0:
        raise ValueError(f"step size must be positive, got {t}")
    x0 = np.asarray(x0, dtype=float)
    if F0 is None:
        F0 = eval_field(problem, precond, x0)
    rejections = 0
    evaluations = 0
    cause: Exception | None = None
    while True:
        if t < config.t_lower:
            raise StepUnderflowError(
                f"step size {t:.3e} below t_lower={config.t_lower:.1e}", cause, evaluations
            )
        x1 = x0 + t * F0
        evaluations += 1
        try:
            F1 = eval_field(problem, precond, x1)
            v = F0 + F1
            p = project(F0, v)
        except (SingularMatrixError, NonFiniteError, ZeroDirectionError) as exc:
            cause = None if isinstance(exc, ZeroDirectionError) else exc
        else:
            g = float(vnorm(v / 2 - p))
            if t * g <= config.tau:
                return AcceptedStep(x0 + t * p, g, t, rejections, evaluations)
            cause = None
        t = config.reduce_factor * t
        rejections += 1


def _failure_status(exc: Exception | None) -> Status:
    if isinstance(exc, SingularMatrixError):
        return Status.SINGULAR_JACOBIAN
    if isinstance(exc, NonFiniteError):
        return Status.NON_FINITE
    return Status.STEP_UNDERFLOW


def solve_adaptive(
    problem: ProblemDef,
    precond: Preconditioner,
    x0,
    config: Optional[SolverConfig] = None,
) -> SolveOutcome:
    """Run the adaptive iteration from ``x0``; failures are reported in the outcome."""
    config = config or SolverConfig()
    x = np.array(x0, dtype=float)
    if x.shape != (problem.dim,) or not np.all(np.isfinite(x)):
        raise ValueError(f"x0 must be a finite point of dimension {problem.dim}")
    trace: list[StepRecord] = []
    evaluations = 1

    def done(status: Status) -> SolveOutcome:
        root = match_root(problem.known_roots, x) if status is Status.CONVERGED else None
        return SolveOutcome(status, x, root, trace, evaluations)

    try:
        F = eval_field(problem, precond, x)
    except (SingularMatrixError, NonFiniteError) as exc:
        return done(_failure_status(exc))
    norm_F = float(vnorm(F))
    t = initial_step(norm_F, config.tau)

    for k in range(config.n_max):
        if norm_F <= config.eps:
            return done(Status.CONVERGED)
        try:
            step = adaptive_step(problem, precond, x, t, config, F0=F)
        except StepUnderflowError as exc:
            evaluations += exc.evaluations
            return done(_failure_status(exc.cause))
        evaluations += step.evaluations
        trace.append(
            StepRecord(k, x, step.t, step.gamma, norm_F, float(vnorm(eval_f(problem, x))), step.rejections)
        )
        x = step.x
        evaluations += 1
        try:
            F = eval_field(problem, precond, x)
        except (SingularMatrixError, NonFiniteError) as exc:
            return done(_failure_status(exc))
        norm_F = float(vnorm(F))
        t = predict_step(step.gamma, config.tau)
    return done(Status.CONVERGED if norm_F <= config.eps else Status.MAX_ITERATIONS)


def solve_adaptive_many(
    problem: ProblemDef,
    precond: Preconditioner,
    X0,
    config: Optional[SolverConfig] = None,
) -> BatchOutcome:
    """Run :func:`solve_adaptive` from every row of ``X0`` in lockstep.

    Each round performs one trial evaluation for every unfinished point.
    Points never interact, so results per point are bit-identical to the
    single-point solver and independent of how the batch is split.
    """
    config = config or SolverConfig()
    X = np.array(X0, dtype=float)
    m = X.shape[0]
    status = np.full(m, _RUNNING, dtype=np.int64)
    iterations = np.zeros(m, dtype=np.int64)
    evaluations = np.ones(m, dtype=np.int64)
    last_fail = np.full(m, OK, dtype=np.int64)

    ev = field_batch(problem, precond, X)
    F = ev.values
    _fail(status, np.arange(m), ev.code)
    norm_F = vnorm(F)
    with np.errstate(divide="ignore"):
        t = np.where(norm_F == 0, 1.0, np.minimum(1.0, np.sqrt(2.0 * config.tau / norm_F)))
    status[(status == _RUNNING) & (norm_F <= config.eps)] = Status.CONVERGED

    active = np.flatnonzero(status == _RUNNING)
    while active.size:
        under = t[active] < config.t_lower
        if np.any(under):
            idx = active[under]
            status[idx] = np.where(
                last_fail[idx] == SINGULAR,
                Status.SINGULAR_JACOBIAN,
                np.where(last_fail[idx] == NONFINITE, Status.NON_FINITE, Status.STEP_UNDERFLOW),
            )
            active = active[~under]
            if not active.size:
                break

        x0 = X[active]
        F0 = F[active]
        ta = t[active]
        x1 = x0 + ta[:, None] * F0
        trial = field_batch(problem, precond, x1)
        evaluations[active] += 1
        v = F0 + trial.values
        usable = (trial.code == OK) & (vnorm(v) > ZERO_DIRECTION_TOL)
        with np.errstate(all="ignore"):
            p = _projection(F0, v)
            g = vnorm(v / 2 - p)
        accept = usable & (ta * g <= config.tau)

        rejected = active[~accept]
        t[rejected] = config.reduce_factor * ta[~accept]
        last_fail[rejected] = np.where(usable[~accept], OK, trial.code[~accept])

        accepted = active[accept]
        if accepted.size:
            ga = g[accept]
            xn = x0[accept] + ta[accept][:, None] * p[accept]
            X[accepted] = xn
            iterations[accepted] += 1
            evaluations[accepted] += 1
            new = field_batch(problem, precond, xn)
            _fail(status, accepted, new.code)
            F[accepted] = new.values
            norm_F[accepted] = vnorm(new.values)
            with np.errstate(divide="ignore"):
                t[accepted] = np.where(ga == 0, 1.0, np.minimum(1.0, config.tau / ga))
            last_fail[accepted] = OK
            running = accepted[status[accepted] == _RUNNING]
            conv = norm_F[running] <= config.eps
            status[running[conv]] = Status.CONVERGED
            capped = running[~conv]
            status[capped[iterations[capped] >= config.n_max]] = Status.MAX_ITERATIONS

        active = active[status[active] == _RUNNING]

    return BatchOutcome(status, X, iterations, evaluations)


def _fail(status: np.ndarray, idx: np.ndarray, code: np.ndarray) -> None:
    status[idx[code == SINGULAR]] = Status.SINGULAR_JACOBIAN
    status[idx[code == NONFINITE]] = Status.NON_FINITE
