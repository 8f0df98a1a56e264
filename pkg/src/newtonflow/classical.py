"""Baselines: damped Newton with a fixed step, and the continuous Newton flow.

The flow x' = F(x) is integrated with the classical fourth-order Runge-Kutta
scheme at a fixed step.  It serves as the reference trajectory and as the
oracle deciding which root's exact basin of attraction an initial value
belongs to.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonFiniteError, SingularMatrixError
from .field import (
    NONFINITE,
    OK,
    SINGULAR,
    NewtonInverse,
    Preconditioner,
    ProblemDef,
    eval_f,
    eval_field,
    field_batch,
    point_field,
    vnorm,
)
from .outcome import (
    ROOT_MATCH_TOL,
    BatchOutcome,
    SolveOutcome,
    SolverConfig,
    Status,
    StepRecord,
    match_root,
    match_roots,
)

__all__ = [
    "ORACLE_DT",
    "ORACLE_T_END",
    "NO_ATTRACTOR",
    "FlowStatus",
    "Trajectory",
    "solve_fixed_step",
    "solve_fixed_step_many",
    "integrate_reference",
    "attractor_oracle",
    "attractor_oracle_many",
]

ORACLE_DT = 1e-2
ORACLE_T_END = 40.0
NO_ATTRACTOR = -1

_RUNNING = -1


def _check_step(t_fixed: float) -> float:
    t_fixed = float(t_fixed)
    if not 0 < t_fixed <= 1:
        raise ValueError(f"fixed step must lie in (0, 1], got {t_fixed}")
    return t_fixed


def solve_fixed_step(
    problem: ProblemDef,
    precond: Preconditioner,
    x0,
    t_fixed: float = 1.0,
    config: Optional[SolverConfig] = None,
) -> SolveOutcome:
    """Iterate x <- x + t_fixed F(x) until |F(x)| <= eps or n_max steps.

    ``t_fixed = 1`` with the Newton preconditioner is classical Newton.
    """
    config = config or SolverConfig()
    t_fixed = _check_step(t_fixed)
    x = np.array(x0, dtype=float)
    if x.shape != (problem.dim,) or not np.all(np.isfinite(x)):
        raise ValueError(f"x0 must be a finite point of dimension {problem.dim}")
    trace: list[StepRecord] = []
    evaluations = 0

    def done(status: Status) -> SolveOutcome:
        root = match_root(problem.known_roots, x) if status is Status.CONVERGED else None
        return SolveOutcome(status, x, root, trace, evaluations)

    for k in range(config.n_max + 1):
        evaluations += 1
        try:
            F = eval_field(problem, precond, x)
        except SingularMatrixError:
            return done(Status.SINGULAR_JACOBIAN)
        except NonFiniteError:
            return done(Status.NON_FINITE)
        norm_F = float(vnorm(F))
        if norm_F <= config.eps:
            return done(Status.CONVERGED)
        if k == config.n_max:
            break
        trace.append(StepRecord(k, x, t_fixed, math.nan, norm_F, float(vnorm(eval_f(problem, x))), 0))
        x = x + t_fixed * F
    return done(Status.MAX_ITERATIONS)


def solve_fixed_step_many(
    problem: ProblemDef,
    precond: Preconditioner,
    X0,
    t_fixed: float = 1.0,
    config: Optional[SolverConfig] = None,
) -> BatchOutcome:
    """Batched :func:`solve_fixed_step`; per-point results match the scalar solver exactly."""
    config = config or SolverConfig()
    t_fixed = _check_step(t_fixed)
    X = np.array(X0, dtype=float)
    m = X.shape[0]
    status = np.full(m, _RUNNING, dtype=np.int64)
    iterations = np.zeros(m, dtype=np.int64)
    evaluations = np.zeros(m, dtype=np.int64)
    active = np.arange(m)
    for k in range(config.n_max + 1):
        ev = field_batch(problem, precond, X[active])
        evaluations[active] += 1
        status[active[ev.code == SINGULAR]] = Status.SINGULAR_JACOBIAN
        status[active[ev.code == NONFINITE]] = Status.NON_FINITE
        conv = (ev.code == OK) & (vnorm(ev.values) <= config.eps)
        status[active[conv]] = Status.CONVERGED
        keep = status[active] == _RUNNING
        active = active[keep]
        if not active.size or k == config.n_max:
            break
        X[active] = X[active] + t_fixed * ev.values[keep]
        iterations[active] += 1
    status[active] = Status.MAX_ITERATIONS
    return BatchOutcome(status, X, iterations, evaluations)


# ---------------------------------------------------------------------------
# continuous Newton flow
# ---------------------------------------------------------------------------


class FlowStatus(enum.Enum):
    CONVERGED = "Converged"  # |F| <= eps before the horizon
    HORIZON = "Horizon"  # reached t_end
    SINGULAR = "SingularJacobian"  # ran into the singular set
    NON_FINITE = "NonFinite"


@dataclass
class Trajectory:
    times: np.ndarray  # (k,)
    points: np.ndarray  # (k, dim)
    status: FlowStatus

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]


def _time_grid(dt: float, t_end: float) -> np.ndarray:
    if not 0 < dt <= 1e-2:
        raise ValueError(f"dt must lie in (0, 1e-2], got {dt}")
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    n = max(1, math.ceil(t_end / dt - 1e-9))
    times = np.arange(n + 1) * dt
    times[-1] = t_end
    return times


class _FlowState:
    """Batched RK4 state.  A point stops when |F| <= eps, when a stage fails,
    or when the sign of det J_f changes within a step: the exact Newton flow
    never crosses the singular set, so a sign change means it was reached."""

    def __init__(
        self,
        problem: ProblemDef,
        precond: Preconditioner,
        X: np.ndarray,
        eps: float,
        capture_tol: Optional[float] = None,
    ):
        self.problem = problem
        self.precond = precond
        self.eps = eps
        self.capture_tol = capture_tol
        self.X = np.array(X, dtype=float)
        m = self.X.shape[0]
        self.status = np.full(m, _RUNNING, dtype=np.int64)
        ev = field_batch(problem, precond, self.X)
        self.F = ev.values
        self.sign = ev.det_sign
        self._mark(np.arange(m), ev.code)
        conv = (self.status == _RUNNING) & self._done(self.X, self.F)
        self.status[conv] = _code(FlowStatus.CONVERGED)

    def _done(self, X: np.ndarray, F: np.ndarray) -> np.ndarray:
        done = vnorm(F) <= self.eps
        if self.capture_tol is not None:
            # inside the match ball of a regular root the flow is contracting
            done |= match_roots(self.problem.known_roots, X, self.capture_tol) >= 0
        return done

    def _mark(self, idx: np.ndarray, code: np.ndarray) -> None:
        self.status[idx[code == SINGULAR]] = _code(FlowStatus.SINGULAR)
        self.status[idx[code == NONFINITE]] = _code(FlowStatus.NON_FINITE)

    def active(self) -> np.ndarray:
        return np.flatnonzero(self.status == _RUNNING)

    def step(self, idx: np.ndarray, h: float) -> None:
        p, pc = self.problem, self.precond
        x = self.X[idx]
        k1 = self.F[idx]
        ev2 = field_batch(p, pc, x + (0.5 * h) * k1)
        ev3 = field_batch(p, pc, x + (0.5 * h) * ev2.values)
        ev4 = field_batch(p, pc, x + h * ev3.values)
        stages = (ev2, ev3, ev4)
        failed = np.zeros(idx.size, dtype=bool)
        code = np.full(idx.size, OK)
        for ev in stages:
            bad = (ev.code != OK) & ~failed
            code[bad] = ev.code[bad]
            failed |= ev.code != OK
        k2, k3, k4 = (ev.values for ev in stages)
        xn = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        new = field_batch(p, pc, xn)
        bad = (new.code != OK) & ~failed
        code[bad] = new.code[bad]
        failed |= new.code != OK

        if self.sign is not None:
            s0 = self.sign[idx]
            crossed = np.zeros(idx.size, dtype=bool)
            for s in (ev2.det_sign, ev3.det_sign, ev4.det_sign, new.det_sign):
                crossed |= s != s0
            crossed &= ~failed
            code[crossed] = SINGULAR
            failed |= crossed
            self.sign[idx[~failed]] = new.det_sign[~failed]

        self._mark(idx[failed], code[failed])
        ok = idx[~failed]
        self.X[ok] = xn[~failed]
        self.F[ok] = new.values[~failed]
        conv = self._done(xn[~failed], new.values[~failed])
        self.status[ok[conv]] = _code(FlowStatus.CONVERGED)


_FLOW_CODES = {s: i for i, s in enumerate(FlowStatus)}
_FLOW_BY_CODE = {i: s for s, i in _FLOW_CODES.items()}


def _code(s: FlowStatus) -> int:
    return _FLOW_CODES[s]


def integrate_reference(
    problem: ProblemDef,
    x0,
    dt: float = 1e-3,
    t_end: float = 5.0,
    precond: Optional[Preconditioner] = None,
    eps: float = 1e-8,
) -> Trajectory:
    """Integrate the Newton flow from ``x0`` with fixed-step RK4.

    The returned samples include ``x0`` at time 0.  Integration stops early
    when |F| <= ``eps`` or the singular set of J_f is reached; the latter is
    reported as ``FlowStatus.SINGULAR``, with the last regular point kept as
    the final sample.
    """
    precond = precond or NewtonInverse()
    times = _time_grid(float(dt), float(t_end))
    x = np.array(x0, dtype=float)
    if x.shape != (problem.dim,):
        raise ValueError(f"x0 must have shape ({problem.dim},)")
    F, code, sign = point_field(problem, precond, x)
    ts = [0.0]
    pts = [x]
    status = _POINT_FAILURE.get(code)
    if status is None and math.sqrt(float(F @ F)) <= eps:
        status = FlowStatus.CONVERGED
    for k in range(1, times.size):
        if status is not None:
            break
        h = times[k] - times[k - 1]
        evals = []
        direction = F
        for c in (0.5 * h, 0.5 * h, h):
            evals.append(point_field(problem, precond, x + c * direction))
            if evals[-1][1] != OK:
                break
            direction = evals[-1][0]
        else:
            k2, k3, k4 = (e[0] for e in evals)
            xn = x + (h / 6.0) * (F + 2.0 * k2 + 2.0 * k3 + k4)
            evals.append(point_field(problem, precond, xn))
        failed = next((e for e in evals if e[1] != OK), None)
        if failed is not None:
            status = _POINT_FAILURE[failed[1]]
            break
        if not math.isnan(sign) and any(e[2] != sign for e in evals):
            status = FlowStatus.SINGULAR
            break
        x, F, sign = xn, evals[-1][0], evals[-1][2]
        ts.append(float(times[k]))
        pts.append(x)
        if math.sqrt(float(F @ F)) <= eps:
            status = FlowStatus.CONVERGED
    return Trajectory(np.array(ts), np.array(pts), FlowStatus.HORIZON if status is None else status)


_POINT_FAILURE = {SINGULAR: FlowStatus.SINGULAR, NONFINITE: FlowStatus.NON_FINITE}


def attractor_oracle_many(
    problem: ProblemDef,
    X0,
    dt: float = ORACLE_DT,
    t_end: float = ORACLE_T_END,
    eps: float = 1e-8,
    match_tol: float = ROOT_MATCH_TOL,
    precond: Optional[Preconditioner] = None,
) -> np.ndarray:
    """Root index of the exact basin containing each row of ``X0``, or ``NO_ATTRACTOR``."""
    if len(problem.known_roots) == 0:
        raise ValueError("the attractor oracle needs known roots")
    precond = precond or NewtonInverse()
    times = _time_grid(float(dt), float(t_end))
    state = _FlowState(problem, precond, np.asarray(X0, dtype=float), eps, capture_tol=match_tol)
    for k in range(1, times.size):
        idx = state.active()
        if not idx.size:
            break
        state.step(idx, times[k] - times[k - 1])
    labels = match_roots(problem.known_roots, state.X, match_tol)
    dead = (state.status == _code(FlowStatus.SINGULAR)) | (state.status == _code(FlowStatus.NON_FINITE))
    labels[dead] = NO_ATTRACTOR
    return labels


def attractor_oracle(
    problem: ProblemDef,
    x0,
    config: Optional[SolverConfig] = None,
    dt: float = ORACLE_DT,
    t_end: float = ORACLE_T_END,
    match_tol: float = ROOT_MATCH_TOL,
) -> Optional[int]:
    """Index of the root whose exact attractor contains ``x0``; ``None`` if there is none."""
    config = config or SolverConfig()
    x0 = np.asarray(x0, dtype=float)
    label = attractor_oracle_many(problem, x0[None, :], dt, t_end, config.eps, match_tol)[0]
    return None if label == NO_ATTRACTOR else int(label)
