"""Residuals, Jacobians and the preconditioned vector field F(x) = A(x) f(x).

Every evaluator here has a batched kernel operating on arrays of shape
``(m, dim)`` and a thin single-point wrapper that raises on failure.  The
single-point wrappers call the batched kernels with ``m = 1`` so both paths
perform identical floating point operations.
"""

from __future__ import annotations

import math

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import NonFiniteError, SingularMatrixError

__all__ = [
    "OK",
    "SINGULAR",
    "NONFINITE",
    "PIVOT_RTOL",
    "ProblemDef",
    "Preconditioner",
    "NegIdentity",
    "NewtonInverse",
    "FrozenNewton",
    "make_preconditioner",
    "LUFactor",
    "lu_factor",
    "lu_solve",
    "solve_linear",
    "vnorm",
    "eval_f",
    "eval_jacobian",
    "finite_difference_jacobian",
    "eval_field",
    "point_field",
    "f_batch",
    "jacobian_batch",
    "field_batch",
    "FieldEval",
]

# Per-point evaluation codes used by the batched kernels.
OK = 0
SINGULAR = 1
NONFINITE = 2

PIVOT_RTOL = 1e-14
ROOT_RESIDUAL_TOL = 1e-10
FD_BASE_STEP = np.finfo(float).eps ** (1.0 / 3.0)

Evaluator = Callable[[np.ndarray], np.ndarray]


def vnorm(x: np.ndarray) -> np.ndarray:
    """Euclidean norm along the last axis."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.sum(x * x, axis=-1))


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """A square nonlinear system f: R^dim -> R^dim.

    ``f`` maps a point to its residual and ``jac`` (optional) to the Jacobian
    whose row i is the gradient of f_i.  With ``vectorized=True`` both must
    also accept stacked points of shape ``(m, dim)`` and return ``(m, dim)``
    and ``(m, dim, dim)``; otherwise batched evaluation loops over points.

    ``domain`` is a ``(dim, 2)`` array of per-axis ``[lo, hi]`` bounds.  It
    only scopes grid sampling; evaluators are expected to be total.
    """

    dim: int
    f: Evaluator
    jac: Optional[Evaluator] = None
    domain: np.ndarray = None  # type: ignore[assignment]
    known_roots: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    name: str = "problem"
    vectorized: bool = False

    def __post_init__(self) -> None:
        if int(self.dim) < 1:
            raise ValueError("dim must be a positive integer")
        object.__setattr__(self, "dim", int(self.dim))
        if self.domain is None:
            domain = np.tile([-np.inf, np.inf], (self.dim, 1))
        else:
            domain = np.array(self.domain, dtype=float).reshape(self.dim, 2)
            if np.any(domain[:, 0] >= domain[:, 1]):
                raise ValueError("domain bounds must satisfy lo < hi on every axis")
        domain.setflags(write=False)
        object.__setattr__(self, "domain", domain)

        roots = np.array(self.known_roots, dtype=float)
        roots = roots.reshape(-1, self.dim) if roots.size else np.zeros((0, self.dim))
        roots.setflags(write=False)
        object.__setattr__(self, "known_roots", roots)
        for r in roots:
            res = vnorm(eval_f(self, r))
            if res > ROOT_RESIDUAL_TOL:
                raise ValueError(f"known root {r} has residual {res:.3e} > {ROOT_RESIDUAL_TOL}")


def _as_point(problem: ProblemDef, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dim,):
        raise ValueError(f"point must have shape ({problem.dim},), got {x.shape}")
    return x


def _as_batch(problem: ProblemDef, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != problem.dim:
        raise ValueError(f"points must have shape (m, {problem.dim}), got {X.shape}")
    return X


# ---------------------------------------------------------------------------
# residual and Jacobian kernels
# ---------------------------------------------------------------------------


def f_batch(problem: ProblemDef, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Residuals at each row of ``X`` and a mask of rows with finite output."""
    X = _as_batch(problem, X)
    with np.errstate(all="ignore"):
        if problem.vectorized:
            values = np.asarray(problem.f(X), dtype=float).reshape(X.shape)
        else:
            values = np.empty_like(X)
            for k, x in enumerate(X):
                values[k] = np.asarray(problem.f(x.copy()), dtype=float).reshape(problem.dim)
    finite = np.all(np.isfinite(values), axis=-1)
    return values, finite


def _fd_jacobian_batch(problem: ProblemDef, X: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    m, n = X.shape
    J = np.empty((m, n, n))
    finite = np.ones(m, dtype=bool)
    for j in range(n):
        step = h * np.maximum(1.0, np.abs(X[:, j]))
        Xp = X.copy()
        Xm = X.copy()
        Xp[:, j] += step
        Xm[:, j] -= step
        fp, okp = f_batch(problem, Xp)
        fm, okm = f_batch(problem, Xm)
        # divide by the realized (representable) step, not the nominal one
        width = Xp[:, j] - Xm[:, j]
        with np.errstate(all="ignore"):
            J[:, :, j] = (fp - fm) / width[:, None]
        finite &= okp & okm
    finite &= np.all(np.isfinite(J), axis=(-2, -1))
    return J, finite


def jacobian_batch(problem: ProblemDef, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians at each row of ``X`` (analytic if available) and a finite mask."""
    X = _as_batch(problem, X)
    if problem.jac is None:
        return _fd_jacobian_batch(problem, X, FD_BASE_STEP)
    n = problem.dim
    with np.errstate(all="ignore"):
        if problem.vectorized:
            J = np.asarray(problem.jac(X), dtype=float).reshape(X.shape[0], n, n)
        else:
            J = np.empty((X.shape[0], n, n))
            for k, x in enumerate(X):
                J[k] = np.asarray(problem.jac(x.copy()), dtype=float).reshape(n, n)
    finite = np.all(np.isfinite(J), axis=(-2, -1))
    return J, finite


def eval_f(problem: ProblemDef, x) -> np.ndarray:
    """Residual f(x); raises :class:`NonFiniteError` on NaN/Inf output."""
    x = _as_point(problem, x)
    values, finite = f_batch(problem, x[None, :])
    if not finite[0]:
        raise NonFiniteError(f"non-finite residual at {x}")
    return values[0]


def eval_jacobian(problem: ProblemDef, x) -> np.ndarray:
    """Jacobian at x: analytic when ``problem.jac`` is set, else central differences."""
    x = _as_point(problem, x)
    J, finite = jacobian_batch(problem, x[None, :])
    if not finite[0]:
        raise NonFiniteError(f"non-finite Jacobian at {x}")
    return J[0]


def finite_difference_jacobian(problem: ProblemDef, x, h: float | None = None) -> np.ndarray:
    """Central-difference Jacobian.

    Column j uses the step ``h * max(1, |x_j|)``; ``h`` defaults to the cube
    root of machine epsilon, which balances truncation against roundoff for
    central differences.
    """
    x = _as_point(problem, x)
    h = FD_BASE_STEP if h is None else float(h)
    if not h > 0 or not np.isfinite(h):
        raise ValueError(f"finite-difference step must be positive, got {h}")
    J, finite = _fd_jacobian_batch(problem, x[None, :], h)
    if not finite[0]:
        raise NonFiniteError(f"non-finite finite-difference Jacobian at {x}")
    return J[0]


# ---------------------------------------------------------------------------
# dense LU with partial pivoting
# ---------------------------------------------------------------------------


class LUFactor(NamedTuple):
    lu: np.ndarray  # (m, n, n): unit lower factor below the diagonal, upper on and above
    perm: np.ndarray  # (m, n): row permutation, P A = L U with (P A)[i] = A[perm[i]]
    singular: np.ndarray  # (m,) bool
    det_sign: np.ndarray  # (m,) in {-1, 0, 1}


def lu_factor(A: np.ndarray) -> LUFactor:
    """Batched LU factorization with partial pivoting for ``(m, n, n)`` stacks.

    A matrix is flagged singular when some pivot magnitude is at most
    ``PIVOT_RTOL`` times its largest initial column norm.  Flagged entries are
    still factored (with unit stand-in pivots) so the batch stays finite.
    """
    A = np.array(A, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise ValueError(f"expected a stack of square matrices, got shape {A.shape}")
    m, n, _ = A.shape
    rows = np.arange(m)
    perm = np.tile(np.arange(n), (m, 1))
    # largest column norm, scaled first so huge entries do not overflow
    amax = np.max(np.abs(A), axis=(1, 2))
    unit = np.where(amax > 0, amax, 1.0)
    B = A / unit[:, None, None]
    scale = amax * np.max(np.sqrt(np.sum(B * B, axis=1)), axis=-1)
    singular = np.zeros(m, dtype=bool)
    sign = np.ones(m)
    for k in range(n):
        if k + 1 < n:
            p = k + np.argmax(np.abs(A[:, k:, k]), axis=1)
            swap = p != k
            if np.any(swap):
                row_k = A[:, k].copy()
                A[:, k] = A[rows, p]
                A[rows, p] = row_k
                perm_k = perm[:, k].copy()
                perm[:, k] = perm[rows, p]
                perm[rows, p] = perm_k
                sign = np.where(swap, -sign, sign)
        piv = A[:, k, k]
        bad = np.abs(piv) <= PIVOT_RTOL * scale
        singular |= bad
        sign = np.where(piv < 0, -sign, sign)
        if k + 1 < n:
            safe = np.where(bad, 1.0, piv)
            with np.errstate(over="ignore", invalid="ignore"):
                lower = A[:, k + 1 :, k] / safe[:, None]
                A[:, k + 1 :, k] = lower
                A[:, k + 1 :, k + 1 :] -= lower[:, :, None] * A[:, k, None, k + 1 :]
    sign = np.where(singular, 0.0, sign)
    return LUFactor(A, perm, singular, sign)


def lu_solve(factor: LUFactor, b: np.ndarray) -> np.ndarray:
    """Solve ``A y = b`` for each factored matrix; ``b`` has shape ``(m, n)`` or ``(n,)``."""
    lu, perm, singular, _ = factor
    m, n, _ = lu.shape
    b = np.asarray(b, dtype=float)
    b = np.broadcast_to(b, (m, n)) if b.ndim == 1 else b
    y = np.take_along_axis(b, perm, axis=1)
    diag = np.diagonal(lu, axis1=1, axis2=2)
    diag = np.where(singular[:, None], 1.0, diag)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, n):
            y[:, i] = y[:, i] - np.sum(lu[:, i, :i] * y[:, :i], axis=-1)
        for i in range(n - 1, -1, -1):
            y[:, i] = (y[:, i] - np.sum(lu[:, i, i + 1 :] * y[:, i + 1 :], axis=-1)) / diag[:, i]
    return y


def solve_linear(A, b) -> np.ndarray:
    """Solve the square system ``A y = b`` by LU with partial pivoting.

    Raises :class:`SingularMatrixError` when a pivot is below the threshold.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if b.shape != (A.shape[0],):
        raise ValueError(f"b must have shape ({A.shape[0]},), got {b.shape}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise ValueError("A and b must have finite entries")
    factor = lu_factor(A[None])
    if factor.singular[0]:
        raise SingularMatrixError("matrix is singular to working precision")
    return lu_solve(factor, b[None])[0]


def _point_lu_solve(A: list[list[float]], b: list[float]) -> tuple[list[float], bool, float]:
    """Single-matrix twin of :func:`lu_factor` + :func:`lu_solve` on Python floats.

    Same pivoting and singularity rule; avoids per-call array overhead when
    one trajectory is integrated step by step.  Returns (y, singular, det_sign).
    """
    n = len(b)
    A = [row[:] for row in A]
    y = list(b)
    scale = max([math.hypot(*col) for col in zip(*A)])
    sign = 1.0
    for k in range(n):
        p = k
        for i in range(k + 1, n):
            if abs(A[i][k]) > abs(A[p][k]):
                p = i
        if p != k:
            A[k], A[p] = A[p], A[k]
            y[k], y[p] = y[p], y[k]
            sign = -sign
        piv = A[k][k]
        if abs(piv) <= PIVOT_RTOL * scale:
            return y, True, 0.0
        if piv < 0:
            sign = -sign
        for i in range(k + 1, n):
            lower = A[i][k] / piv
            for j in range(k + 1, n):
                A[i][j] -= lower * A[k][j]
            y[i] -= lower * y[k]
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for j in range(i + 1, n):
            acc -= A[i][j] * y[j]
        y[i] = acc / A[i][i]
    return y, False, sign


# ---------------------------------------------------------------------------
# preconditioners and the transformed field
# ---------------------------------------------------------------------------


class FieldEval(NamedTuple):
    values: np.ndarray  # (m, dim), zeroed where code != OK
    code: np.ndarray  # (m,) OK / SINGULAR / NONFINITE
    det_sign: Optional[np.ndarray]  # sign of det J_f(x) when J_f(x) was factored


class Preconditioner:
    """Choice of A(x) in F(x) = A(x) f(x)."""

    kind = "abstract"

    def apply(self, problem: ProblemDef, X: np.ndarray, fX: np.ndarray, ok: np.ndarray) -> FieldEval:
        raise NotImplementedError

    def apply_point(self, problem: ProblemDef, x: np.ndarray, fx: np.ndarray) -> tuple[np.ndarray, int, float]:
        """Single-point variant returning (F, code, det_sign); NaN det_sign when not tracked."""
        ev = self.apply(problem, x[None, :], fx[None, :], np.ones(1, dtype=bool))
        sign = math.nan if ev.det_sign is None else float(ev.det_sign[0])
        return ev.values[0], int(ev.code[0]), sign

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class NegIdentity(Preconditioner):
    """A(x) = -Id: the Picard / fixed point field F = -f."""

    kind = "identity"

    def apply(self, problem, X, fX, ok):
        values = np.where(ok[:, None], -fX, 0.0)
        code = np.where(ok, OK, NONFINITE)
        return FieldEval(values, code, None)

    def apply_point(self, problem, x, fx):
        return -fx, OK, math.nan


class NewtonInverse(Preconditioner):
    """A(x) = -J_f(x)^{-1}: the Newton field."""

    kind = "newton"

    def apply(self, problem, X, fX, ok):
        J, jok = jacobian_batch(problem, X)
        ok = ok & jok
        J = np.where(ok[:, None, None], J, np.eye(problem.dim))
        factor = lu_factor(J)
        y = lu_solve(factor, np.where(ok[:, None], fX, 0.0))
        code = np.where(ok, np.where(factor.singular, SINGULAR, OK), NONFINITE)
        with np.errstate(all="ignore"):
            values = np.where((code == OK)[:, None], -y, 0.0)
        bad = ~np.all(np.isfinite(values), axis=-1)
        code = np.where(bad, NONFINITE, code)
        values[bad] = 0.0
        return FieldEval(values, code, np.where(ok, factor.det_sign, 0.0))

    def apply_point(self, problem, x, fx):
        if problem.jac is None:
            J, ok = _fd_jacobian_batch(problem, x[None, :], FD_BASE_STEP)
            J, ok = J[0], bool(ok[0])
        else:
            with np.errstate(all="ignore"):
                J = np.asarray(problem.jac(x), dtype=float).reshape(problem.dim, problem.dim)
            ok = _all_finite(J.ravel().tolist())
        if not ok:
            return np.zeros(problem.dim), NONFINITE, 0.0
        y, singular, sign = _point_lu_solve(J.tolist(), fx.tolist())
        if singular:
            return np.zeros(problem.dim), SINGULAR, 0.0
        if not _all_finite(y):
            return np.zeros(problem.dim), NONFINITE, sign
        return -np.array(y), OK, sign


class FrozenNewton(Preconditioner):
    """A(x) = -J_f(x0)^{-1} with the factorization of J_f(x0) computed once."""

    kind = "frozen"

    def __init__(self, problem: ProblemDef, x0) -> None:
        x0 = _as_point(problem, x0)
        J = eval_jacobian(problem, x0)
        factor = lu_factor(J[None])
        if factor.singular[0]:
            raise SingularMatrixError(f"Jacobian is singular at the freezing point {x0}")
        for arr in factor[:2]:
            arr.setflags(write=False)
        self.x0 = x0.copy()
        self.x0.setflags(write=False)
        self._factor = factor

    def apply(self, problem, X, fX, ok):
        m = X.shape[0]
        factor = LUFactor(
            np.broadcast_to(self._factor.lu, (m,) + self._factor.lu.shape[1:]),
            np.broadcast_to(self._factor.perm, (m, problem.dim)),
            np.zeros(m, dtype=bool),
            np.broadcast_to(self._factor.det_sign, (m,)),
        )
        y = lu_solve(factor, np.where(ok[:, None], fX, 0.0))
        with np.errstate(all="ignore"):
            values = np.where(ok[:, None], -y, 0.0)
        bad = ~ok | ~np.all(np.isfinite(values), axis=-1)
        values[bad] = 0.0
        return FieldEval(values, np.where(bad, NONFINITE, OK), None)

    def __repr__(self) -> str:
        return f"FrozenNewton(x0={self.x0.tolist()})"


def make_preconditioner(kind: str, problem: ProblemDef | None = None, x0=None) -> Preconditioner:
    """Build a preconditioner from its name: ``newton``, ``identity`` or ``frozen``."""
    if kind == "newton":
        return NewtonInverse()
    if kind == "identity":
        return NegIdentity()
    if kind == "frozen":
        if problem is None or x0 is None:
            raise ValueError("the frozen preconditioner needs a problem and a freezing point")
        return FrozenNewton(problem, x0)
    raise ValueError(f"unknown preconditioner {kind!r}")


def field_batch(problem: ProblemDef, precond: Preconditioner, X: np.ndarray) -> FieldEval:
    """Evaluate F at each row of ``X`` without raising; failures are coded per row."""
    X = _as_batch(problem, X)
    fX, ok = f_batch(problem, X)
    return precond.apply(problem, X, fX, ok)


def point_field(problem: ProblemDef, precond: Preconditioner, x: np.ndarray) -> tuple[np.ndarray, int, float]:
    """F at one point as (values, code, det_sign) without raising.

    A lean path for long sequential integrations; agrees with
    :func:`field_batch` to rounding but is not guaranteed bit-identical.
    """
    with np.errstate(all="ignore"):
        fx = np.asarray(problem.f(x), dtype=float).reshape(problem.dim)
    if not _all_finite(fx.tolist()):
        return np.zeros(problem.dim), NONFINITE, 0.0
    return precond.apply_point(problem, x, fx)


def _all_finite(values: list[float]) -> bool:
    return all(map(math.isfinite, values))


def eval_field(problem: ProblemDef, precond: Preconditioner, x) -> np.ndarray:
    """F(x) = A(x) f(x) at a single point.

    Raises :class:`SingularMatrixError` on the singular set of the factored
    Jacobian and :class:`NonFiniteError` on overflow.
    """
    x = _as_point(problem, x)
    ev = field_batch(problem, precond, x[None, :])
    code = ev.code[0]
    if code == SINGULAR:
        raise SingularMatrixError(f"Jacobian is singular at {x}")
    if code == NONFINITE:
        raise NonFiniteError(f"non-finite field value at {x}")
    return ev.values[0]

