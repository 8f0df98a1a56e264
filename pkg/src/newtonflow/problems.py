"""Built-in two-dimensional benchmark systems.

* ``cubic``:  z^3 - 1 in real form on [-3, 3]^2, three roots.
* ``expsin``: (exp(x^2 + y^2) - 3, x + y - sin(3(x + y))) on [-1.5, 1.5]^2, six roots.
* ``unique``: (-x^2 + y + 3, -x y - x + 4) on [-10, 10]^2, single root (2, 1).

All evaluators are vectorized over a leading batch axis.
"""

from __future__ import annotations

import enum
import functools
import math
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .field import ProblemDef

__all__ = [
    "BuiltinId",
    "builtin_problem",
    "singular_set_distance",
    "SingularDistance",
    "expsin_roots",
    "EXPSIN_SINGULAR_OFFSET",
    "EXPSIN_SINGULAR_PERIOD",
]


class BuiltinId(str, enum.Enum):
    CUBIC = "cubic"
    EXPSIN = "expsin"
    UNIQUE_ROOT = "unique"


def _vec(a, b):
    if np.ndim(a) == 0:  # single point: skip the costlier stack
        return np.array([a, b], dtype=float)
    return np.stack([a, b], axis=-1)


def _mat(a, b, c, d):
    if np.ndim(a) == 0:
        return np.array([[a, b], [c, d]], dtype=float)
    return np.stack([np.stack([a, b], axis=-1), np.stack([c, d], axis=-1)], axis=-2)


def _cubic_f(X):
    x, y = X[..., 0], X[..., 1]
    return _vec(x**3 - 3 * x * y**2 - 1, 3 * x**2 * y - y**3)


def _cubic_jac(X):
    x, y = X[..., 0], X[..., 1]
    a = 3 * x**2 - 3 * y**2
    b = 6 * x * y
    return _mat(a, -b, b, a)


def _expsin_f(X):
    x, y = X[..., 0], X[..., 1]
    s = x + y
    return _vec(np.exp(x**2 + y**2) - 3, s - np.sin(3 * s))


def _expsin_jac(X):
    x, y = X[..., 0], X[..., 1]
    e = np.exp(x**2 + y**2)
    c = 1 - 3 * np.cos(3 * (x + y))
    return _mat(2 * x * e, 2 * y * e, c, c)


def _unique_f(X):
    x, y = X[..., 0], X[..., 1]
    return _vec(-(x**2) + y + 3, -x * y - x + 4)


def _unique_jac(X):
    x, y = X[..., 0], X[..., 1]
    return _mat(-2 * x, np.ones_like(x), -y - 1, -x)


def expsin_roots() -> np.ndarray:
    """The six zeros of the exp/sin system.

    Zeros lie on x + y = s with s = sin(3 s), i.e. s in {0, +s1, -s1}, and
    on the circle x^2 + y^2 = ln 3.  Writing d = x - y gives
    d = +-sqrt(2 ln 3 - s^2).
    """
    s1 = brentq(lambda s: s - math.sin(3 * s), 0.5, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    r2 = math.log(3.0)
    roots = []
    for s in (0.0, s1, -s1):
        d = math.sqrt(2 * r2 - s * s)
        roots.append(((s + d) / 2, (s - d) / 2))
        roots.append(((s - d) / 2, (s + d) / 2))
    return np.array(roots)


def builtin_problem(problem_id: BuiltinId | str) -> ProblemDef:
    """Return the shared, immutable definition of a built-in problem."""
    return _builtin(BuiltinId(problem_id))


@functools.lru_cache(maxsize=None)
def _builtin(pid: BuiltinId) -> ProblemDef:
    if pid is BuiltinId.CUBIC:
        h = math.sqrt(3.0) / 2
        return ProblemDef(
            dim=2,
            f=_cubic_f,
            jac=_cubic_jac,
            domain=[[-3.0, 3.0], [-3.0, 3.0]],
            known_roots=[[1.0, 0.0], [-0.5, h], [-0.5, -h]],
            name=pid.value,
            vectorized=True,
        )
    if pid is BuiltinId.EXPSIN:
        return ProblemDef(
            dim=2,
            f=_expsin_f,
            jac=_expsin_jac,
            domain=[[-1.5, 1.5], [-1.5, 1.5]],
            known_roots=expsin_roots(),
            name=pid.value,
            vectorized=True,
        )
    return ProblemDef(
        dim=2,
        f=_unique_f,
        jac=_unique_jac,
        domain=[[-10.0, 10.0], [-10.0, 10.0]],
        known_roots=[[2.0, 1.0]],
        name=pid.value,
        vectorized=True,
    )


# det J = exp(x^2+y^2) (1 - 3 cos(3(x+y))) 2 (x - y) vanishes on y = x and on
# x + y = +-arccos(1/3)/3 + k 2 pi/3.
EXPSIN_SINGULAR_OFFSET = math.acos(1.0 / 3.0) / 3.0
EXPSIN_SINGULAR_PERIOD = 2.0 * math.pi / 3.0


class SingularDistance(NamedTuple):
    value: float
    proxy: bool  # True when ``value`` is |det J_f| rather than a distance


def _distance_to_lattice(s: float, offset: float, period: float) -> float:
    r = (s - offset) % period
    return min(r, period - r)


def singular_set_distance(problem_id: BuiltinId | str, x) -> SingularDistance:
    """Distance from ``x`` to the singular set of the Jacobian.

    Exact Euclidean distance for ``cubic`` (the origin) and ``expsin`` (two
    families of lines).  For ``unique`` the set is not characterized and
    |det J_f(x)| = |2 x^2 + y + 1| is returned with ``proxy=True``.
    """
    pid = BuiltinId(problem_id)
    x0, x1 = (float(v) for v in np.asarray(x, dtype=float).reshape(2))
    if pid is BuiltinId.CUBIC:
        return SingularDistance(math.hypot(x0, x1), False)
    if pid is BuiltinId.EXPSIN:
        s = x0 + x1
        along = min(
            _distance_to_lattice(s, EXPSIN_SINGULAR_OFFSET, EXPSIN_SINGULAR_PERIOD),
            _distance_to_lattice(s, -EXPSIN_SINGULAR_OFFSET, EXPSIN_SINGULAR_PERIOD),
        )
        return SingularDistance(min(abs(x0 - x1), along) / math.sqrt(2.0), False)
    return SingularDistance(abs(2 * x0 * x0 + x1 + 1), True)
