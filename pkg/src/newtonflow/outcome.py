"""Solver configuration, per-step records and terminal outcomes."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .field import vnorm

__all__ = [
    "ROOT_MATCH_TOL",
    "SolverConfig",
    "Status",
    "StepRecord",
    "SolveOutcome",
    "BatchOutcome",
    "match_root",
    "match_roots",
]

ROOT_MATCH_TOL = 1e-4


@dataclass(frozen=True)
class SolverConfig:
    tau: float = 0.01
    eps: float = 1e-8
    t_lower: float = 1e-9
    n_max: int = 100
    reduce_factor: float = 0.5

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not 0 < self.t_lower < 1:
            raise ValueError(f"t_lower must lie in (0, 1), got {self.t_lower}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be a positive integer, got {self.n_max}")
        if not 0 < self.reduce_factor < 1:
            raise ValueError(f"reduce_factor must lie in (0, 1), got {self.reduce_factor}")
        object.__setattr__(self, "n_max", int(self.n_max))


class Status(enum.IntEnum):
    CONVERGED = 0
    STEP_UNDERFLOW = 1
    SINGULAR_JACOBIAN = 2
    MAX_ITERATIONS = 3
    NON_FINITE = 4

    @property
    def label(self) -> str:
        return _STATUS_LABELS[self]

    def __str__(self) -> str:
        return self.label


_STATUS_LABELS = {
    Status.CONVERGED: "Converged",
    Status.STEP_UNDERFLOW: "StepUnderflow",
    Status.SINGULAR_JACOBIAN: "SingularJacobian",
    Status.MAX_ITERATIONS: "MaxIterations",
    Status.NON_FINITE: "NonFinite",
}


@dataclass(frozen=True)
class StepRecord:
    """One accepted step taken from iterate ``x`` with step size ``t``.

    ``gamma`` is NaN for fixed-step iterations, which never compute it.
    """

    k: int
    x: np.ndarray
    t: float
    gamma: float
    norm_F: float
    norm_f: float
    rejections: int


@dataclass
class SolveOutcome:
    status: Status
    x: np.ndarray
    root_index: Optional[int] = None
    trace: list[StepRecord] = field(default_factory=list)
    evaluations: int = 0

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


@dataclass
class BatchOutcome:
    """Per-point results of a batched solve; ``status`` holds :class:`Status` codes."""

    status: np.ndarray
    x: np.ndarray
    iterations: np.ndarray
    evaluations: np.ndarray


def match_roots(roots: np.ndarray, X: np.ndarray, tol: float = ROOT_MATCH_TOL) -> np.ndarray:
    """Index of the nearest root within ``tol`` of each row of ``X``, else -1."""
    X = np.asarray(X, dtype=float)
    out = np.full(X.shape[0], -1, dtype=np.int64)
    if len(roots) == 0 or X.shape[0] == 0:
        return out
    with np.errstate(all="ignore"):
        dist = vnorm(X[:, None, :] - roots[None, :, :])
    dist = np.where(np.isfinite(dist), dist, np.inf)
    nearest = np.argmin(dist, axis=1)
    hit = dist[np.arange(X.shape[0]), nearest] <= tol
    out[hit] = nearest[hit]
    return out


def match_root(roots: np.ndarray, x, tol: float = ROOT_MATCH_TOL) -> Optional[int]:
    idx = int(match_roots(roots, np.asarray(x, dtype=float)[None, :], tol)[0])
    return None if idx < 0 else idx
