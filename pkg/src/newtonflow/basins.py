"""Basins of attraction on rectangular grids of initial values.

Each grid cell is labeled with the index of the root its iteration reached
(>= 0) or with a negative failure code.  Grids feed convergence statistics
and plain-text PPM images.
"""

from __future__ import annotations

import csv
import enum
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .adaptive import solve_adaptive_many
from .classical import NO_ATTRACTOR, ORACLE_DT, ORACLE_T_END, attractor_oracle_many, solve_fixed_step_many
from .errors import MissingOracleError
from .field import NewtonInverse, Preconditioner, ProblemDef
from .outcome import ROOT_MATCH_TOL, BatchOutcome, SolverConfig, Status, match_roots

__all__ = [
    "STEP_UNDERFLOW",
    "SINGULAR",
    "MAX_ITERATIONS",
    "NON_FINITE",
    "UNMATCHED",
    "NO_ATTRACTOR_LABEL",
    "WRONG_ATTRACTOR",
    "LABEL_NAMES",
    "SolverSpec",
    "BasinGrid",
    "Criterion",
    "StatsReport",
    "grid_points",
    "sample_grid",
    "oracle_grid",
    "convergence_stats",
    "write_stats_csv",
    "write_oracle_cache",
    "read_oracle_cache",
    "default_palette",
    "render_ppm",
]

STEP_UNDERFLOW = -1
SINGULAR = -2
MAX_ITERATIONS = -3
NON_FINITE = -4
UNMATCHED = -5  # converged, but not within the match tolerance of a known root
NO_ATTRACTOR_LABEL = -6  # the exact flow ends on the singular set
WRONG_ATTRACTOR = -7  # statistics only: converged to a root outside the exact attractor

LABEL_NAMES = {
    STEP_UNDERFLOW: "StepUnderflow",
    SINGULAR: "SingularJacobian",
    MAX_ITERATIONS: "MaxIterations",
    NON_FINITE: "NonFinite",
    UNMATCHED: "Unmatched",
    NO_ATTRACTOR_LABEL: "NoAttractor",
    WRONG_ATTRACTOR: "WrongAttractor",
}

_STATUS_LABEL = {
    Status.STEP_UNDERFLOW: STEP_UNDERFLOW,
    Status.SINGULAR_JACOBIAN: SINGULAR,
    Status.MAX_ITERATIONS: MAX_ITERATIONS,
    Status.NON_FINITE: NON_FINITE,
}


@dataclass(frozen=True)
class SolverSpec:
    """Which iteration labels a grid: ``adaptive``, ``fixed:<t>`` or ``reference:<dt>``."""

    kind: str
    step: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind == "adaptive":
            if self.step is not None:
                raise ValueError("the adaptive solver takes no step parameter")
        elif self.kind == "fixed":
            if self.step is None or not 0 < self.step <= 1:
                raise ValueError(f"fixed step must lie in (0, 1], got {self.step}")
        elif self.kind == "reference":
            if self.step is None or not 0 < self.step <= 1e-2:
                raise ValueError(f"reference dt must lie in (0, 1e-2], got {self.step}")
        else:
            raise ValueError(f"unknown solver kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "SolverSpec":
        kind, _, arg = text.strip().partition(":")
        if not arg:
            return cls(kind)
        try:
            step = float(arg)
        except ValueError:
            raise ValueError(f"bad step in solver spec {text!r}") from None
        return cls(kind, step)

    def __str__(self) -> str:
        return self.kind if self.step is None else f"{self.kind}:{self.step:g}"

    @property
    def tag(self) -> str:
        """Filesystem-friendly name."""
        return str(self).replace(":", "-")


@dataclass
class BasinGrid:
    """Labels on an ``nx`` by ``ny`` grid; cell ``[i, j]`` starts at ``(x_i, y_j)``."""

    domain: np.ndarray  # (2, 2): [[x_lo, x_hi], [y_lo, y_hi]]
    nx: int
    ny: int
    labels: np.ndarray  # (nx, ny) int
    iterations: np.ndarray  # (nx, ny) outer iterations
    evaluations: np.ndarray  # (nx, ny) field evaluations
    roots: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    solver: str = ""

    def __post_init__(self) -> None:
        for name in ("labels", "iterations", "evaluations"):
            if getattr(self, name).shape != (self.nx, self.ny):
                raise ValueError(f"{name} must have shape ({self.nx}, {self.ny})")
        bad = (self.labels >= len(self.roots)) | ((self.labels < 0) & ~np.isin(self.labels, list(LABEL_NAMES)))
        if np.any(bad):
            raise ValueError("labels must be root indices or failure codes")

    @property
    def cells(self) -> int:
        return self.nx * self.ny


def grid_points(domain, nx: int, ny: int) -> np.ndarray:
    """Start points in cell order, flat index ``i * ny + j``; both box edges included."""
    domain = np.asarray(domain, dtype=float).reshape(2, 2)
    xs = np.linspace(domain[0, 0], domain[0, 1], nx)
    ys = np.linspace(domain[1, 0], domain[1, 1], ny)
    return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1).reshape(-1, 2)


def _validate_grid(problem: ProblemDef, domain, nx: int, ny: int) -> np.ndarray:
    if problem.dim != 2:
        raise ValueError("grid sampling needs a two-dimensional problem")
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise ValueError(f"grid resolution must be at least 2 x 2, got {nx} x {ny}")
    domain = problem.domain if domain is None else np.asarray(domain, dtype=float).reshape(2, 2)
    if np.any(domain[:, 0] >= domain[:, 1]):
        raise ValueError("domain bounds must satisfy lo < hi")
    if np.any(domain[:, 0] < problem.domain[:, 0]) or np.any(domain[:, 1] > problem.domain[:, 1]):
        raise ValueError("grid domain must lie within the problem domain")
    return domain


def _labels(problem: ProblemDef, out: BatchOutcome) -> np.ndarray:
    labels = np.full(out.status.shape, UNMATCHED, dtype=np.int64)
    conv = out.status == Status.CONVERGED
    matched = match_roots(problem.known_roots, out.x[conv], ROOT_MATCH_TOL)
    labels[conv] = np.where(matched >= 0, matched, UNMATCHED)
    for status, code in _STATUS_LABEL.items():
        labels[out.status == status] = code
    return labels


def _solve_chunk(problem, solver, precond, config, X):
    if solver.kind == "adaptive":
        out = solve_adaptive_many(problem, precond, X, config)
    elif solver.kind == "fixed":
        out = solve_fixed_step_many(problem, precond, X, solver.step, config)
    else:
        labels = attractor_oracle_many(problem, X, solver.step, ORACLE_T_END, config.eps, ROOT_MATCH_TOL)
        labels = np.where(labels == NO_ATTRACTOR, NO_ATTRACTOR_LABEL, labels)
        zeros = np.zeros(len(X), dtype=np.int64)
        return labels, zeros, zeros
    return _labels(problem, out), out.iterations, out.evaluations


def _run_chunks(fn, args: tuple, X: np.ndarray, workers: int) -> list:
    workers = max(1, int(workers))
    if workers == 1 or len(X) < 2 * workers:
        return [fn(*args, X)]
    chunks = np.array_split(X, workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*[args + (c,) for c in chunks])))


def sample_grid(
    problem: ProblemDef,
    solver: SolverSpec | str,
    domain=None,
    nx: int = 100,
    ny: int = 100,
    config: Optional[SolverConfig] = None,
    precond: Optional[Preconditioner] = None,
    workers: int = 1,
) -> BasinGrid:
    """Solve from every grid point and label the cells.

    The result does not depend on ``workers``: cells never interact and are
    reassembled in index order.
    """
    solver = SolverSpec.parse(solver) if isinstance(solver, str) else solver
    config = config or SolverConfig()
    precond = precond or NewtonInverse()
    domain = _validate_grid(problem, domain, nx, ny)
    X = grid_points(domain, nx, ny)
    parts = _run_chunks(_solve_chunk, (problem, solver, precond, config), X, workers)
    labels, iters, evals = (np.concatenate(col).reshape(nx, ny) for col in zip(*parts))
    return BasinGrid(domain, nx, ny, labels, iters, evals, np.array(problem.known_roots), str(solver))


def _oracle_chunk(problem, dt, t_end, eps, X):
    return attractor_oracle_many(problem, X, dt, t_end, eps, ROOT_MATCH_TOL)


def oracle_grid(
    problem: ProblemDef,
    domain=None,
    nx: int = 100,
    ny: int = 100,
    dt: float = ORACLE_DT,
    t_end: float = ORACLE_T_END,
    config: Optional[SolverConfig] = None,
    workers: int = 1,
) -> np.ndarray:
    """Exact-attractor root index per cell, ``NO_ATTRACTOR`` (-1) where the flow dies."""
    config = config or SolverConfig()
    domain = _validate_grid(problem, domain, nx, ny)
    X = grid_points(domain, nx, ny)
    parts = _run_chunks(_oracle_chunk, (problem, dt, t_end, config.eps), X, workers)
    return np.concatenate(parts).reshape(nx, ny)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


class Criterion(str, enum.Enum):
    PLAIN = "plain"  # any root counts
    CORRECT = "correct"  # the root of the exact attractor of the start point


@dataclass
class StatsReport:
    solver: str
    criterion: Criterion
    percent: float
    cells: int
    convergent: int
    per_root: dict[int, int]
    failures: dict[int, int]  # label code -> count; with per_root sums to ``cells``


def convergence_stats(
    grid: BasinGrid,
    criterion: Criterion | str = Criterion.PLAIN,
    oracle: Optional[np.ndarray] = None,
) -> StatsReport:
    """Percentage of convergent cells under the plain or correct-attractor criterion.

    Under ``correct`` a cell counts only if its label equals the oracle label;
    cells without an exact attractor stay in the denominator.
    """
    criterion = Criterion(criterion)
    labels = grid.labels
    if criterion is Criterion.CORRECT:
        if oracle is None:
            raise MissingOracleError("the correct-attractor criterion needs oracle labels")
        oracle = np.asarray(oracle).reshape(labels.shape)
        outcome = labels.copy()
        reached = labels >= 0
        outcome[reached & (oracle < 0)] = NO_ATTRACTOR_LABEL
        outcome[reached & (oracle >= 0) & (labels != oracle)] = WRONG_ATTRACTOR
    else:
        outcome = labels
    values, counts = np.unique(outcome, return_counts=True)
    per_root = {int(v): int(c) for v, c in zip(values, counts) if v >= 0}
    failures = {int(v): int(c) for v, c in zip(values, counts) if v < 0}
    convergent = sum(per_root.values())
    return StatsReport(
        grid.solver, criterion, 100.0 * convergent / grid.cells, grid.cells, convergent, per_root, failures
    )


def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_stats_csv(reports: Iterable[StatsReport], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["solver", "criterion", "percent", "cells", "failures"])
        for r in reports:
            writer.writerow([r.solver, r.criterion.value, _fmt(r.percent), r.cells, r.cells - r.convergent])


def write_oracle_cache(path, oracle: np.ndarray) -> None:
    """Store oracle labels as CSV rows ``i,j,root_index`` (-1 for no attractor)."""
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "root_index"])
        nx, ny = oracle.shape
        for i in range(nx):
            for j in range(ny):
                writer.writerow([i, j, int(oracle[i, j])])
    os.replace(tmp, path)


def read_oracle_cache(path, nx: int, ny: int) -> np.ndarray:
    """Load labels written by :func:`write_oracle_cache`; the grid shape must match."""
    oracle = np.full((nx, ny), np.iinfo(np.int64).min, dtype=np.int64)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["i", "j", "root_index"]:
            raise ValueError(f"{path}: expected header i,j,root_index")
        for row in reader:
            i, j = int(row["i"]), int(row["j"])
            if not (0 <= i < nx and 0 <= j < ny):
                raise ValueError(f"{path}: cell ({i}, {j}) outside a {nx} x {ny} grid")
            oracle[i, j] = int(row["root_index"])
    if np.any(oracle == np.iinfo(np.int64).min):
        raise ValueError(f"{path}: cache does not cover a {nx} x {ny} grid")
    return oracle


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

_ROOT_COLORS = [
    (230, 159, 0),
    (86, 180, 233),
    (0, 158, 115),
    (240, 228, 66),
    (0, 114, 178),
    (213, 94, 0),
    (204, 121, 167),
]
_FAILURE_COLORS = {
    STEP_UNDERFLOW: (20, 20, 90),
    SINGULAR: (0, 0, 0),
    MAX_ITERATIONS: (10, 30, 120),
    NON_FINITE: (60, 60, 60),
    UNMATCHED: (128, 128, 128),
    NO_ATTRACTOR_LABEL: (40, 0, 60),
}


def default_palette(n_roots: int) -> dict[int, tuple[int, int, int]]:
    """Distinct colors for root indices plus one color per failure code."""
    palette = dict(_FAILURE_COLORS)
    for k in range(n_roots):
        if k < len(_ROOT_COLORS):
            palette[k] = _ROOT_COLORS[k]
        else:
            # golden-angle hue walk for large root sets
            h = (k * 0.381966) % 1.0
            palette[k] = tuple(int(255 * (0.5 + 0.5 * np.cos(2 * np.pi * (h + s)))) for s in (0, 1 / 3, 2 / 3))
    return palette


def render_ppm(
    grid: BasinGrid,
    palette: Optional[dict[int, Sequence[int]]] = None,
    mark_roots: bool = True,
) -> bytes:
    """Plain (P3) pixmap of the grid, top row at the largest y.

    With ``mark_roots`` every known root inside the domain gets a small ring
    of inverted color.
    """
    palette = default_palette(len(grid.roots)) if palette is None else palette
    lut_keys = np.unique(grid.labels)
    missing = [int(k) for k in lut_keys if int(k) not in palette or palette[int(k)] is None]
    if missing:
        raise ValueError(f"palette has no color for labels {missing}")
    image = np.zeros((grid.ny, grid.nx, 3), dtype=np.int64)
    for key in lut_keys:
        color = np.asarray(palette[int(key)], dtype=np.int64)
        if color.shape != (3,) or np.any(color < 0) or np.any(color > 255):
            raise ValueError(f"palette entry for {int(key)} must be an RGB triple in [0, 255]")
        mask = (grid.labels == key).T[::-1]
        image[mask] = color
    if mark_roots:
        _mark_roots(image, grid)
    lines = [f"P3\n{grid.nx} {grid.ny}\n255"]
    lines.extend(f"{r} {g} {b}" for r, g, b in image.reshape(-1, 3))
    return ("\n".join(lines) + "\n").encode("ascii")


def _mark_roots(image: np.ndarray, grid: BasinGrid) -> None:
    (x0, x1), (y0, y1) = grid.domain
    radius = max(2.0, min(grid.nx, grid.ny) / 80.0)
    cols = np.arange(grid.nx)
    rows = np.arange(grid.ny)
    for rx, ry in grid.roots:
        if not (x0 <= rx <= x1 and y0 <= ry <= y1):
            continue
        ci = (rx - x0) / (x1 - x0) * (grid.nx - 1)
        cj = (ry - y0) / (y1 - y0) * (grid.ny - 1)
        r = (grid.ny - 1) - cj
        d = np.hypot(cols[None, :] - ci, rows[:, None] - r)
        ring = np.abs(d - radius) <= 0.5
        image[ring] = 255 - image[ring]
