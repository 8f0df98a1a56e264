from __future__ import annotations

import numpy as np
import pytest

from newtonflow.basins import (
    MAX_ITERATIONS,
    NO_ATTRACTOR_LABEL,
    SINGULAR,
    STEP_UNDERFLOW,
    WRONG_ATTRACTOR,
    BasinGrid,
    Criterion,
    SolverSpec,
    convergence_stats,
    default_palette,
    grid_points,
    oracle_grid,
    read_oracle_cache,
    render_ppm,
    sample_grid,
    write_oracle_cache,
    write_stats_csv,
)
from newtonflow.errors import MissingOracleError
from newtonflow.outcome import SolverConfig
from newtonflow.problems import builtin_problem


def make_grid(labels, n_roots=2):
    labels = np.asarray(labels)
    nx, ny = labels.shape
    zeros = np.zeros_like(labels)
    roots = np.array([[0.0, 0.0], [0.5, 0.5], [0.2, -0.2]][:n_roots])
    return BasinGrid(np.array([[-1.0, 1.0], [-1.0, 1.0]]), nx, ny, labels, zeros, zeros, roots, "test")


def test_solver_spec_parsing():
    assert SolverSpec.parse("adaptive") == SolverSpec("adaptive")
    assert SolverSpec.parse("fixed:1") == SolverSpec("fixed", 1.0)
    assert SolverSpec.parse("reference:0.01").step == 0.01
    assert str(SolverSpec("fixed", 0.01)) == "fixed:0.01"
    assert SolverSpec("fixed", 1.0).tag == "fixed-1"
    for bad in ("newton", "fixed", "fixed:2", "fixed:abc", "reference:0.5", "adaptive:1"):
        with pytest.raises(ValueError):
            SolverSpec.parse(bad)


def test_grid_points_include_box_corners():
    pts = grid_points([[-3, 3], [-1, 2]], 2, 2)
    assert np.array_equal(pts, [[-3, -1], [-3, 2], [3, -1], [3, 2]])
    pts = grid_points([[0, 1], [0, 1]], 3, 5).reshape(3, 5, 2)
    i, j = 2, 3
    assert np.allclose(pts[i, j], [i / 2, j / 4])


def test_two_by_two_grid_has_four_corner_cells():
    g = sample_grid(builtin_problem("unique"), "fixed:1", nx=2, ny=2)
    assert g.labels.shape == (2, 2) and g.cells == 4


def test_cubic_adaptive_coarse_grid():
    g = sample_grid(builtin_problem("cubic"), "adaptive", nx=50, ny=50)
    assert convergence_stats(g).percent >= 99.0


def test_cubic_fixed_origin_cell_is_singular():
    g = sample_grid(builtin_problem("cubic"), "fixed:1", nx=5, ny=5)
    assert g.labels[2, 2] == SINGULAR


def test_unique_fixed_coarse_grid_matches_table():
    g = sample_grid(builtin_problem("unique"), "fixed:1", nx=100, ny=100)
    assert convergence_stats(g, "plain").percent == pytest.approx(51.2, abs=3)


def test_sample_grid_validation():
    p = builtin_problem("cubic")
    with pytest.raises(ValueError):
        sample_grid(p, "adaptive", nx=1, ny=5)
    with pytest.raises(ValueError):
        sample_grid(p, "adaptive", domain=[[-4, 3], [-3, 3]], nx=5, ny=5)
    with pytest.raises(ValueError):
        sample_grid(p, "bogus", nx=5, ny=5)


def test_sample_grid_subdomain_and_labels_valid():
    p = builtin_problem("expsin")
    g = sample_grid(p, "adaptive", domain=[[0.2, 1.4], [-1.0, 0.5]], nx=9, ny=7, config=SolverConfig(n_max=3))
    assert g.labels.shape == (9, 7)
    assert set(np.unique(g.labels)) <= set(range(6)) | {-1, -2, -3, -4, -5}
    assert MAX_ITERATIONS in g.labels


def test_reference_solver_labels_match_oracle():
    p = builtin_problem("expsin")
    g = sample_grid(p, "reference:0.01", nx=8, ny=8)
    o = oracle_grid(p, nx=8, ny=8)
    assert np.array_equal(np.where(o < 0, NO_ATTRACTOR_LABEL, o), g.labels)


def test_workers_do_not_change_results():
    p = builtin_problem("cubic")
    one = sample_grid(p, "adaptive", nx=23, ny=17, workers=1)
    three = sample_grid(p, "adaptive", nx=23, ny=17, workers=3)
    for name in ("labels", "iterations", "evaluations"):
        assert np.array_equal(getattr(one, name), getattr(three, name))
    assert render_ppm(one) == render_ppm(three)
    assert np.array_equal(oracle_grid(p, nx=6, ny=5, workers=1), oracle_grid(p, nx=6, ny=5, workers=2))


def test_stats_agreement_and_disagreement():
    g = make_grid(np.zeros((4, 4), dtype=int))
    same = np.zeros((4, 4), dtype=int)
    other = np.ones((4, 4), dtype=int)
    assert convergence_stats(g, "plain").percent == 100
    assert convergence_stats(g, "correct", same).percent == 100
    assert convergence_stats(g, "plain", other).percent == 100
    report = convergence_stats(g, Criterion.CORRECT, other)
    assert report.percent == 0
    assert report.failures == {WRONG_ATTRACTOR: 16}


def test_stats_no_attractor_cells_stay_in_denominator():
    g = make_grid([[0, 0], [1, STEP_UNDERFLOW]])
    oracle = np.array([[0, -1], [1, 1]])
    r = convergence_stats(g, "correct", oracle)
    assert r.percent == 50 and r.cells == 4
    assert r.per_root == {0: 1, 1: 1}
    assert r.failures == {NO_ATTRACTOR_LABEL: 1, STEP_UNDERFLOW: 1}
    assert sum(r.per_root.values()) + sum(r.failures.values()) == r.cells


def test_stats_requires_oracle():
    with pytest.raises(MissingOracleError):
        convergence_stats(make_grid(np.zeros((2, 2), dtype=int)), "correct")


def test_grid_rejects_invalid_labels():
    with pytest.raises(ValueError):
        make_grid([[0, 5], [0, 0]])
    with pytest.raises(ValueError):
        make_grid([[0, -42], [0, 0]])


def test_stats_csv(tmp_path):
    g = make_grid([[0, 0], [1, STEP_UNDERFLOW]])
    path = tmp_path / "stats.csv"
    write_stats_csv([convergence_stats(g)], path)
    assert path.read_text() == "solver,criterion,percent,cells,failures\ntest,plain,75,4,1\n"


def test_oracle_cache_round_trip(tmp_path):
    oracle = np.array([[0, 1, -1], [2, 2, 0]])
    path = tmp_path / "oracle.csv"
    write_oracle_cache(path, oracle)
    assert path.read_text().splitlines()[:3] == ["i,j,root_index", "0,0,0", "0,1,1"]
    assert np.array_equal(read_oracle_cache(path, 2, 3), oracle)
    with pytest.raises(ValueError):
        read_oracle_cache(path, 3, 3)
    with pytest.raises(ValueError):
        read_oracle_cache(path, 1, 3)


def test_render_ppm_raster_order():
    # raster order (top row = largest y): r0 r0 / fail r1
    labels = np.empty((2, 2), dtype=int)
    labels[0, 1], labels[1, 1] = 0, 0
    labels[0, 0], labels[1, 0] = STEP_UNDERFLOW, 1
    palette = {0: (255, 0, 0), 1: (0, 0, 255), STEP_UNDERFLOW: (0, 0, 0)}
    ppm = render_ppm(make_grid(labels), palette, mark_roots=False).decode()
    assert ppm == "P3\n2 2\n255\n255 0 0\n255 0 0\n0 0 0\n0 0 255\n"


def test_render_ppm_header_and_size():
    g = make_grid(np.zeros((50, 50), dtype=int))
    text = render_ppm(g).decode()
    assert text.startswith("P3\n50 50\n255\n")
    assert len(text.split()) == 4 + 3 * 2500


def test_render_ppm_marks_roots_with_inverted_ring():
    g = make_grid(np.zeros((81, 81), dtype=int), n_roots=1)
    plain = np.array(render_ppm(g, mark_roots=False).split()[4:], dtype=int).reshape(81, 81, 3)
    marked = np.array(render_ppm(g).split()[4:], dtype=int).reshape(81, 81, 3)
    changed = np.any(plain != marked, axis=-1)
    assert changed.any() and not changed[40, 40]
    assert np.array_equal(marked[changed], 255 - plain[changed])
    rows, cols = np.nonzero(changed)
    assert abs(rows.mean() - 40) < 0.5 and abs(cols.mean() - 40) < 0.5


def test_render_ppm_missing_palette_entry():
    g = make_grid([[0, 1], [STEP_UNDERFLOW, 0]])
    with pytest.raises(ValueError):
        render_ppm(g, {0: (1, 2, 3), 1: (4, 5, 6)})
    with pytest.raises(ValueError):
        render_ppm(g, {0: (1, 2, 3), 1: None, STEP_UNDERFLOW: (0, 0, 0)})


def test_default_palette_is_distinct():
    pal = default_palette(9)
    colors = [pal[k] for k in range(9)]
    assert len(set(colors)) == 9


@pytest.mark.parametrize("name", ["cubic", "expsin", "unique"])
@pytest.mark.parametrize("solver", ["adaptive", "fixed:1"])
def test_resolution_stability(grids, name, solver):
    coarse = convergence_stats(grids(name, solver, 100)).percent
    fine = convergence_stats(grids(name, solver, 200)).percent
    assert abs(coarse - fine) <= 2.0


@pytest.mark.parametrize("solver", ["adaptive", "fixed:1"])
def test_resolution_stability_correct_criterion(grids, oracles, solver):
    coarse = convergence_stats(grids("cubic", solver, 100), "correct", oracles("cubic", 100)).percent
    fine = convergence_stats(grids("cubic", solver, 200), "correct", oracles("cubic", 200)).percent
    assert abs(coarse - fine) <= 2.0
