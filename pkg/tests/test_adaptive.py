from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest

from newtonflow.adaptive import (
    adaptive_step,
    gamma,
    initial_step,
    predict_step,
    project,
    solve_adaptive,
    solve_adaptive_many,
)
from newtonflow.classical import solve_fixed_step
from newtonflow.errors import StepUnderflowError, ZeroDirectionError
from newtonflow.field import NegIdentity, NewtonInverse, ProblemDef, eval_field
from newtonflow.outcome import SolverConfig, Status
from newtonflow.problems import builtin_problem


def identity_problem():
    return ProblemDef(dim=2, f=lambda x: x, domain=[[-2, 2], [-2, 2]], known_roots=[[0, 0]])


def test_initial_step_examples():
    assert initial_step(2.0, 0.01) == pytest.approx(0.1)
    assert initial_step(0.02, 0.01) == 1.0
    assert initial_step(0.001, 0.01) == 1.0
    assert initial_step(0.0, 0.01) == 1.0
    with pytest.raises(ValueError):
        initial_step(1.0, 0.0)


def test_predict_step():
    assert predict_step(0.0, 0.01) == 1.0
    assert predict_step(0.02, 0.01) == 0.5
    assert predict_step(1e-5, 0.01) == 1.0


def test_project_examples():
    assert np.allclose(project([1, 0], [1, 1]), [0.5, 0.5])
    u = np.array([0.3, -2.0])
    assert np.allclose(project(u, u), u)
    assert np.allclose(project([1, 1], [1, -1]), 0)
    with pytest.raises(ZeroDirectionError):
        project([1, 0], [0, 0])


def test_gamma_examples():
    assert gamma([0.3, 0.7], [0.3, 0.7]) == 0
    assert gamma([1, 0], [0, 1]) == pytest.approx(0, abs=1e-16)
    # exact rational oracle: v = (1, 2), proj = (1/5, 2/5), v/2 - proj = (3/10, 3/5)
    a, b = Fraction(3, 10), Fraction(3, 5)
    assert gamma([1, 0], [0, 2]) == pytest.approx(math.sqrt(a * a + b * b), rel=1e-15)
    assert gamma([1, 0], [0, 2]) == pytest.approx(0.3 * math.sqrt(5), rel=1e-15)
    with pytest.raises(ZeroDirectionError):
        gamma([1, 0], [-1, 0])


def test_adaptive_step_affine_hand_trace():
    # f(x) = x, Newton field F = -x; the trial point x0 + tF0 = (1 - t) x0 gives gamma = t/2,
    # so the step halves until t^2 / 2 <= tau: t = 1/8 after three rejections
    p = identity_problem()
    cfg = SolverConfig(tau=0.01)
    step = adaptive_step(p, NewtonInverse(), [1.0, 0.0], 1.0, cfg)
    assert step.t == 0.125
    assert step.rejections == 3
    assert step.gamma == pytest.approx(0.0625)
    assert np.allclose(step.x, [0.875, 0.0])
    assert step.evaluations == 4


def test_adaptive_step_full_step_at_root_trial():
    # at t = 1 the trial point is the root, F1 = 0 and gamma = |F0| / 2
    p = identity_problem()
    cfg = SolverConfig(tau=0.6)
    step = adaptive_step(p, NewtonInverse(), [1.0, 0.0], 1.0, cfg)
    assert (step.t, step.gamma, step.rejections) == (1.0, 0.5, 0)
    assert np.allclose(step.x, 0)


def test_adaptive_step_near_root_takes_full_projected_newton_step():
    p = builtin_problem("cubic")
    x0 = np.array([1 + 5e-5, 3e-5])
    step = adaptive_step(p, NewtonInverse(), x0, 1.0, SolverConfig())
    assert step.rejections == 0 and step.t == 1.0
    F0 = eval_field(p, NewtonInverse(), x0)
    F1 = eval_field(p, NewtonInverse(), x0 + F0)
    assert np.array_equal(step.x, x0 + project(F0, F0 + F1))
    assert step.gamma < 1e-3


def test_adaptive_step_underflow_guard():
    p = identity_problem()
    cfg = SolverConfig(t_lower=1e-3)
    with pytest.raises(StepUnderflowError):
        adaptive_step(p, NewtonInverse(), [1.0, 0.0], 1e-4, cfg)
    with pytest.raises(ValueError):
        adaptive_step(p, NewtonInverse(), [1.0, 0.0], 0.0, cfg)


def test_solve_adaptive_near_root_matches_newton():
    p = builtin_problem("cubic")
    out = solve_adaptive(p, NewtonInverse(), [1.001, 0.0])
    assert out.status is Status.CONVERGED and out.root_index == 0
    assert out.iterations <= 4
    assert all(r.t == 1.0 for r in out.trace)
    newton = solve_fixed_step(p, NewtonInverse(), [1.001, 0.0], 1.0)
    assert out.iterations == newton.iterations
    assert np.allclose(out.x, newton.x, atol=1e-12)


def test_solve_adaptive_at_origin_fails():
    out = solve_adaptive(builtin_problem("cubic"), NewtonInverse(), [0.0, 0.0])
    assert out.status in (Status.SINGULAR_JACOBIAN, Status.STEP_UNDERFLOW)
    assert not out.converged


def test_solve_adaptive_at_root_takes_no_steps():
    p = builtin_problem("unique")
    out = solve_adaptive(p, NewtonInverse(), [2.0, 1.0])
    assert out.converged and out.iterations == 0 and out.root_index == 0


def test_solve_adaptive_trace_contract():
    p = builtin_problem("cubic")
    cfg = SolverConfig()
    out = solve_adaptive(p, NewtonInverse(), [0.08, 0.55], cfg)
    assert out.converged and out.root_index == 1
    for r in out.trace:
        assert r.t * r.gamma <= cfg.tau
        assert r.t >= cfg.t_lower
        assert r.norm_F > cfg.eps
    assert float(np.linalg.norm(eval_field(p, NewtonInverse(), out.x))) <= cfg.eps


def test_solve_adaptive_max_iterations():
    p = builtin_problem("cubic")
    out = solve_adaptive(p, NewtonInverse(), [2.5, 1.7], SolverConfig(n_max=2))
    assert out.status is Status.MAX_ITERATIONS and out.iterations == 2


def test_solve_adaptive_rejects_bad_start():
    with pytest.raises(ValueError):
        solve_adaptive(builtin_problem("cubic"), NewtonInverse(), [np.nan, 0])
    with pytest.raises(ValueError):
        solve_adaptive(builtin_problem("cubic"), NewtonInverse(), [1, 0, 0])


def test_solve_adaptive_is_deterministic():
    p = builtin_problem("expsin")
    a = solve_adaptive(p, NewtonInverse(), [0.9, -0.2])
    b = solve_adaptive(p, NewtonInverse(), [0.9, -0.2])
    assert a.status == b.status and np.array_equal(a.x, b.x)
    assert [(r.t, r.gamma, r.rejections) for r in a.trace] == [(r.t, r.gamma, r.rejections) for r in b.trace]


def test_projected_update_is_collinear_with_v():
    p = builtin_problem("expsin")
    x0 = np.array([1.0, -0.3])
    F0 = eval_field(p, NewtonInverse(), x0)
    step = adaptive_step(p, NewtonInverse(), x0, 1.0, SolverConfig())
    F1 = eval_field(p, NewtonInverse(), x0 + step.t * F0)
    v = F0 + F1
    d = step.x - x0
    cross = abs(d[0] * v[1] - d[1] * v[0]) / (np.linalg.norm(d) * np.linalg.norm(v))
    assert math.asin(min(1.0, cross)) <= 1e-12


@pytest.mark.parametrize("name", ["cubic", "expsin", "unique"])
def test_batch_solver_matches_scalar_bitwise(name):
    p = builtin_problem(name)
    rng = np.random.default_rng(11)
    X = rng.uniform(p.domain[:, 0], p.domain[:, 1], size=(150, 2))
    X[0] = 0.0
    batch = solve_adaptive_many(p, NewtonInverse(), X)
    for i, x in enumerate(X):
        out = solve_adaptive(p, NewtonInverse(), x)
        assert batch.status[i] == out.status
        assert np.array_equal(batch.x[i], out.x)
        assert batch.iterations[i] == out.iterations
        assert batch.evaluations[i] == out.evaluations


def test_picard_preconditioner_runs():
    p = identity_problem()
    out = solve_adaptive(p, NegIdentity(), [0.5, -0.5])
    assert out.converged and out.root_index == 0
