import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import GAMMA_EX1, example1_qp, groups, random_constrained_qp
from hetofo.adaptive import standard_config
from hetofo.operators import StepSizeGroups, min_regularization, monotonicity_matrix, kkt_matrices
from hetofo.oracle import solve_saddle_point
from hetofo.projection import Box, Halfspace
from hetofo.qp_model import GAMMA_WEIGHTED, QuadraticProgram, RegularizationParams, evaluate_objective
from hetofo.scenario import NetworkParams, synth_network
from hetofo.solvers import (PrimalDualState, SolverConfig, SolverError, bisect_alpha, gamma_switch,
                            initial_state, is_stable, iterate, primal_dual_step,
                            projected_gradient_step, run_online)


def _run_example1(gamma, switching, steps=2000):
    qp = example1_qp()
    cfg = SolverConfig(alpha=0.1, switching=switching, max_steps=steps)
    state = PrimalDualState(np.array([10.0, 0.0]), np.zeros(0))
    return iterate(qp, cfg, groups(gamma), state, primal_only=True).x


def test_switch_falls_back_to_identity_on_boundary():
    G = gamma_switch([4, 4], GAMMA_EX1, 1e-3, [4, 4], Halfspace(np.ones(2), 8.0, ">="))
    np.testing.assert_array_equal(G, np.eye(2))


def test_switch_keeps_gamma_for_interior_points():
    G = gamma_switch([0.5, 0.5], GAMMA_EX1, 1e-6, [1, -1], Box(np.zeros(2), np.ones(2)))
    np.testing.assert_array_equal(G, np.diag(GAMMA_EX1))


def test_switch_keeps_gamma_at_zero_gradient():
    G = gamma_switch([4, 4], GAMMA_EX1, 0.1, [0, 0], Halfspace(np.ones(2), 8.0, ">="))
    np.testing.assert_array_equal(G, np.diag(GAMMA_EX1))


def test_unswitched_heterogeneous_steps_stop_at_suboptimal_point():
    x = _run_example1(GAMMA_EX1, switching=False)
    np.testing.assert_allclose(x, [5, 3], atol=1e-9)
    assert evaluate_objective(example1_qp(), x) == pytest.approx(17, abs=1e-6)


def test_switched_heterogeneous_steps_reach_optimum():
    x = _run_example1(GAMMA_EX1, switching=True)
    np.testing.assert_allclose(x, [4, 4], atol=1e-9)
    assert evaluate_objective(example1_qp(), x) == pytest.approx(16, abs=1e-6)


def test_unconstrained_iteration_reaches_minimizer():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -4.0])
    qp = QuadraticProgram(A, b)
    cfg = SolverConfig(alpha=0.2, max_steps=500)
    x = iterate(qp, cfg, groups([1.0, 0.7]), primal_only=True).x
    np.testing.assert_allclose(x, np.linalg.solve(A, -b), atol=1e-9)


def test_primal_dual_converges_to_saddle_point(rng):
    qp = random_constrained_qp(rng, n=3, M=2)
    g = groups(rng.uniform(0.5, 2.0, 3), rng.uniform(0.5, 2.0, 2), alpha=1.0)
    W, _ = kkt_matrices(qp)
    p, _, _ = min_regularization(monotonicity_matrix(W, g.gamma))
    reg = RegularizationParams(p, mode=GAMMA_WEIGHTED)
    z_star, _ = solve_saddle_point(qp, reg, g)
    cfg = SolverConfig(alpha=0.02, reg=reg, max_steps=20000)
    state = iterate(qp, cfg, g, tol=1e-13)
    np.testing.assert_allclose(state.z, z_star, atol=1e-6)


def test_without_constraints_primal_dual_equals_projected_gradient(rng):
    qp = QuadraticProgram(np.diag([2.0, 1.0]), np.array([1.0, 1.0]),
                          input_sets=(Box(-np.ones(2), np.ones(2)),))
    cfg = SolverConfig(alpha=0.1, reg=RegularizationParams(0.2, 0.2))
    g = groups([0.6, 1.7])
    s1 = s2 = PrimalDualState(np.array([0.9, -0.9]), np.zeros(0))
    for _ in range(30):
        s1 = primal_dual_step(qp, s1, cfg, g)
        s2 = projected_gradient_step(qp, s2, cfg, g)
        np.testing.assert_array_equal(s1.x, s2.x)


def test_one_step_hand_value():
    qp = QuadraticProgram(np.eye(1), np.ones(1), D=np.ones((1, 1)), d=np.ones(1),
                          input_sets=(Box(np.full(1, -10.0), np.full(1, 10.0)),))
    cfg = SolverConfig(alpha=0.1)
    new = primal_dual_step(qp, initial_state(qp), cfg, groups([1.0], [1.0]))
    # grad_x = b + D'lam = 1, grad_lam = Dx + d = 1
    np.testing.assert_allclose(new.x, [-0.1])
    np.testing.assert_allclose(new.lam, [0.1])


def test_rejects_dual_outside_box():
    qp = QuadraticProgram(np.eye(1), np.ones(1), D=np.ones((1, 1)), d=np.ones(1))
    with pytest.raises(ValueError):
        primal_dual_step(qp, PrimalDualState(np.zeros(1), -np.ones(1)), SolverConfig(),
                         groups([1.0], [1.0]))


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(alpha=0.0)
    with pytest.raises(ValueError):
        SolverConfig(estimator="newton")


def _small_network(horizon=60, **kw):
    return synth_network(NetworkParams(n_ders=2, m_voltage_buses=1, horizon=horizon, **kw))


def _uniform(sc, alpha):
    return StepSizeGroups.uniform(sc.n, sc.M, alpha, 1.0, sc.group_labels())


def test_runs_are_bit_identical():
    sc = _small_network(e_y=0.01)
    cfg = SolverConfig(estimator="jacobian_feedback", alpha=0.05, reg=RegularizationParams(1e-2, 1e-2))
    a = run_online(sc, cfg, _uniform(sc, 0.05), adaptive=standard_config(set(sc.group_labels())))
    b = run_online(sc, cfg, _uniform(sc, 0.05), adaptive=standard_config(set(sc.group_labels())))
    assert a.to_csv() == b.to_csv()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["exact", "jacobian_feedback"]))
def test_iterates_stay_feasible(seed, estimator):
    sc = synth_network(NetworkParams(n_ders=3, m_voltage_buses=2, horizon=40, seed=seed,
                                     load_drift_amplitude=0.2, e_y=0.005))
    cfg = SolverConfig(estimator=estimator, alpha=0.2, reg=RegularizationParams(1e-2, 1e-2))
    traj = run_online(sc, cfg, _uniform(sc, 0.2), adaptive=standard_config(set(sc.group_labels())))
    for k in range(traj.steps + 1):
        qp = sc.qp_at(min(k, sc.horizon - 1))
        assert qp.contains(traj.x[k], 1e-10)
        assert np.all(traj.lam[k] >= 0) and np.all(traj.lam[k] <= sc.lambda_max)


def test_switching_rejects_suboptimal_fixed_point():
    from hetofo.oracle import fixed_point_residual
    g = groups(GAMMA_EX1, alpha=0.1)
    assert fixed_point_residual(example1_qp(), None, g, [5, 3], switching=True) > 0


def test_error_to_saddle_point_decreases_below_threshold(rng):
    qp = random_constrained_qp(rng, n=3, M=2)
    g = StepSizeGroups.uniform(3, 2, 1.0, 1.0)
    reg = RegularizationParams(0.05, 0.05)
    z_star, _ = solve_saddle_point(qp, reg, g)
    from hetofo.oracle import contraction_run
    cfg = SolverConfig(alpha=0.01, reg=reg)
    errors = contraction_run(qp, cfg, g, z_star, steps=3000)
    assert np.all(np.diff(errors[errors > 1e-12]) <= 1e-12)


def test_bisection_brackets_the_stability_threshold():
    sc = _small_network(horizon=1)
    cfg = SolverConfig(alpha=1.0, reg=RegularizationParams(1e-3, 1e-3))
    g = _uniform(sc, 1.0)
    a_bar = bisect_alpha(sc, cfg, g, iters=20)
    from dataclasses import replace
    assert is_stable(sc, replace(cfg, alpha=0.9 * a_bar), replace(g, alpha=0.9 * a_bar))
    assert not is_stable(sc, replace(cfg, alpha=1.2 * a_bar), replace(g, alpha=1.2 * a_bar))


def test_divergence_raises_with_partial_trajectory():
    from hetofo.qp_model import FeedbackProblem, LinearPlant
    from hetofo.scenario import ScenarioTimeline
    prob = FeedbackProblem(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0))
    sc = ScenarioTimeline(prob, LinearPlant(np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((600, 1))))
    cfg = SolverConfig(alpha=5.0)  # x <- -4 x
    with pytest.raises(SolverError) as info:
        run_online(sc, cfg, StepSizeGroups.uniform(1, 0, 5.0), x0=np.ones(1))
    part = info.value.partial
    assert part is not None and part.steps == 19  # 4**20 > 1e12
    np.testing.assert_allclose(part.x[:, 0], (-4.0) ** np.arange(20))
