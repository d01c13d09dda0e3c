import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import A_EX2, groups
from hetofo.operators import (SaddleOperatorData, StepSizeGroups, lagrangian, min_regularization,
                              monotonicity_matrix, operator_analysis, saddle_data,
                              saddle_operator, verify_strong_monotonicity)
from hetofo.qp_model import GAMMA_WEIGHTED, QuadraticProgram, RegularizationParams


def unconstrained(A, b=None):
    A = np.asarray(A, float)
    return QuadraticProgram(A, np.zeros(len(A)) if b is None else np.asarray(b, float))


def test_lagrangian_without_regularization_is_plain():
    rng = np.random.default_rng(0)
    qp = QuadraticProgram(np.eye(2), np.array([1.0, -1.0]), 0.5, rng.normal(size=(1, 2)),
                          np.array([-0.3]))
    x, lam = np.array([0.2, 0.7]), np.array([1.5])
    plain = 0.5 * x @ x + qp.b @ x + qp.c + lam @ (qp.D @ x + qp.d)
    assert lagrangian(qp, None, None, x, lam) == pytest.approx(plain, abs=1e-14)
    tiny = RegularizationParams(1e-12, 1e-12)
    assert lagrangian(qp, tiny, None, x, lam) == pytest.approx(plain, abs=1e-10)


def test_lagrangian_hand_value():
    # f = 1/2 |x|^2 = 1 and (p/2)|x|^2 = 2 at x = [1, 1], p = 2
    qp = QuadraticProgram(np.eye(2), np.zeros(2), D=np.zeros((1, 2)), d=np.zeros(1))
    g = groups([1, 1], [1])
    reg = RegularizationParams(2.0, mode=GAMMA_WEIGHTED)
    assert lagrangian(qp, reg, g, [1, 1], [0]) == pytest.approx(3.0)


def test_lagrangian_at_zero_dual_ignores_constraints():
    rng = np.random.default_rng(1)
    x = rng.normal(size=2)
    vals = [lagrangian(QuadraticProgram(np.eye(2), np.zeros(2), D=rng.normal(size=(2, 2)),
                                        d=rng.normal(size=2)),
                       RegularizationParams(0.1, 0.1), None, x, [0, 0]) for _ in range(3)]
    assert np.ptp(vals) == 0


def test_operator_at_zero_is_scaled_offset():
    qp = QuadraticProgram(np.eye(2), np.array([1.0, 2.0]), D=np.array([[1.0, 1.0]]),
                          d=np.array([-3.0]))
    data = saddle_data(qp, None, np.array([2.0, 3.0, 4.0]))
    np.testing.assert_array_equal(saddle_operator(data, np.zeros(3)), [2.0, 6.0, 12.0])


def test_identity_operator():
    data = SaddleOperatorData(np.eye(3), np.zeros(3), np.ones(3), 0.0, 3)
    np.testing.assert_array_equal(saddle_operator(data, [1, 0, 0]), [1, 0, 0])


def test_monotonicity_example_operator_column():
    data = saddle_data(unconstrained(A_EX2), None, np.array([20.0, 1.0]))
    np.testing.assert_array_equal(saddle_operator(data, [1, 0]), [40, -1])


def test_monotonicity_matrix_example():
    np.testing.assert_array_equal(monotonicity_matrix(A_EX2, np.diag([20.0, 1.0])),
                                  [[40, -10.5], [-10.5, 2]])


def test_monotonicity_matrix_identity_scaling_keeps_symmetric_matrix():
    np.testing.assert_array_equal(monotonicity_matrix(A_EX2, np.ones(2)), A_EX2)


def test_monotonicity_matrix_diagonal_case():
    np.testing.assert_array_equal(monotonicity_matrix(np.eye(2), [0.75, 1.25]),
                                  np.diag([0.75, 1.25]))


def test_min_regularization_example():
    p, eta, lam_min = min_regularization(monotonicity_matrix(A_EX2, [20.0, 1.0]))
    assert lam_min == pytest.approx(-0.708, abs=5e-4)
    assert p == pytest.approx(-lam_min + 1e-3)
    assert eta == pytest.approx(1e-3)


def test_min_regularization_identity():
    p, eta, lam_min = min_regularization(np.eye(3), margin=0.01)
    assert (lam_min, p, eta) == (pytest.approx(1.0), 0.01, 0.01)


@pytest.mark.parametrize("delta, definite", [(13, True), (14, False)])
def test_definiteness_flips_between_13_and_14(delta, definite):
    _, _, lam_min = min_regularization(monotonicity_matrix(A_EX2, [delta, 1.0]))
    assert (lam_min > 0) is definite


def test_recommended_regularization_passes_check():
    data = saddle_data(unconstrained(A_EX2), None, np.array([20.0, 1.0]))
    p, eta, _ = min_regularization(monotonicity_matrix(A_EX2, [20.0, 1.0]))
    data = SaddleOperatorData(data.W, data.w, data.Gamma, p, 2)
    assert verify_strong_monotonicity(data, eta, samples=500).passed


def test_unregularized_example_fails_along_eigenvector():
    data = saddle_data(unconstrained(A_EX2), None, np.array([20.0, 1.0]))
    rep = verify_strong_monotonicity(data, 0.0, samples=200)
    assert not rep.passed
    assert rep.extremal_ratio == pytest.approx(-0.708, abs=5e-4)
    z1, z2 = rep.witness
    dz = (z1 - z2) / np.linalg.norm(z1 - z2)
    v = np.linalg.eigh(monotonicity_matrix(A_EX2, [20.0, 1.0]))[1][:, 0]
    assert abs(dz @ v) == pytest.approx(1.0, abs=1e-9)


def test_homogeneous_scaling_psd_passes_with_ratio_at_least_p():
    data = SaddleOperatorData(np.diag([1.0, 0.0]), np.zeros(2), np.ones(2), 0.1, 2)
    rep = verify_strong_monotonicity(data, 0.1, samples=300)
    assert rep.passed and rep.worst_ratio >= 0.1 - 1e-12


def test_analysis_of_psd_objective_recommends_margin_only():
    out = operator_analysis(unconstrained(np.eye(2)), np.ones(2))
    assert out["p"] == 1e-3 and out["positive_definite"]


def test_step_size_groups_validation():
    with pytest.raises(ValueError):
        StepSizeGroups(0.1, np.array([1.0, -1.0]), np.zeros(0))
    with pytest.raises(ValueError):
        StepSizeGroups(-0.1, np.ones(2), np.zeros(0))
    g = StepSizeGroups.uniform(2, 1, 0.1, 2.0, ("x1", "x1", "lambda_a"))
    assert {k: list(v) for k, v in g.groups().items()} == {"x1": [0, 1], "lambda_a": [2]}
    np.testing.assert_array_equal(g.gamma, [2.0, 2.0, 2.0])


def _random_qp(seed):
    rng = np.random.default_rng(seed)
    n, M = rng.integers(1, 6), rng.integers(0, 4)
    L = rng.normal(size=(n, n))
    return QuadraticProgram(L @ L.T, rng.normal(size=n), D=rng.normal(size=(M, n)),
                            d=rng.normal(size=M)), rng


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_operator_is_affine(seed):
    qp, rng = _random_qp(seed)
    N = qp.n + qp.M
    data = saddle_data(qp, RegularizationParams(0.3, mode=GAMMA_WEIGHTED),
                       rng.uniform(0.1, 10, N))
    z1, z2 = rng.normal(size=N), rng.normal(size=N)
    diff = saddle_operator(data, z1) - saddle_operator(data, z2)
    np.testing.assert_allclose(diff, data.matrix @ (z1 - z2), atol=1e-12 * (1 + np.abs(diff).max()))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10))
def test_uniform_scaling_gives_scaled_symmetric_part(seed, gbar):
    qp, _ = _random_qp(seed)
    data = saddle_data(qp, None)
    V = monotonicity_matrix(data.W, np.full(qp.n + qp.M, gbar))
    np.testing.assert_allclose(V, gbar * 0.5 * (data.W + data.W.T), atol=1e-12 * gbar)


@settings(max_examples=60, deadline=None)
@given(arrays(float, (4, 4), elements=st.floats(-10, 10)), st.floats(1e-4, 1))
def test_recommended_shift_dominates_eta(X, margin):
    M = 0.5 * (X + X.T)
    p, eta, _ = min_regularization(M, margin)
    assert np.linalg.eigvalsh(M + p * np.eye(4)).min() >= eta - 1e-9
