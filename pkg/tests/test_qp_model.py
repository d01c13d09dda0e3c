import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetofo.projection import Box
from hetofo.qp_model import (DimensionError, FeedbackProblem, LinearPlant, QuadraticProgram,
                             RegularizationParams, evaluate_constraints, evaluate_objective,
                             plant_output, unconstrained_minimizer, validate_problem)

floats = st.floats(-10, 10, allow_nan=False)


def test_objective_at_halfspace_optimum():
    qp = QuadraticProgram(np.eye(2), np.zeros(2))
    assert evaluate_objective(qp, [4, 4]) == 16


def test_objective_at_zero_is_constant():
    qp = QuadraticProgram(np.diag([3.0, 1.0]), np.array([1.0, -2.0]), 2.5)
    assert evaluate_objective(qp, np.zeros(2)) == 2.5


def test_objective_at_suboptimal_point():
    qp = QuadraticProgram(np.eye(2), np.zeros(2))
    assert evaluate_objective(qp, [5, 3]) == 17


def test_constraints_boundary_of_halfspace():
    qp = QuadraticProgram(np.eye(2), np.zeros(2), D=np.array([[-1.0, -1.0]]), d=np.array([8.0]))
    np.testing.assert_allclose(evaluate_constraints(qp, [4, 4]), [0.0])


def test_constraints_zero_rows():
    qp = QuadraticProgram(np.eye(2), np.zeros(2), D=np.zeros((1, 2)), d=np.zeros(1))
    np.testing.assert_array_equal(evaluate_constraints(qp, [3, -7]), [0.0])


def test_constraints_identity_rows():
    qp = QuadraticProgram(np.eye(2), np.zeros(2), D=np.eye(2), d=np.array([-1.0, -1.0]))
    np.testing.assert_array_equal(evaluate_constraints(qp, [2, 0]), [1, -1])


def test_plant_identity():
    plant = LinearPlant(np.eye(2), np.zeros((2, 1)), np.zeros((1, 1)))
    np.testing.assert_array_equal(plant_output(plant, [1, 2], 0), [1, 2])


def test_plant_pure_disturbance():
    plant = LinearPlant(np.zeros((1, 2)), np.eye(1), np.array([[3.0]]))
    np.testing.assert_array_equal(plant_output(plant, [5, 5], 0), [3])


def test_plant_hand_value():
    plant = LinearPlant(np.array([[1.0, 1.0]]), np.array([[1.0]]), np.array([[-1.0]]))
    np.testing.assert_array_equal(plant_output(plant, [2, 3], 0), [4])


def test_plant_rejects_step_outside_horizon():
    plant = LinearPlant(np.eye(1), np.eye(1), np.array([[0.0]]))
    with pytest.raises((IndexError, ValueError)):
        plant_output(plant, [0.0], 5)


def test_dimension_mismatch_is_named():
    with pytest.raises(DimensionError):
        QuadraticProgram(np.eye(2), np.zeros(3))
    qp = QuadraticProgram(np.eye(2), np.zeros(2))
    with pytest.raises(DimensionError):
        evaluate_objective(qp, np.zeros(3))


def test_slater_passes_with_witness():
    qp = QuadraticProgram(np.eye(2), np.zeros(2), D=np.array([[-1.0, -1.0]]), d=np.array([8.0]),
                          input_sets=(Box(np.zeros(2), 10 * np.ones(2)),))
    rep = validate_problem(qp)
    assert rep.entries["slater"] and rep.ok
    w = rep.witnesses["slater"]
    assert evaluate_constraints(qp, w)[0] < 0 and np.all((w >= -1e-8) & (w <= 10 + 1e-8))


def test_indefinite_objective_fails_convexity():
    rep = validate_problem(QuadraticProgram(np.diag([1.0, -1.0]), np.zeros(2)))
    assert not rep.entries["convexity"]


def test_contradictory_halfspaces_fail_slater():
    D = np.array([[1.0, 0.0], [-1.0, 0.0]])
    d = np.array([-1.0, 2.0])  # x1 <= 1 and x1 >= 2
    rep = validate_problem(QuadraticProgram(np.eye(2), np.zeros(2), D=D, d=d))
    assert not rep.entries["slater"]


def test_homogeneous_regularization_needs_both_terms():
    with pytest.raises(ValueError):
        RegularizationParams(1e-3)
    with pytest.raises(ValueError):
        RegularizationParams(0.0, 1e-3)
    RegularizationParams(1e-3, 1e-3)


def test_feedback_problem_composes_output_constraints():
    fp = FeedbackProblem(np.eye(2), np.zeros(2), G=np.array([[1.0]]), g0=np.array([-1.0]))
    plant = LinearPlant(np.array([[1.0, 2.0]]), np.array([[1.0]]), np.array([[0.5]]))
    qp = fp.compose(plant, 0)
    x = np.array([0.3, -0.2])
    np.testing.assert_allclose(evaluate_constraints(qp, x), fp.g(plant_output(plant, x, 0)))


@settings(max_examples=50, deadline=None)
@given(arrays(float, 3, elements=floats), st.integers(0, 10**6))
def test_minimizer_is_global(x, seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(3, 3))
    qp = QuadraticProgram(L @ L.T + np.eye(3), rng.normal(size=3), 1.0)
    assert evaluate_objective(qp, x) >= evaluate_objective(qp, unconstrained_minimizer(qp)) - 1e-9


@settings(max_examples=50, deadline=None)
@given(arrays(float, 3, elements=floats), arrays(float, 3, elements=floats), st.floats(0, 1),
       st.integers(0, 10**6))
def test_constraints_affine(x1, x2, t, seed):
    rng = np.random.default_rng(seed)
    qp = QuadraticProgram(np.eye(3), np.zeros(3), D=rng.normal(size=(2, 3)), d=rng.normal(size=2))
    lhs = evaluate_constraints(qp, t * x1 + (1 - t) * x2)
    rhs = t * evaluate_constraints(qp, x1) + (1 - t) * evaluate_constraints(qp, x2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


@settings(max_examples=50, deadline=None)
@given(arrays(float, 2, elements=floats), arrays(float, 2, elements=floats), st.floats(0, 1))
def test_plant_output_affine(x1, x2, t):
    plant = LinearPlant(np.array([[1.0, -2.0], [0.5, 3.0]]), np.eye(2), np.array([[1.0, -1.0]]))
    lhs = plant_output(plant, t * x1 + (1 - t) * x2, 0)
    rhs = t * plant_output(plant, x1, 0) + (1 - t) * plant_output(plant, x2, 0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-11)
