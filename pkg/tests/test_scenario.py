import numpy as np
import pytest
import yaml

from hetofo.projection import Box
from hetofo.qp_model import FeedbackProblem, LinearPlant, RegularizationParams, validate_problem
from hetofo.scenario import (NetworkParams, ScenarioError, ScenarioTimeline, band_trace,
                             default_vpp_step_scenario, drift_metrics, load_scenario,
                             save_scenario, synth_network, vpp_step_scenario)

REG = RegularizationParams(0.05, 0.05)


def _plateaus(band):
    changes = np.flatnonzero(np.any(np.diff(band, axis=0) != 0, axis=1)) + 1
    edges = np.r_[0, changes, len(band)]
    return np.diff(edges)


def test_two_der_one_bus_network_shape():
    sc = synth_network(NetworkParams(n_ders=2, m_voltage_buses=1, horizon=5))
    qp = sc.qp_at(0)
    assert len(qp.blocks) == 2 and qp.n == 4  # (P, Q) per DER
    assert qp.M == 4
    assert sc.labels == ("vpp", "vpp", "volt", "volt")


def test_network_without_ders_has_constant_constraints():
    sc = synth_network(NetworkParams(n_ders=0, m_voltage_buses=2, horizon=4,
                                     load_drift_amplitude=0.3))
    assert sc.n == 0
    vals = [sc.qp_at(k).d for k in range(4)]
    # only the exogenous loads move the constraint values
    assert not np.allclose(vals[0], vals[1])
    expected = [sc.problem_at(k).g(sc.plant.U @ sc.plant.w(k)) for k in range(4)]
    np.testing.assert_allclose(vals, expected)


def test_generation_is_deterministic():
    a = synth_network(NetworkParams(seed=5, horizon=10))
    b = synth_network(NetworkParams(seed=5, horizon=10))
    assert a == b
    assert not a == synth_network(NetworkParams(seed=6, horizon=10))


def test_two_steps_give_three_plateaus():
    sc = default_vpp_step_scenario(0)
    assert len(_plateaus(band_trace(sc))) == 3


def test_no_steps_give_constant_band():
    sc = vpp_step_scenario(NetworkParams(horizon=50), [], [])
    assert len(_plateaus(band_trace(sc))) == 1


def test_plateau_lengths():
    sc = vpp_step_scenario(NetworkParams(horizon=300), [100, 200], [1.0, 2.0])
    np.testing.assert_array_equal(_plateaus(band_trace(sc)), [100, 100, 100])


def test_step_times_validation():
    with pytest.raises(ValueError):
        vpp_step_scenario(NetworkParams(horizon=300), [200, 100], [1.0, 2.0])
    with pytest.raises(ValueError):
        vpp_step_scenario(NetworkParams(horizon=300), [300], [1.0])


def test_minimal_config_applies_defaults(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(yaml.safe_dump({"problem": {"phi_A": [[1.0]], "phi_b": [0.0]},
                                    "plant": {"C": [[1.0]], "U": [[0.0]], "w_traj": [[0.0]]}}))
    sc = load_scenario(path)
    assert sc.M == 0 and sc.horizon == 1 and sc.plant.e_y == 0 and sc.problem.phi_c == 0


def test_missing_matrix_is_named(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("problem:\n  phi_b: [0.0]\nplant:\n  C: [[1.0]]\n  U: [[0.0]]\n  w_traj: [[0.0]]\n")
    with pytest.raises(ScenarioError) as info:
        load_scenario(path)
    assert info.value.field == "problem.phi_A" and info.value.line == 2


def test_round_trip(tmp_path):
    sc = default_vpp_step_scenario(3, horizon=30)
    save_scenario(sc, tmp_path / "s.yaml")
    assert load_scenario(tmp_path / "s.yaml") == sc


def _drift_timeline(w):
    prob = FeedbackProblem(np.diag([1.0, 2.0]), np.array([-2.0, -2.0]), np.array([[1.0]]),
                           np.array([-1.0]), input_sets=(Box(-2 * np.ones(2), 2 * np.ones(2)),))
    plant = LinearPlant(np.array([[1.0, 1.0]]), np.array([[1.0]]), np.reshape(w, (-1, 1)))
    return ScenarioTimeline(prob, plant)


def test_static_timeline_has_zero_drift():
    assert drift_metrics(_drift_timeline(np.zeros(10)), REG) == (0.0, 0.0)


def test_constraint_step_drift_equals_jump():
    prob = FeedbackProblem(np.eye(2), np.zeros(2), np.array([[1.0]]), np.array([-1.0]))
    plant = LinearPlant(np.array([[1.0, 1.0]]), np.zeros((1, 1)), np.zeros((10, 1)))
    g0 = np.r_[np.full(5, -1.0), np.full(5, -0.4)].reshape(-1, 1)
    _, e_f = drift_metrics(ScenarioTimeline(prob, plant, None, g0), REG)
    assert e_f == pytest.approx(0.6)


def test_drift_linear_in_amplitude():
    t = np.arange(60)
    s1, _ = drift_metrics(_drift_timeline(0.1 * np.sin(t / 5)), REG)
    s2, _ = drift_metrics(_drift_timeline(0.2 * np.sin(t / 5)), REG)
    assert s2 / s1 == pytest.approx(2.0, rel=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_generated_networks_are_valid(seed):
    sc = default_vpp_step_scenario(seed, horizon=20)
    for k in (0, 10):
        assert validate_problem(sc.qp_at(k), sc.plant).ok


def test_groups_follow_tags():
    sc = synth_network(NetworkParams(n_ders=3, m_voltage_buses=2, horizon=2))
    labels = sc.group_labels()
    assert set(labels) == {"x1", "x2", "x3", "lambda_vpp", "lambda_volt"}
    tags = [lab for lab in labels if lab.startswith("lambda_")]
    assert len(tags) == sc.M
    rows = np.concatenate([sc.rows("vpp"), sc.rows("volt")])
    assert sorted(rows) == list(range(sc.M))


def test_vpp_rows_aggregate_active_power():
    sc = synth_network(NetworkParams(n_ders=4, m_voltage_buses=2, horizon=2))
    C = sc.plant.C[sc.metadata["vpp_output_rows"]]
    np.testing.assert_array_equal(C[:, 0::2].sum(axis=0), np.ones(4))
    np.testing.assert_array_equal(C[:, 1::2], 0)
