import numpy as np
import pytest

from hetofo.comparison import (RunMetrics, in_band_mask, iterations_to_band,
                               max_voltage_violation)


def _band(K, lo=0.0, hi=1.0):
    return np.tile([lo, hi], (K, 1))


def test_in_band_tolerance_is_relative_to_width():
    band = _band(3, 0.0, 1.0)
    mask = in_band_mask([1.019, 1.021, -0.019], band)
    np.testing.assert_array_equal(mask, [True, False, True])


def test_iterations_count_from_step_to_persistent_entry():
    y = np.r_[np.full(7, 5.0), np.full(30, 0.5)]
    counts, settled = iterations_to_band(y, _band(37), [2], window=20)
    assert counts == [5] and settled == [True]


def test_transient_crossing_is_not_counted():
    y = np.r_[np.full(3, 0.5), np.full(4, 5.0), np.full(25, 0.5)]
    counts, _ = iterations_to_band(y, _band(32), [0], window=20)
    assert counts == [7]


def test_unsettled_step_is_charged_until_next_step():
    y = np.r_[np.full(50, 5.0), np.full(50, 0.5)]
    counts, settled = iterations_to_band(y, _band(100), [0, 40], window=20)
    assert counts == [40, 10] and settled == [False, True]


def test_unsettled_last_step_is_charged_remaining_horizon():
    counts, settled = iterations_to_band(np.full(60, 5.0), _band(60), [25], window=20)
    assert counts == [35] and settled == [False]


def test_max_voltage_violation():
    v = np.array([[1.0, 1.12], [0.85, 1.0]])
    assert max_voltage_violation(v, 0.9, 1.1) == pytest.approx(0.05)
    assert max_voltage_violation(np.ones((3, 2)), 0.9, 1.1) == 0.0
    assert max_voltage_violation(np.zeros((3, 0)), 0.9, 1.1) == 0.0


def test_run_metrics_row():
    m = RunMetrics([3, 4], [True, True], 0.0, 1.5)
    assert m.total_iterations_to_band == 7
    assert m.as_row()["iterations_to_band_2"] == 4
