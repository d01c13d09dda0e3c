import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetofo.projection import (Ball, Box, DualBox, Halfspace, Intersection, NonnegativeOrthant,
                               ProjectionError, membership, project, set_from_dict)

vec2 = arrays(float, 2, elements=st.floats(-20, 20, allow_nan=False))

SETS = {
    "box": Box(np.array([0.0, -1.0]), np.array([1.0, 2.0])),
    "halfspace": Halfspace(np.ones(2), 8.0, ">="),
    "ball": Ball(np.array([1.0, -1.0]), 2.0),
    "orthant": NonnegativeOrthant(),
    "box_cap_halfspace": Intersection((Box(np.zeros(2), np.full(2, 3.0)),
                                       Halfspace(np.array([1.0, 2.0]), 4.0, "<="))),
}


def test_halfspace_projection_of_origin():
    np.testing.assert_allclose(project(Halfspace(np.ones(2), 8.0, ">="), [0, 0]), [4, 4])


@pytest.mark.parametrize("name", list(SETS))
def test_points_inside_are_fixed(name):
    s = SETS[name]
    z = project(s, np.array([0.7, 0.4]))
    np.testing.assert_allclose(project(s, z), z, atol=1e-10)


def test_box_clamps():
    np.testing.assert_array_equal(project(Box(np.zeros(2), np.ones(2)), [2, -1]), [1, 0])


def test_membership_on_boundary():
    assert membership(Halfspace(np.ones(2), 8.0, ">="), [4, 4], tol=0)


def test_membership_outside():
    assert not membership(Halfspace(np.ones(2), 8.0, ">="), [3.9, 4], tol=0)


def test_membership_within_tolerance():
    assert membership(Box(np.zeros(2), np.ones(2)), [1 + 1e-12, 0.5], tol=1e-10)


def test_rejects_invalid_sets():
    with pytest.raises(ValueError):
        Box(np.ones(2), np.zeros(2))
    with pytest.raises(ValueError):
        Ball(np.zeros(2), -1.0)


def test_empty_intersection_reports_residual():
    s = Intersection((Halfspace(np.array([1.0, 0.0]), 0.0, "<="),
                      Halfspace(np.array([1.0, 0.0]), 1.0, ">=")), max_sweeps=200)
    with pytest.raises(ProjectionError) as info:
        project(s, np.array([5.0, 5.0]))
    assert info.value.residual > 0


def test_dual_box_flags_points_near_the_cap():
    box = DualBox(np.array([10.0, 10.0]))
    np.testing.assert_array_equal(box.project([-1.0, 12.0]), [0.0, 10.0])
    np.testing.assert_array_equal(box.near_bound([9.95, 5.0]), [True, False])


@pytest.mark.parametrize("name", list(SETS))
def test_dict_round_trip(name):
    s = SETS[name]
    assert set_from_dict(s.to_dict()) == s


@pytest.mark.parametrize("name", list(SETS))
@settings(max_examples=40, deadline=None)
@given(z1=vec2, z2=vec2)
def test_nonexpansive(name, z1, z2):
    s = SETS[name]
    assert np.linalg.norm(project(s, z1) - project(s, z2)) <= np.linalg.norm(z1 - z2) + 1e-8


@pytest.mark.parametrize("name", list(SETS))
@settings(max_examples=40, deadline=None)
@given(z=vec2, y=vec2)
def test_projection_is_closest_point(name, z, y):
    s = SETS[name]
    member = project(s, y)
    assert np.linalg.norm(z - project(s, z)) <= np.linalg.norm(z - member) + 1e-8


def _brute_force_polygon_projection(z, G, h):
    """Closest point of {v : G v <= h} in 2-D by enumerating faces and vertices."""
    cands = [z]
    for g, hi in zip(G, h):
        cands.append(z - (g @ z - hi) / (g @ g) * g)
    for i in range(len(G)):
        for j in range(i + 1, len(G)):
            B = np.array([G[i], G[j]])
            if np.linalg.cond(B) < 1e12:
                cands.append(np.linalg.solve(B, [h[i], h[j]]))
    feasible = [c for c in cands if np.all(G @ c <= h + 1e-9)]
    if not feasible:
        return None
    return min(feasible, key=lambda c: np.linalg.norm(c - z))


@settings(max_examples=200, deadline=None)
@given(z=vec2, a=arrays(float, 2, elements=st.floats(-3, 3)).filter(lambda a: np.linalg.norm(a) > 0.1),
       beta=st.floats(-2, 4))
def test_intersection_matches_brute_force(z, a, beta):
    s = Intersection((Box(np.zeros(2), np.full(2, 3.0)), Halfspace(a, beta, "<=")))
    G = np.vstack([np.eye(2), -np.eye(2), a])
    h = np.array([3.0, 3.0, 0.0, 0.0, beta])
    expected = _brute_force_polygon_projection(z, G, h)
    if expected is None:
        with pytest.raises(ProjectionError):
            project(s, z)
        return
    np.testing.assert_allclose(project(s, z), expected, atol=1e-6)
