"""Shared fixtures: the two small hand examples and random QP builders."""

from __future__ import annotations

import numpy as np
import pytest

from hetofo.operators import StepSizeGroups
from hetofo.projection import Box, Halfspace
from hetofo.qp_model import QuadraticProgram

GAMMA_EX1 = np.array([0.75, 1.25])
A_EX2 = np.array([[2.0, -1.0], [-1.0, 2.0]])


def example1_qp(**kw) -> QuadraticProgram:
    """min 1/2 |x|^2 over {x : x1 + x2 >= 8}."""
    return QuadraticProgram(np.eye(2), np.zeros(2), 0.0,
                            input_sets=(Halfspace(np.ones(2), 8.0, ">="),), **kw)


def groups(gamma_x, gamma_lam=(), alpha=0.1, labels=()):
    return StepSizeGroups(alpha, np.asarray(gamma_x, float), np.asarray(gamma_lam, float), labels)


def random_constrained_qp(rng, n=None, M=None, box=True) -> QuadraticProgram:
    """Strictly convex QP with a box input set and M random affine rows.

    The rows are shifted so that the box centre is strictly feasible.
    """
    n = n or int(rng.integers(2, 6))
    M = int(rng.integers(1, 4)) if M is None else M
    L = rng.normal(size=(n, n))
    A = L @ L.T + 0.5 * np.eye(n)
    b = rng.normal(size=n)
    D = rng.normal(size=(M, n))
    d = -np.abs(rng.normal(size=M)) - 0.1
    sets = (Box(-np.ones(n) * 2, np.ones(n) * 2),) if box else None
    return QuadraticProgram(A, b, 0.0, D, d, input_sets=sets)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
