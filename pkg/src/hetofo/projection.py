"""Euclidean projections onto the convex sets used by the solvers.

Every set is an immutable descriptor with three capabilities:

* ``project(z)``: the exact Euclidean projection ``argmin_{s in S} ||z - s||``;
* ``contains(z, tol)``: membership with an absolute tolerance on every
  defining inequality;
* ``halfspaces(n)``: an ``(H, r)`` description ``{s : H s <= r}`` when the set
  is polyhedral, ``None`` otherwise (used by the oracle's active-set polish).

Intersections are projected with Dykstra's alternating projections.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any

import numpy as np

MEMBERSHIP_TOL = 1e-10
DYKSTRA_MAX_SWEEPS = 10_000
DYKSTRA_TOL = 1e-10
# sweeps between attempts at an exact finish on polyhedral intersections
POLISH_EVERY = 50
SUBSET_SEARCH_MAX = 10


class ProjectionError(RuntimeError):
    """Raised when an iterative projection does not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


def _vec(z) -> np.ndarray:
    return np.asarray(z, dtype=float).reshape(-1)


class ConvexSet:
    """Base class of the set descriptors."""

    def project(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, z: np.ndarray, tol: float = MEMBERSHIP_TOL) -> bool:
        raise NotImplementedError

    def halfspaces(self, n: int) -> tuple[np.ndarray, np.ndarray] | None:
        return None

    def violation(self, z: np.ndarray) -> float:
        """Largest violation of a defining inequality (0 inside the set)."""
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo, up = _vec(self.lower), _vec(self.upper)
        if lo.shape != up.shape:
            raise ValueError("Box bounds must have equal length")
        if np.any(lo > up):
            raise ValueError("Box requires lower <= upper elementwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    def project(self, z):
        return np.clip(_vec(z), self.lower, self.upper)

    def violation(self, z):
        z = _vec(z)
        v = np.maximum(self.lower - z, z - self.upper)
        return float(max(0.0, np.max(v, initial=0.0)))

    def contains(self, z, tol=MEMBERSHIP_TOL):
        return self.violation(z) <= tol

    def halfspaces(self, n):
        eye = np.eye(n)
        rows, rhs = [], []
        for i in range(n):
            if np.isfinite(self.upper[i]):
                rows.append(eye[i])
                rhs.append(self.upper[i])
            if np.isfinite(self.lower[i]):
                rows.append(-eye[i])
                rhs.append(-self.lower[i])
        return np.reshape(rows, (-1, n)), np.asarray(rhs, dtype=float)

    def to_dict(self):
        return {"type": "Box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def __eq__(self, other):
        return (isinstance(other, Box) and np.array_equal(self.lower, other.lower)
                and np.array_equal(self.upper, other.upper))


@dataclass(frozen=True, eq=False)
class Halfspace(ConvexSet):
    """``{s : a's >= beta}`` (sense ``">="``) or ``{s : a's <= beta}``."""

    a: np.ndarray
    beta: float
    sense: str = "<="

    def __post_init__(self):
        a = _vec(self.a)
        if not np.any(a != 0):
            raise ValueError("Halfspace normal must be nonzero")
        if self.sense not in ("<=", ">="):
            raise ValueError(f"unknown halfspace sense {self.sense!r}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "beta", float(self.beta))

    def _le_form(self):
        if self.sense == "<=":
            return self.a, self.beta
        return -self.a, -self.beta

    def project(self, z):
        z = _vec(z)
        a, beta = self._le_form()
        excess = a @ z - beta
        if excess <= 0:
            return z.copy()
        return z - (excess / (a @ a)) * a

    def violation(self, z):
        a, beta = self._le_form()
        return float(max(0.0, a @ _vec(z) - beta))

    def contains(self, z, tol=MEMBERSHIP_TOL):
        return self.violation(z) <= tol

    def halfspaces(self, n):
        a, beta = self._le_form()
        return a.reshape(1, n), np.array([beta])

    def to_dict(self):
        return {"type": "Halfspace", "a": self.a.tolist(), "beta": self.beta, "sense": self.sense}

    def __eq__(self, other):
        return (isinstance(other, Halfspace) and np.array_equal(self.a, other.a)
                and self.beta == other.beta and self.sense == other.sense)


@dataclass(frozen=True, eq=False)
class Ball(ConvexSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("Ball radius must be positive")
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))

    def project(self, z):
        z = _vec(z)
        r = z - self.center
        nrm = np.linalg.norm(r)
        if nrm <= self.radius:
            return z.copy()
        return self.center + r * (self.radius / nrm)

    def violation(self, z):
        return float(max(0.0, np.linalg.norm(_vec(z) - self.center) - self.radius))

    def contains(self, z, tol=MEMBERSHIP_TOL):
        return self.violation(z) <= tol

    def to_dict(self):
        return {"type": "Ball", "center": self.center.tolist(), "radius": self.radius}

    def __eq__(self, other):
        return (isinstance(other, Ball) and np.array_equal(self.center, other.center)
                and self.radius == other.radius)


@dataclass(frozen=True)
class NonnegativeOrthant(ConvexSet):

    def project(self, z):
        return np.maximum(_vec(z), 0.0)

    def violation(self, z):
        return float(max(0.0, -np.min(_vec(z), initial=0.0)))

    def contains(self, z, tol=MEMBERSHIP_TOL):
        return self.violation(z) <= tol

    def halfspaces(self, n):
        return -np.eye(n), np.zeros(n)

    def to_dict(self):
        return {"type": "NonnegativeOrthant"}


@dataclass(frozen=True)
class Unbounded(ConvexSet):

    def project(self, z):
        return _vec(z).copy()

    def violation(self, z):
        return 0.0

    def contains(self, z, tol=MEMBERSHIP_TOL):
        return True

    def halfspaces(self, n):
        return np.zeros((0, n)), np.zeros(0)

    def to_dict(self):
        return {"type": "Unbounded"}


@dataclass(frozen=True)
class Intersection(ConvexSet):
    sets: tuple[ConvexSet, ...] = field(default_factory=tuple)
    max_sweeps: int = DYKSTRA_MAX_SWEEPS
    tol: float = DYKSTRA_TOL

    def __post_init__(self):
        object.__setattr__(self, "sets", tuple(self.sets))

    def project(self, z):
        """Dykstra's alternating projections.

        Raises
        ------
        ProjectionError
            If the sweep cap is reached before the iterate settles inside
            every member set.
        """
        x = _vec(z).copy()
        if not self.sets:
            return x
        if len(self.sets) == 1:
            return self.sets[0].project(x)
        if self.contains(x, 0.0):
            return x
        poly = self.halfspaces(x.size)
        incr = [np.zeros_like(x) for _ in self.sets]
        for sweep in range(1, self.max_sweeps + 1):
            x_prev = x
            moved = 0.0
            for i, s in enumerate(self.sets):
                y = s.project(x + incr[i])
                new = x + incr[i] - y
                moved = max(moved, float(np.linalg.norm(new - incr[i])))
                incr[i] = new
                x = y
            # the iterate can repeat while the corrections still move
            if (np.linalg.norm(x - x_prev) <= self.tol and moved <= self.tol
                    and self.violation(x) <= self.tol):
                return x
            if poly is not None and sweep % POLISH_EVERY == 0:
                exact = _polyhedral_finish(_vec(z), x, *poly, self.tol)
                if exact is not None:
                    return exact
        raise ProjectionError("Dykstra projection did not converge", self.violation(x))

    def violation(self, z):
        return max((s.violation(z) for s in self.sets), default=0.0)

    def contains(self, z, tol=MEMBERSHIP_TOL):
        return all(s.contains(z, tol) for s in self.sets)

    def halfspaces(self, n):
        parts = [s.halfspaces(n) for s in self.sets]
        if any(p is None for p in parts):
            return None
        if not parts:
            return np.zeros((0, n)), np.zeros(0)
        return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])

    def to_dict(self):
        return {"type": "Intersection", "sets": [s.to_dict() for s in self.sets]}


def _polyhedral_finish(z, x, G, h, tol):
    """Exact projection of ``z`` onto ``{v : G v <= h}`` guessed from the iterate ``x``.

    Rows nearly active at ``x`` are taken as the active set and the
    equality-constrained projection is solved directly.  The result is
    returned only if it satisfies the optimality conditions (feasible,
    nonnegative multipliers); otherwise ``None``.
    """
    scale = 1.0 + np.abs(h).max(initial=0.0) + np.abs(z).max(initial=0.0)

    def attempt(act):
        GA, hA = G[list(act)], h[list(act)]
        step = np.linalg.lstsq(GA, GA @ z - hA, rcond=None)[0]
        v = z - step
        mu = np.linalg.lstsq(GA.T, step, rcond=None)[0]
        ok = (np.abs(GA @ v - hA).max() <= tol * scale
              and np.linalg.norm(GA.T @ mu - step)
              <= tol * scale + 1e3 * np.finfo(float).eps * np.linalg.norm(GA) * np.linalg.norm(mu)
              and mu.min() >= -tol and np.all(G @ v - h <= tol * scale))
        return v if ok else None

    for slack in (1e-8, 1e-6, 1e-4):
        act = np.flatnonzero(G @ x - h >= -slack * scale)
        if act.size == 0:
            continue
        v = attempt(act)
        if v is not None:
            return v
        # far from the solution the guess can include spurious rows; the
        # optimality check makes any accepted subset the exact answer
        if act.size <= SUBSET_SEARCH_MAX:
            for r in range(1, min(act.size, z.size) + 1):
                for sub in itertools.combinations(act, r):
                    v = attempt(sub)
                    if v is not None:
                        return v
    return None


@dataclass(frozen=True, eq=False)
class DualBox:
    """The compact dual set, realised as ``[0, lambda_max]`` per coordinate."""

    lambda_max: np.ndarray

    def __post_init__(self):
        lm = _vec(self.lambda_max)
        if np.any(lm <= 0):
            raise ValueError("DualBox bounds must be positive")
        object.__setattr__(self, "lambda_max", lm)

    @classmethod
    def uniform(cls, M: int, bound: float = 1e3) -> "DualBox":
        return cls(np.full(M, float(bound)))

    def as_set(self) -> Box:
        return Box(np.zeros_like(self.lambda_max), self.lambda_max)

    def project(self, lam):
        return np.clip(_vec(lam), 0.0, self.lambda_max)

    def near_bound(self, lam, fraction: float = 0.01) -> np.ndarray:
        """Mask of coordinates within ``fraction`` of the upper bound."""
        return _vec(lam) >= (1.0 - fraction) * self.lambda_max

    def __eq__(self, other):
        return isinstance(other, DualBox) and np.array_equal(self.lambda_max, other.lambda_max)


def project(cset: ConvexSet, z) -> np.ndarray:
    """Euclidean projection of ``z`` onto ``cset``."""
    z = _vec(z)
    if not np.all(np.isfinite(z)):
        raise ValueError("cannot project a non-finite point")
    return cset.project(z)


def membership(cset: ConvexSet, z, tol: float = MEMBERSHIP_TOL) -> bool:
    """True iff ``z`` satisfies every defining inequality of ``cset`` within ``tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return cset.contains(_vec(z), tol)


def set_from_dict(entry: dict[str, Any]) -> ConvexSet:
    kind = entry.get("type")
    if kind == "Box":
        return Box(entry["lower"], entry["upper"])
    if kind == "Halfspace":
        return Halfspace(entry["a"], entry["beta"], entry.get("sense", "<="))
    if kind == "Ball":
        return Ball(entry["center"], entry["radius"])
    if kind == "NonnegativeOrthant":
        return NonnegativeOrthant()
    if kind == "Intersection":
        return Intersection(tuple(set_from_dict(s) for s in entry["sets"]))
    if kind == "Unbounded":
        return Unbounded()
    raise ValueError(f"unknown set type {kind!r}")


def project_blocks(blocks, sets, x) -> np.ndarray:
    """Project each block ``x[start:stop]`` onto its own set."""
    out = np.empty_like(_vec(x))
    for (start, stop), s in zip(blocks, sets):
        out[start:stop] = project(s, x[start:stop])
    return out


def blocks_contain(blocks, sets, x, tol: float = MEMBERSHIP_TOL) -> bool:
    return all(s.contains(x[a:b], tol) for (a, b), s in zip(blocks, sets))
