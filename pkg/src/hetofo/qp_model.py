"""Problem data: the quadratic program, the linear plant and regularization.

Two views of the same problem live here.  :class:`QuadraticProgram` is the
x-space form ``min 1/2 x'Ax + b'x + c  s.t. Dx + d <= 0, x in X`` that the
operator analysis works with.  :class:`FeedbackProblem` keeps the original
output-space pieces (``phi`` on the inputs, ``f0`` and ``g`` on the plant
output ``y = Cx + Uw``) so that gradients can be formed from measurements;
:meth:`FeedbackProblem.compose` pre-composes it with the plant at a given
step into a :class:`QuadraticProgram`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .projection import ConvexSet, Unbounded, blocks_contain

PSD_TOL = -1e-10

HOMOGENEOUS = "homogeneous"
GAMMA_WEIGHTED = "gamma_weighted"


class DimensionError(ValueError):
    """A vector or matrix does not have the expected size."""

    def __init__(self, name: str, expected, got):
        super().__init__(f"dimension mismatch for {name}: expected {expected}, got {got}")
        self.name = name
        self.expected = expected
        self.got = got


def _check_len(name: str, v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise DimensionError(name, n, v.shape[0])
    return v


def _as_matrix(M, rows: int | None = None, cols: int | None = None, name: str = "matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rows is not None and M.shape[0] != rows:
        raise DimensionError(f"{name} rows", rows, M.shape[0])
    if cols is not None and M.shape[1] != cols:
        raise DimensionError(f"{name} columns", cols, M.shape[1])
    return M


def contiguous_blocks(sizes: Sequence[int]) -> tuple[tuple[int, int], ...]:
    """Turn block sizes into ``(start, stop)`` index ranges."""
    out, start = [], 0
    for s in sizes:
        if s <= 0:
            raise ValueError("block sizes must be positive")
        out.append((start, start + int(s)))
        start += int(s)
    return tuple(out)


def _validate_blocks(blocks, n):
    blocks = tuple((int(a), int(b)) for a, b in blocks)
    pos = 0
    for a, b in blocks:
        if a != pos or b <= a:
            raise ValueError(f"blocks must be contiguous and cover 0..{n}; got {blocks}")
        pos = b
    if pos != n:
        raise ValueError(f"block sizes sum to {pos}, expected n={n}")
    return blocks


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    """``f(x) = 1/2 x'Ax + b'x + c`` subject to ``g(x) = Dx + d <= 0`` and ``x_i in X_i``.

    ``blocks`` defaults to a single block spanning all of x and ``input_sets``
    to one unbounded set per block.  Positive semidefiniteness of ``A`` is not
    enforced here; :func:`validate_problem` reports it.
    """

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0
    D: np.ndarray | None = None
    d: np.ndarray | None = None
    blocks: tuple[tuple[int, int], ...] | None = None
    input_sets: tuple[ConvexSet, ...] | None = None

    def __post_init__(self):
        A = _as_matrix(self.A, name="A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError("A", (n, n), A.shape)
        if not np.allclose(A, A.T, atol=1e-12, rtol=0):
            raise ValueError("A must be symmetric")
        A = 0.5 * (A + A.T)
        b = _check_len("b", self.b, n)
        if self.D is None:
            D = np.zeros((0, n))
        else:
            D = np.asarray(self.D, dtype=float)
            if D.ndim != 2:
                D = D.reshape(-1, n) if D.size else np.zeros((0, n))
            if D.shape[1] != n:
                raise DimensionError("D columns", n, D.shape[1])
        M = D.shape[0]
        d = np.zeros(0) if self.d is None else _check_len("d", self.d, M)
        blocks = ((0, n),) if self.blocks is None else _validate_blocks(self.blocks, n)
        sets = self.input_sets
        if sets is None:
            sets = tuple(Unbounded() for _ in blocks)
        sets = tuple(sets)
        if len(sets) != len(blocks):
            raise DimensionError("input_sets", len(blocks), len(sets))
        for name, val in (("A", A), ("b", b), ("D", D), ("d", d), ("blocks", blocks),
                          ("input_sets", sets)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "c", float(self.c))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.D.shape[0]

    def contains(self, x, tol: float = 1e-10) -> bool:
        return blocks_contain(self.blocks, self.input_sets, x, tol)


@dataclass(frozen=True, eq=False)
class LinearPlant:
    """``y = Cx + U w[k]`` with a bounded measurement error ``e_y``."""

    C: np.ndarray
    U: np.ndarray
    w_traj: np.ndarray
    e_y: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        C = _as_matrix(self.C, name="C")
        U = _as_matrix(self.U, rows=C.shape[0], name="U")
        w = np.asarray(self.w_traj, dtype=float)
        if w.ndim == 1:
            w = w.reshape(-1, U.shape[1])
        if w.shape[0] == 0:
            raise ValueError("w_traj must be nonempty")
        if w.shape[1] != U.shape[1]:
            raise DimensionError("w_traj width", U.shape[1], w.shape[1])
        if self.e_y < 0:
            raise ValueError("e_y must be nonnegative")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "w_traj", w)
        object.__setattr__(self, "e_y", float(self.e_y))

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def horizon(self) -> int:
        return self.w_traj.shape[0]

    def w(self, k: int) -> np.ndarray:
        if not 0 <= k < self.horizon:
            raise IndexError(f"step k={k} outside w_traj of length {self.horizon}")
        return self.w_traj[k]


@dataclass(frozen=True)
class RegularizationParams:
    """Primal/dual regularization weights.

    ``homogeneous``: ``+p/2 ||x||^2 - d/2 ||lam||^2``.
    ``gamma_weighted``: ``+p/2 x' Gx^-1 x - p/2 lam' Gl^-1 lam`` (``d`` unused).
    """

    p: float
    d: float = 0.0
    mode: str = HOMOGENEOUS

    def __post_init__(self):
        if self.mode not in (HOMOGENEOUS, GAMMA_WEIGHTED):
            raise ValueError(f"unknown regularization mode {self.mode!r}")
        if not self.p > 0:
            raise ValueError("p must be positive")
        if self.mode == HOMOGENEOUS and not self.d > 0:
            raise ValueError("d must be positive in homogeneous mode")

    def weights(self, gamma_x: np.ndarray, gamma_lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal curvature added to the primal and dual blocks."""
        if self.mode == HOMOGENEOUS:
            return np.full(len(gamma_x), self.p), np.full(len(gamma_lam), self.d)
        return self.p / np.asarray(gamma_x, float), self.p / np.asarray(gamma_lam, float)


@dataclass(frozen=True, eq=False)
class FeedbackProblem:
    """Output-space problem ``phi(x) + f0(y) s.t. G y + g0 <= 0, x_i in X_i``.

    ``phi(x) = 1/2 x' phi_A x + phi_b' x + phi_c`` and
    ``f0(y) = 1/2 y' f0_Q y + f0_q' y``.
    """

    phi_A: np.ndarray
    phi_b: np.ndarray
    G: np.ndarray
    g0: np.ndarray
    f0_Q: np.ndarray | None = None
    f0_q: np.ndarray | None = None
    phi_c: float = 0.0
    blocks: tuple[tuple[int, int], ...] | None = None
    input_sets: tuple[ConvexSet, ...] | None = None

    def __post_init__(self):
        phi_A = _as_matrix(self.phi_A, name="phi_A")
        n = phi_A.shape[0]
        G = np.asarray(self.G, dtype=float)
        G = G.reshape(-1, G.shape[-1]) if G.size else np.zeros((0, G.shape[-1] if G.ndim == 2 else 0))
        m = G.shape[1]
        f0_Q = np.zeros((m, m)) if self.f0_Q is None else _as_matrix(self.f0_Q, m, m, "f0_Q")
        f0_q = np.zeros(m) if self.f0_q is None else _check_len("f0_q", self.f0_q, m)
        blocks = ((0, n),) if self.blocks is None else _validate_blocks(self.blocks, n)
        sets = tuple(Unbounded() for _ in blocks) if self.input_sets is None else tuple(self.input_sets)
        if len(sets) != len(blocks):
            raise DimensionError("input_sets", len(blocks), len(sets))
        object.__setattr__(self, "phi_A", 0.5 * (phi_A + phi_A.T))
        object.__setattr__(self, "phi_b", _check_len("phi_b", self.phi_b, n))
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g0", _check_len("g0", self.g0, G.shape[0]))
        object.__setattr__(self, "f0_Q", 0.5 * (f0_Q + f0_Q.T))
        object.__setattr__(self, "f0_q", f0_q)
        object.__setattr__(self, "phi_c", float(self.phi_c))
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "input_sets", sets)

    @property
    def n(self) -> int:
        return self.phi_A.shape[0]

    @property
    def M(self) -> int:
        return self.G.shape[0]

    def phi(self, x):
        return 0.5 * x @ self.phi_A @ x + self.phi_b @ x + self.phi_c

    def grad_phi(self, x):
        return self.phi_A @ x + self.phi_b

    def f0(self, y):
        return 0.5 * y @ self.f0_Q @ y + self.f0_q @ y

    def grad_f0(self, y):
        return self.f0_Q @ y + self.f0_q

    def g(self, y):
        return self.G @ y + self.g0

    def compose(self, plant: LinearPlant, k: int) -> QuadraticProgram:
        """Pre-compose with the plant at step ``k`` into x-space QP form."""
        C = plant.C
        if C.shape[1] != self.n:
            raise DimensionError("plant C columns", self.n, C.shape[1])
        if C.shape[0] != self.G.shape[1]:
            raise DimensionError("plant outputs", self.G.shape[1], C.shape[0])
        y0 = plant.U @ plant.w(k)
        A = self.phi_A + C.T @ self.f0_Q @ C
        b = self.phi_b + C.T @ (self.f0_Q @ y0 + self.f0_q)
        c = self.phi_c + self.f0(y0)
        return QuadraticProgram(A, b, c, self.G @ C, self.G @ y0 + self.g0,
                                self.blocks, self.input_sets)

    def with_data(self, phi_b=None, g0=None) -> "FeedbackProblem":
        return FeedbackProblem(
            self.phi_A, self.phi_b if phi_b is None else phi_b, self.G,
            self.g0 if g0 is None else g0, self.f0_Q, self.f0_q, self.phi_c,
            self.blocks, self.input_sets)


def evaluate_objective(qp: QuadraticProgram, x) -> float:
    """``1/2 x'Ax + b'x + c``."""
    x = _check_len("x", x, qp.n)
    return float(0.5 * x @ qp.A @ x + qp.b @ x + qp.c)


def evaluate_constraints(qp: QuadraticProgram, x) -> np.ndarray:
    """``Dx + d``; the point is feasible iff every entry is <= 0."""
    x = _check_len("x", x, qp.n)
    return qp.D @ x + qp.d


def plant_output(plant: LinearPlant, x, k: int) -> np.ndarray:
    """Noise-free output ``Cx + U w[k]``."""
    x = _check_len("x", x, plant.C.shape[1])
    return plant.C @ x + plant.U @ plant.w(k)


@dataclass
class ValidationReport:
    entries: dict[str, bool] = field(default_factory=dict)
    witnesses: dict[str, object] = field(default_factory=dict)
    messages: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.entries.values())

    def add(self, name, passed, witness=None, message=""):
        self.entries[name] = bool(passed)
        self.witnesses[name] = witness
        self.messages[name] = message

    def __str__(self):
        lines = []
        for name, passed in self.entries.items():
            lines.append(f"{name:<12} {'PASS' if passed else 'FAIL'}  {self.messages[name]}")
        return "\n".join(lines)


def _slater_witness(qp: QuadraticProgram):
    """Minimise ``t`` s.t. ``g_j(x) <= t`` and ``x in X`` (polyhedral pieces exactly).

    Returns ``(t, x)``.  Strict feasibility holds iff ``t < 0`` and ``x`` lies
    in ``X``.  Non-polyhedral input sets are handled with a convex solver.
    """
    import cvxpy as cp

    n = qp.n
    x = cp.Variable(n)
    t = cp.Variable()
    cons = []
    for (a, b), s in zip(qp.blocks, qp.input_sets):
        cons += set_constraints(s, x[a:b])
    if qp.M:
        cons.append(qp.D @ x + qp.d <= t)
        # bound t below so the LP stays bounded when D has a null direction
        cons.append(t >= -1.0)
        prob = cp.Problem(cp.Minimize(t), cons)
    else:
        prob = cp.Problem(cp.Minimize(0), cons)
    try:
        prob.solve()
    except cp.error.SolverError:
        return np.inf, None
    if prob.status not in ("optimal", "optimal_inaccurate") or x.value is None:
        return np.inf, None
    tval = float(t.value) if qp.M else -1.0
    return tval, np.asarray(x.value)


def set_constraints(s: ConvexSet, xv):
    """cvxpy constraints describing ``xv in s``."""
    import cvxpy as cp

    from .projection import Ball, Box, Halfspace, Intersection, NonnegativeOrthant

    if isinstance(s, Box):
        cons = []
        fin_lo = np.isfinite(s.lower)
        fin_up = np.isfinite(s.upper)
        if fin_lo.any():
            cons.append(xv[np.flatnonzero(fin_lo)] >= s.lower[fin_lo])
        if fin_up.any():
            cons.append(xv[np.flatnonzero(fin_up)] <= s.upper[fin_up])
        return cons
    if isinstance(s, Halfspace):
        return [s.a @ xv <= s.beta] if s.sense == "<=" else [s.a @ xv >= s.beta]
    if isinstance(s, Ball):
        return [cp.norm(xv - s.center, 2) <= s.radius]
    if isinstance(s, NonnegativeOrthant):
        return [xv >= 0]
    if isinstance(s, Intersection):
        return [c for member in s.sets for c in set_constraints(member, xv)]
    return []


def validate_problem(qp: QuadraticProgram, plant: LinearPlant | None = None) -> ValidationReport:
    """Check the standing assumptions: convexity, Slater, plant consistency."""
    rep = ValidationReport()
    lam_min = float(np.linalg.eigvalsh(0.5 * (qp.A + qp.A.T)).min())
    rep.add("convexity", lam_min >= PSD_TOL, lam_min, f"min eig(A) = {lam_min:.3e}")

    t, x = _slater_witness(qp)
    strict = x is not None and t < -1e-9 and qp.contains(x, 1e-8)
    if x is None:
        msg = "no point of X satisfies the constraints"
    else:
        msg = f"max_j g_j = {t:.3e} at witness"
    rep.add("slater", strict, x, msg)

    if plant is not None:
        ok = plant.C.shape[1] == qp.n and plant.e_y >= 0 and plant.horizon >= 1
        rep.add("plant", ok, None, f"C is {plant.C.shape}, horizon {plant.horizon}")
    return rep


def unconstrained_minimizer(qp: QuadraticProgram) -> np.ndarray:
    """``-A^+ b`` (least-squares solution when A is singular)."""
    return np.linalg.lstsq(qp.A, -qp.b, rcond=None)[0]
