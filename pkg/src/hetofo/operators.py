"""Regularized Lagrangians and the heterogeneous primal-dual operator.

The stacked variable is ``z = (x, lam)``.  For a QP the scaled saddle
operator is affine,

    Phi(z) = Gamma [grad_x L_p ; -grad_lam L_p] = (Gamma W + p I) z + Gamma w,

with ``W = [[A, D'], [-D, 0]]`` and ``w = [b; -d]``.  Its strong monotonicity
is governed by the smallest eigenvalue of the symmetric part
``V = 1/2 (Gamma W + W' Gamma)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .qp_model import (GAMMA_WEIGHTED, HOMOGENEOUS, DimensionError, QuadraticProgram,
                       RegularizationParams)

DEFAULT_MARGIN = 1e-3


@dataclass(frozen=True, eq=False)
class StepSizeGroups:
    """Global scaling ``alpha`` and per-coordinate step sizes for ``x`` and ``lam``.

    ``labels`` assigns every coordinate of ``z = (x, lam)`` to an adaptive
    group (e.g. ``"x1"``, ``"lambda_volt"``).
    """

    alpha: float
    gamma_x: np.ndarray
    gamma_lambda: np.ndarray
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        gx = np.asarray(self.gamma_x, dtype=float).reshape(-1)
        gl = np.asarray(self.gamma_lambda, dtype=float).reshape(-1)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if np.any(gx <= 0) or np.any(gl <= 0):
            raise ValueError("step sizes must be positive")
        labels = tuple(self.labels) or tuple(["x"] * len(gx) + ["lambda"] * len(gl))
        if len(labels) != len(gx) + len(gl):
            raise DimensionError("labels", len(gx) + len(gl), len(labels))
        object.__setattr__(self, "gamma_x", gx)
        object.__setattr__(self, "gamma_lambda", gl)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def uniform(cls, n: int, M: int, alpha: float = 1.0, gamma: float = 1.0,
                labels: Sequence[str] = ()) -> "StepSizeGroups":
        return cls(alpha, np.full(n, gamma), np.full(M, gamma), tuple(labels))

    @property
    def n(self) -> int:
        return len(self.gamma_x)

    @property
    def M(self) -> int:
        return len(self.gamma_lambda)

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([self.gamma_x, self.gamma_lambda])

    def groups(self) -> dict[str, np.ndarray]:
        """Group name -> coordinate indices into ``z``, in first-seen order."""
        out: dict[str, list[int]] = {}
        for i, lab in enumerate(self.labels):
            out.setdefault(lab, []).append(i)
        return {k: np.asarray(v) for k, v in out.items()}

    def with_gamma(self, gamma: np.ndarray) -> "StepSizeGroups":
        gamma = np.asarray(gamma, dtype=float)
        return replace(self, gamma_x=gamma[:self.n].copy(), gamma_lambda=gamma[self.n:].copy())

    def __eq__(self, other):
        return (isinstance(other, StepSizeGroups) and self.alpha == other.alpha
                and np.array_equal(self.gamma, other.gamma) and self.labels == other.labels)


@dataclass(frozen=True, eq=False)
class SaddleOperatorData:
    """Data of ``Phi(z) = (Gamma (W + diag(extra)) + p I) z + Gamma w``.

    ``extra`` carries the homogeneous ``(p, d)`` regularization curvature so
    that ``W`` itself keeps the ``[[A, D'], [-D, 0]]`` pattern; it is zero in
    the gamma-weighted form, where the regularization shows up as ``p I``.
    """

    W: np.ndarray
    w: np.ndarray
    Gamma: np.ndarray
    p: float = 0.0
    n: int = 0
    extra: np.ndarray | None = None

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        N = W.shape[0]
        G = np.asarray(self.Gamma, dtype=float)
        if G.ndim == 2:
            G = np.diag(G)
        if G.shape != (N,) or np.any(G <= 0):
            raise ValueError("Gamma must be a positive vector matching W")
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if w.shape != (N,):
            raise DimensionError("w", N, w.shape[0])
        extra = np.zeros(N) if self.extra is None else np.asarray(self.extra, float)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "Gamma", G)
        object.__setattr__(self, "extra", extra)
        object.__setattr__(self, "p", float(self.p))

    @property
    def matrix(self) -> np.ndarray:
        """The linear part ``Gamma (W + diag(extra)) + p I``."""
        N = self.W.shape[0]
        return self.Gamma[:, None] * (self.W + np.diag(self.extra)) + self.p * np.eye(N)

    @property
    def offset(self) -> np.ndarray:
        return self.Gamma * self.w


def kkt_matrices(qp: QuadraticProgram) -> tuple[np.ndarray, np.ndarray]:
    """``W = [[A, D'], [-D, 0]]`` and ``w = [b; -d]``."""
    n, M = qp.n, qp.M
    W = np.zeros((n + M, n + M))
    W[:n, :n] = qp.A
    W[:n, n:] = qp.D.T
    W[n:, :n] = -qp.D
    return W, np.concatenate([qp.b, -qp.d])


def saddle_data(qp: QuadraticProgram, reg: RegularizationParams | None,
                gammas: StepSizeGroups | np.ndarray | None = None) -> SaddleOperatorData:
    """Assemble the scaled operator data of a QP for a step-size choice."""
    W, w = kkt_matrices(qp)
    if gammas is None:
        Gamma = np.ones(qp.n + qp.M)
    elif isinstance(gammas, StepSizeGroups):
        Gamma = gammas.gamma
    else:
        Gamma = np.asarray(gammas, dtype=float)
    if reg is None:
        return SaddleOperatorData(W, w, Gamma, 0.0, qp.n)
    if reg.mode == GAMMA_WEIGHTED:
        return SaddleOperatorData(W, w, Gamma, reg.p, qp.n)
    extra = np.concatenate([np.full(qp.n, reg.p), np.full(qp.M, reg.d)])
    return SaddleOperatorData(W, w, Gamma, 0.0, qp.n, extra)


def lagrangian(qp: QuadraticProgram, reg: RegularizationParams | None,
               gammas: StepSizeGroups | None, x, lam) -> float:
    """Regularized Lagrangian ``f(x) + lam'g(x) + reg(x) - reg(lam)``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if np.any(lam < 0):
        raise ValueError("dual variables must be nonnegative")
    val = 0.5 * x @ qp.A @ x + qp.b @ x + qp.c + lam @ (qp.D @ x + qp.d)
    if reg is None:
        return float(val)
    if reg.mode == HOMOGENEOUS:
        return float(val + 0.5 * reg.p * x @ x - 0.5 * reg.d * lam @ lam)
    gx = np.ones(qp.n) if gammas is None else gammas.gamma_x
    gl = np.ones(qp.M) if gammas is None else gammas.gamma_lambda
    return float(val + 0.5 * reg.p * x @ (x / gx) - 0.5 * reg.p * lam @ (lam / gl))


def saddle_operator(data: SaddleOperatorData, z) -> np.ndarray:
    """Evaluate ``(Gamma W + p I) z + Gamma w`` (plus homogeneous curvature)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != data.W.shape[0]:
        raise DimensionError("z", data.W.shape[0], z.shape[0])
    return data.Gamma * (data.W @ z + data.extra * z + data.w) + data.p * z


def monotonicity_matrix(X, Gamma) -> np.ndarray:
    """Symmetric part ``1/2 (Gamma X + X' Gamma)`` for a positive diagonal ``Gamma``."""
    X = np.asarray(X, dtype=float)
    g = np.asarray(Gamma, dtype=float)
    if g.ndim == 2:
        g = np.diag(g)
    if np.any(g <= 0):
        raise ValueError("Gamma must be positive")
    GX = g[:, None] * X
    return 0.5 * (GX + GX.T)


def min_regularization(Msym, margin: float = DEFAULT_MARGIN) -> tuple[float, float, float]:
    """Smallest regularization that makes the scaled operator strongly monotone.

    Returns
    -------
    p : float
        ``max(0, -lambda_min) + margin``.
    eta : float
        Strong monotonicity modulus ``p + min(0, lambda_min)``.
    lambda_min : float
        Smallest eigenvalue of the (re-symmetrized) input.
    """
    if not margin > 0:
        raise ValueError("margin must be positive")
    Msym = np.asarray(Msym, dtype=float)
    lam_min = float(np.linalg.eigvalsh(0.5 * (Msym + Msym.T))[0]) if Msym.size else 0.0
    p = max(0.0, -lam_min) + margin
    eta = p + min(0.0, lam_min)
    return p, eta, lam_min


@dataclass
class MonotonicityReport:
    passed: bool
    worst_ratio: float
    eta: float
    samples: int
    violations: int
    witness: tuple[np.ndarray, np.ndarray] | None = None
    extremal_ratio: float | None = None

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: worst ratio {self.worst_ratio:.6g} vs eta {self.eta:.6g} "
                f"({self.violations}/{self.samples} violations)")


def verify_strong_monotonicity(data: SaddleOperatorData, eta: float, samples: int = 1000,
                               seed: int = 0, scale: float = 1.0,
                               include_extremal: bool = True) -> MonotonicityReport:
    """Check ``(Phi(z1) - Phi(z2))'(z1 - z2) >= eta ||z1 - z2||^2`` on sampled pairs.

    Pairs are drawn from a seeded normal distribution.  With
    ``include_extremal`` one extra pair is placed along the eigenvector of
    the smallest eigenvalue of the operator's symmetric part, which is where
    a violation shows up first.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    N = data.W.shape[0]
    pairs = [(rng.normal(scale=scale, size=N), rng.normal(scale=scale, size=N))
             for _ in range(samples)]
    extremal = None
    if include_extremal and N:
        K = data.matrix
        vals, vecs = np.linalg.eigh(0.5 * (K + K.T))
        v = vecs[:, 0]
        z2 = rng.normal(scale=scale, size=N)
        pairs.append((z2 + scale * v, z2))
        extremal = len(pairs) - 1

    worst, witness, bad, ext_ratio = np.inf, None, 0, None
    for i, (z1, z2) in enumerate(pairs):
        dz = z1 - z2
        nn = dz @ dz
        if nn == 0:
            continue
        lhs = (saddle_operator(data, z1) - saddle_operator(data, z2)) @ dz
        ratio = lhs / nn
        if i == extremal:
            ext_ratio = ratio
        if lhs < eta * nn - 1e-9 * nn:
            bad += 1
        if ratio < worst:
            worst, witness = ratio, (z1, z2)
    return MonotonicityReport(bad == 0, float(worst), float(eta), len(pairs), bad, witness,
                              None if ext_ratio is None else float(ext_ratio))


def operator_analysis(qp: QuadraticProgram, gammas: StepSizeGroups | np.ndarray,
                      margin: float = DEFAULT_MARGIN) -> Mapping[str, object]:
    """``W``, ``V``, ``lambda_min(V)``, recommended ``p`` and ``eta`` for a QP."""
    W, w = kkt_matrices(qp)
    Gamma = gammas.gamma if isinstance(gammas, StepSizeGroups) else np.asarray(gammas, float)
    V = monotonicity_matrix(W, Gamma)
    p, eta, lam_min = min_regularization(V, margin)
    return {"W": W, "w": w, "V": V, "lambda_min": lam_min, "p": p, "eta": eta,
            "positive_definite": lam_min > 0}
