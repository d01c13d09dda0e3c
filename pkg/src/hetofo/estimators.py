"""Gradient proxies built from plant measurements.

Three proxies for the regularized Lagrangian gradient are provided:

* :func:`feedback_gradient` uses the (estimated) Jacobian ``C`` and one
  measurement of the output;
* :func:`zero_order_lagrangian_gradient` uses two measurements at
  ``x +/- eps * xi`` along an exploration direction;
* :func:`exploration_gamma` computes the period average of ``xi xi'``, the
  effective heterogeneous step matrix of the averaged zero-order iteration.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .qp_model import FeedbackProblem, LinearPlant, RegularizationParams, plant_output

SINUSOID_BANK = "sinusoid_bank"
CONSTANT_BASIS = "constant_basis"
RANDOM_UNIT = "random_unit"


@dataclass(frozen=True, eq=False)
class ExplorationSignal:
    """Exploration signal ``xi(t)``.

    ``sinusoid_bank``: ``xi_i(t) = a_i sin(2 pi t / P_i + phase_i)``.
    ``constant_basis``: ``xi(t) = amplitudes``.
    ``random_unit``: a fresh random unit direction per integer time, scaled
    coordinate-wise by ``amplitudes``.

    ``dt`` converts the iteration counter into signal time for the discrete
    samples returned by :meth:`sample`.
    """

    kind: str
    amplitudes: np.ndarray
    periods: np.ndarray | None = None
    phase: np.ndarray | None = None
    seed: int = 0
    dt: float = 1.0

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=float).reshape(-1)
        if self.kind not in (SINUSOID_BANK, CONSTANT_BASIS, RANDOM_UNIT):
            raise ValueError(f"unknown exploration kind {self.kind!r}")
        if self.kind != CONSTANT_BASIS and np.any(amp <= 0):
            raise ValueError("amplitudes must be positive")
        object.__setattr__(self, "amplitudes", amp)
        n = len(amp)
        if self.kind == SINUSOID_BANK:
            periods = np.asarray(self.periods, dtype=float).reshape(-1)
            if periods.shape != (n,) or np.any(periods <= 0):
                raise ValueError("sinusoid_bank needs one positive period per coordinate")
            if len(np.unique(periods)) != n:
                raise ValueError("sinusoid periods must be pairwise distinct")
            object.__setattr__(self, "periods", periods)
        phase = np.zeros(n) if self.phase is None else np.asarray(self.phase, float).reshape(-1)
        object.__setattr__(self, "phase", phase)

    @property
    def n(self) -> int:
        return len(self.amplitudes)

    def at(self, t) -> np.ndarray:
        """Signal value(s); ``t`` scalar gives shape ``(n,)``, array gives ``(len(t), n)``."""
        t_arr = np.asarray(t, dtype=float)
        tt = np.atleast_1d(t_arr)
        if self.kind == SINUSOID_BANK:
            out = self.amplitudes * np.sin(2 * np.pi * tt[:, None] / self.periods + self.phase)
        elif self.kind == CONSTANT_BASIS:
            out = np.broadcast_to(self.amplitudes, (len(tt), self.n)).copy()
        else:
            out = np.stack([self._random_direction(int(math.floor(s))) for s in tt])
        return out[0] if t_arr.ndim == 0 else out

    def _random_direction(self, i: int) -> np.ndarray:
        v = np.random.default_rng([self.seed, i & 0x7FFFFFFF]).normal(size=self.n)
        return self.amplitudes * v / np.linalg.norm(v)

    def sample(self, k: int) -> np.ndarray:
        """Discrete exploration direction used at iteration ``k``."""
        return self.at(k * self.dt)


@dataclass(frozen=True, eq=False)
class MeasurementChannel:
    """Noisy access to a plant's output.

    Noise is uniform on ``[-e_y, e_y]`` per component and is a pure function
    of ``(seed, k, draw)``, so repeated calls with the same arguments return
    identical measurements.
    """

    plant: LinearPlant
    noise_kind: str = "none"
    e_y: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_kind not in ("none", "uniform_bounded"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.e_y < 0:
            raise ValueError("e_y must be nonnegative")

    @classmethod
    def from_plant(cls, plant: LinearPlant, e_y: float | None = None, seed: int | None = None):
        e = plant.e_y if e_y is None else e_y
        return cls(plant, "uniform_bounded" if e > 0 else "none", e,
                   plant.noise_seed if seed is None else seed)

    def noise(self, k: int, draw: int = 0) -> np.ndarray:
        m = self.plant.m
        if self.noise_kind == "none" or self.e_y == 0:
            return np.zeros(m)
        rng = np.random.default_rng([self.seed, k, draw])
        return self.e_y * rng.uniform(-1.0, 1.0, size=m)


def measure(channel: MeasurementChannel, x, k: int, draw: int = 0) -> np.ndarray:
    """Measured output ``Cx + U w[k] + noise``."""
    return plant_output(channel.plant, x, k) + channel.noise(k, draw)


def _reg_weights(reg, gammas, n, M):
    if reg is None:
        return np.zeros(n), np.zeros(M)
    gx = np.ones(n) if gammas is None else gammas.gamma_x
    gl = np.ones(M) if gammas is None else gammas.gamma_lambda
    return reg.weights(gx, gl)


def feedback_gradient(problem: FeedbackProblem, reg: RegularizationParams | None, gammas,
                      channel: MeasurementChannel, x, lam, k: int,
                      jacobian: np.ndarray | None = None, draw: int = 0):
    """Jacobian-feedback proxies of ``grad_x L`` and ``grad_lam L``.

    ``jacobian`` replaces the plant's ``C`` when an estimate is used.

    Returns
    -------
    primal, dual, y_hat
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    C = channel.plant.C if jacobian is None else np.asarray(jacobian, float)
    y_hat = measure(channel, x, k, draw)
    rx, rl = _reg_weights(reg, gammas, problem.n, problem.M)
    primal = (problem.grad_phi(x) + C.T @ problem.grad_f0(y_hat)
              + C.T @ (problem.G.T @ lam) + rx * x)
    dual = problem.g(y_hat) - rl * lam
    return primal, dual, y_hat


def two_point_estimate(objective_probe: Callable[[np.ndarray, int], float], x, xi,
                       eps: float, k: int = 0) -> np.ndarray:
    """``xi / (2 eps) * [F(x + eps xi) - F(x - eps xi)]``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise ValueError("exploration direction must be finite")
    diff = objective_probe(x + eps * xi, k) - objective_probe(x - eps * xi, k)
    return xi * (diff / (2.0 * eps))


def zero_order_lagrangian_gradient(problem: FeedbackProblem, reg: RegularizationParams | None,
                                   gammas, channel: MeasurementChannel, x, lam, xi,
                                   eps: float, k: int):
    """Two-point proxy of ``grad_x L`` from measurements at ``x +/- eps xi``.

    Returns
    -------
    primal : ndarray
        ``grad phi(x) + reg + xi/(2eps) [f0(y+) - f0(y-)] + xi/(2eps) lam'[g(y+) - g(y-)]``.
    y_plus, y_minus : ndarray
        The two probe measurements (draws 1 and 2 of step ``k``).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    xi = np.asarray(xi, dtype=float)
    y_plus = measure(channel, x + eps * xi, k, draw=1)
    y_minus = measure(channel, x - eps * xi, k, draw=2)
    rx, _ = _reg_weights(reg, gammas, problem.n, problem.M)
    scale = xi / (2.0 * eps)
    primal = (problem.grad_phi(x) + rx * x
              + scale * (problem.f0(y_plus) - problem.f0(y_minus))
              + scale * (lam @ (problem.g(y_plus) - problem.g(y_minus))))
    return primal, y_plus, y_minus


def _common_multiple(T: float, periods: np.ndarray, rtol: float = 1e-9) -> bool:
    ratios = T / periods
    return bool(np.all(np.abs(ratios - np.round(ratios)) <= rtol * np.maximum(1.0, ratios)))


def exploration_gamma(signal: ExplorationSignal, T: float, k: int = 0,
                      quadrature_steps: int | None = None) -> np.ndarray:
    """Composite-trapezoid approximation of ``int_{kT}^{(k+1)T} xi xi' dt``.

    The default resolution is 1000 steps per shortest sinusoid period (1000
    steps over the window for the other signal kinds).  A ``RuntimeWarning``
    is issued when ``T`` is not a common multiple of the sinusoid periods.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    if quadrature_steps is None:
        if signal.kind == SINUSOID_BANK:
            quadrature_steps = int(math.ceil(1000 * T / signal.periods.min()))
        else:
            quadrature_steps = 1000
    if signal.kind == SINUSOID_BANK and not _common_multiple(T, signal.periods):
        warnings.warn(f"averaging period T={T} is not a common multiple of the "
                      f"exploration periods; the average need not be diagonal",
                      RuntimeWarning, stacklevel=2)
    t = np.linspace(k * T, (k + 1) * T, quadrature_steps + 1)
    xi = signal.at(t)
    w = np.full(len(t), T / quadrature_steps)
    w[0] *= 0.5
    w[-1] *= 0.5
    G = (xi * w[:, None]).T @ xi
    return 0.5 * (G + G.T)


def common_period(periods) -> float:
    """Least common multiple of rational periods (e.g. ``[1, 0.5, 0.25]`` -> 1)."""
    fracs = [Fraction(p).limit_denominator(10_000) for p in periods]
    num = 1
    den = 0
    for f in fracs:
        num = num * f.numerator // math.gcd(num, f.numerator)
    for f in fracs:
        den = math.gcd(den, f.denominator)
    return num / den
