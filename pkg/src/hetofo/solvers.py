"""Heterogeneous projected-gradient and projected primal-dual iterations.

The primal update is block-distributed: block ``i`` of ``x`` moves along its
own gradient proxy, scaled by its own step sizes, and is projected onto its
own set.  The dual update is a projected ascent step on the dual box.

With the switching rule enabled a block's step-size matrix is replaced by the
identity whenever the tentative heterogeneous step would leave the block's
set.  This keeps the fixed points of the iteration equal to the saddle points
of the regularized Lagrangian.  Dual coordinates are switched one at a time
(the dual box is a product of intervals).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .adaptive import AdaptiveConfig, adapt_all
from .estimators import (ExplorationSignal, MeasurementChannel, feedback_gradient,
                         zero_order_lagrangian_gradient)
from .operators import StepSizeGroups
from .projection import MEMBERSHIP_TOL, ConvexSet, DualBox, project
from .qp_model import FeedbackProblem, QuadraticProgram, RegularizationParams

EXACT = "exact"
JACOBIAN_FEEDBACK = "jacobian_feedback"
ZERO_ORDER = "zero_order"
# Iterates larger than this are reported as divergent before they overflow.
DIVERGENCE_NORM = 1e12


class SolverError(RuntimeError):
    """A step failed; ``partial`` holds the trajectory up to the failure."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class SolverConfig:
    estimator: str = EXACT
    alpha: float = 0.1
    reg: RegularizationParams | None = None
    switching: bool = True
    max_steps: int = 1000
    membership_tol: float = MEMBERSHIP_TOL
    eps: float = 1e-2
    dual_bound: float = 1e3

    def __post_init__(self):
        if self.estimator not in (EXACT, JACOBIAN_FEEDBACK, ZERO_ORDER):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass(frozen=True, eq=False)
class PrimalDualState:
    x: np.ndarray
    lam: np.ndarray
    k: int = 0
    gammas: StepSizeGroups | None = None
    grad_x: np.ndarray | None = None
    grad_lam: np.ndarray | None = None

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.lam])

    @property
    def grad(self) -> np.ndarray | None:
        if self.grad_x is None:
            return None
        return np.concatenate([self.grad_x, self.grad_lam])


@dataclass(frozen=True)
class FeedbackContext:
    """What a measurement-based estimator needs at one step."""

    problem: FeedbackProblem
    channel: MeasurementChannel
    exploration: ExplorationSignal | None = None
    jacobian: np.ndarray | None = None


# -- switching rule -----------------------------------------------------------

def _switched(x, gamma, step, grad, cset: ConvexSet, tol) -> np.ndarray:
    """Diagonal of the switched step-size matrix for one block.

    ``step`` is ``-alpha`` for descent and ``+alpha`` for ascent.
    """
    tentative = x + step * gamma * grad
    if cset.contains(tentative, tol):
        return gamma
    return np.ones_like(gamma)


def gamma_switch(x, gamma, alpha: float, grad, cset: ConvexSet,
                 tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    """``diag(gamma)`` if ``x - alpha diag(gamma) grad`` stays in the set, else ``I``."""
    gamma = np.asarray(gamma, dtype=float)
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    return np.diag(_switched(np.asarray(x, float), gamma, -alpha, np.asarray(grad, float),
                             cset, tol))


def switched_gamma_x(qp_blocks, sets, x, gamma_x, alpha, grad_x, tol, switching=True):
    if not switching:
        return gamma_x
    out = np.empty_like(gamma_x)
    for (a, b), s in zip(qp_blocks, sets):
        out[a:b] = _switched(x[a:b], gamma_x[a:b], -alpha, grad_x[a:b], s, tol)
    return out


def switched_gamma_lam(lam, gamma_lam, alpha, grad_lam, lam_max, tol, switching=True):
    if not switching:
        return gamma_lam
    tentative = lam + alpha * gamma_lam * grad_lam
    inside = (tentative >= -tol) & (tentative <= lam_max + tol)
    return np.where(inside, gamma_lam, 1.0)


# -- gradients ----------------------------------------------------------------

def exact_gradients(qp: QuadraticProgram, reg, gammas, x, lam):
    """``grad_x L_p`` and ``grad_lam L_p`` of the composed QP."""
    rx, rl = _reg(reg, gammas, qp.n, qp.M)
    gx = qp.A @ x + qp.b + qp.D.T @ lam + rx * x
    gl = qp.D @ x + qp.d - rl * lam
    return gx, gl


def _reg(reg, gammas, n, M):
    if reg is None:
        return np.zeros(n), np.zeros(M)
    if gammas is None:
        return reg.weights(np.ones(n), np.ones(M))
    return reg.weights(gammas.gamma_x, gammas.gamma_lambda)


def gradient_proxies(qp: QuadraticProgram, state: PrimalDualState, config: SolverConfig,
                     gammas: StepSizeGroups, feedback: FeedbackContext | None = None):
    """Estimator-dependent gradient proxies at ``state``.

    Returns
    -------
    grad_x, grad_lam, y_hat
        ``y_hat`` is the output measurement used (``None`` for the exact
        estimator; the mean of the two probes for the zero-order one).
    """
    x, lam, k = state.x, state.lam, state.k
    if config.estimator == EXACT:
        gx, gl = exact_gradients(qp, config.reg, gammas, x, lam)
        return gx, gl, None
    if feedback is None:
        raise ValueError(f"estimator {config.estimator!r} needs a FeedbackContext")
    if config.estimator == JACOBIAN_FEEDBACK:
        return feedback_gradient(feedback.problem, config.reg, gammas, feedback.channel,
                                 x, lam, k, jacobian=feedback.jacobian)
    if feedback.exploration is None:
        raise ValueError("zero-order estimator needs an exploration signal")
    xi = feedback.exploration.sample(k)
    gx, y_plus, y_minus = zero_order_lagrangian_gradient(
        feedback.problem, config.reg, gammas, feedback.channel, x, lam, xi, config.eps, k)
    # dual ascent uses the probe average, which equals g at x for affine g
    y_hat = 0.5 * (y_plus + y_minus)
    _, rl = _reg(config.reg, gammas, qp.n, qp.M)
    gl = feedback.problem.g(y_hat) - rl * lam
    return gx, gl, y_hat


# -- steps --------------------------------------------------------------------

def _apply(qp, state, config, gammas, gx, gl, dual_box):
    alpha = gammas.alpha if config is None else config.alpha
    tol = MEMBERSHIP_TOL if config is None else config.membership_tol
    switching = True if config is None else config.switching
    gxs = switched_gamma_x(qp.blocks, qp.input_sets, state.x, gammas.gamma_x, alpha, gx, tol,
                           switching)
    x_new = np.empty_like(state.x)
    tent = state.x - alpha * gxs * gx
    for (a, b), s in zip(qp.blocks, qp.input_sets):
        x_new[a:b] = project(s, tent[a:b])
    if qp.M:
        gls = switched_gamma_lam(state.lam, gammas.gamma_lambda, alpha, gl,
                                 dual_box.lambda_max, tol, switching)
        lam_new = dual_box.project(state.lam + alpha * gls * gl)
    else:
        gls = gammas.gamma_lambda
        lam_new = state.lam.copy()
    return x_new, lam_new, gxs, gls


def projected_gradient_step(qp: QuadraticProgram, state: PrimalDualState, config: SolverConfig,
                            gammas: StepSizeGroups, cset: ConvexSet | None = None) -> PrimalDualState:
    """One step of ``x+ = Proj_X{x - alpha Gamma(x) grad f(x)}`` (constraints ``g`` ignored).

    ``cset`` overrides the QP's input sets with a single set on all of ``x``.
    The gradient includes the primal regularization when ``config.reg`` is set.
    """
    x = state.x
    rx, _ = _reg(config.reg, gammas, qp.n, 0)
    grad = qp.A @ x + qp.b + rx * x
    if cset is None:
        blocks, sets = qp.blocks, qp.input_sets
    else:
        blocks, sets = ((0, qp.n),), (cset,)
    g = switched_gamma_x(blocks, sets, x, gammas.gamma_x, config.alpha, grad,
                         config.membership_tol, config.switching)
    tent = x - config.alpha * g * grad
    x_new = np.empty_like(x)
    for (a, b), s in zip(blocks, sets):
        x_new[a:b] = project(s, tent[a:b])
    return replace(state, x=x_new, k=state.k + 1, gammas=gammas, grad_x=grad,
                   grad_lam=np.zeros(0))


def primal_dual_step(qp: QuadraticProgram, state: PrimalDualState, config: SolverConfig,
                     gammas: StepSizeGroups, feedback: FeedbackContext | None = None,
                     dual_box: DualBox | None = None, grads=None) -> PrimalDualState:
    """One projected primal-dual step with per-block step sizes.

    Each block ``x_i`` only reads ``(x_i, lam)`` through its gradient proxy,
    so the block updates are independent of one another.  ``grads`` may carry
    precomputed ``(grad_x, grad_lam)`` proxies.
    """
    if dual_box is None:
        dual_box = DualBox.uniform(qp.M, config.dual_bound)
    if np.any(state.lam < -config.membership_tol) or np.any(state.lam > dual_box.lambda_max + config.membership_tol):
        raise ValueError("dual iterate outside the dual box")
    if grads is None:
        gx, gl, _ = gradient_proxies(qp, state, config, gammas, feedback)
    else:
        gx, gl = grads
    x_new, lam_new, _, _ = _apply(qp, state, config, gammas, gx, gl, dual_box)
    return PrimalDualState(x_new, lam_new, state.k + 1, gammas, gx, gl)


def initial_state(qp: QuadraticProgram, gammas: StepSizeGroups | None = None,
                  x0=None, lam0=None) -> PrimalDualState:
    """Default start: ``x0 = Proj_X(0)``, ``lam0 = 0``."""
    if x0 is None:
        x0 = np.zeros(qp.n)
        for (a, b), s in zip(qp.blocks, qp.input_sets):
            x0[a:b] = project(s, x0[a:b])
    lam0 = np.zeros(qp.M) if lam0 is None else np.asarray(lam0, float)
    return PrimalDualState(np.asarray(x0, float).copy(), lam0.copy(), 0, gammas)


def iterate(qp: QuadraticProgram, config: SolverConfig, gammas: StepSizeGroups,
            state: PrimalDualState | None = None, dual_box: DualBox | None = None,
            tol: float = 0.0, primal_only: bool = False) -> PrimalDualState:
    """Run a static problem for ``config.max_steps`` (or until steps shrink below ``tol``)."""
    state = initial_state(qp, gammas) if state is None else state
    for _ in range(config.max_steps):
        if primal_only:
            new = projected_gradient_step(qp, state, config, gammas)
        else:
            new = primal_dual_step(qp, state, config, gammas, dual_box=dual_box)
        if not np.all(np.isfinite(new.z)):
            raise SolverError("iteration diverged", state)
        done = tol > 0 and np.linalg.norm(new.z - state.z) <= tol
        state = new
        if done:
            break
    return state


# -- online runs --------------------------------------------------------------

@dataclass
class Trajectory:
    """Closed-loop run: states ``z[0..K]`` and per-step diagnostics ``[0..K)``."""

    x: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    y_meas: np.ndarray
    y_true: np.ndarray
    objective: np.ndarray
    violation: np.ndarray
    grad_error: np.ndarray
    switched: np.ndarray
    labels: tuple[str, ...] = ()
    alpha: float = 0.0
    dual_near_bound: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def z(self) -> np.ndarray:
        return np.hstack([self.x, self.lam])

    @property
    def steps(self) -> int:
        return len(self.objective)

    def group_gamma(self) -> dict[str, np.ndarray]:
        """Mean step size per adaptive group over time, shape ``(K+1,)`` each."""
        out = {}
        labels = np.asarray(self.labels)
        for g in dict.fromkeys(self.labels):
            out[g] = self.gamma[:, labels == g].mean(axis=1)
        return out

    def to_csv(self, path_or_buf=None, header_comment: str | None = None) -> str:
        """One row per step ``k`` (``z`` is the state entering step ``k``)."""
        n, M = self.x.shape[1], self.lam.shape[1]
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["k"] + [f"x{i}" for i in range(n)] + [f"lam{j}" for j in range(M)]
                    + [f"gamma_x{i}" for i in range(n)] + [f"gamma_lam{j}" for j in range(M)]
                    + ["objective", "constraint_violation", "tracking_error"])
        err = self.meta.get("tracking_error")
        for k in range(self.steps + 1):
            row = [k] + [_fmt(v) for v in self.x[k]] + [_fmt(v) for v in self.lam[k]]
            row += [_fmt(v) for v in self.gamma[k]]
            if k < self.steps:
                row += [_fmt(self.objective[k]), _fmt(self.violation[k])]
            else:
                row += ["", ""]
            row.append(_fmt(err[k]) if err is not None and k < len(err) else "")
            wr.writerow(row)
        text = buf.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w") as fh:
                    fh.write(text)
        return text


def _fmt(v) -> str:
    return repr(float(v))


def run_online(scenario, config: SolverConfig, gammas: StepSizeGroups,
               adaptive: AdaptiveConfig | None = None, x0=None, lam0=None,
               exploration: ExplorationSignal | None = None,
               channel: MeasurementChannel | None = None,
               steps: int | None = None,
               callback: Callable[[int, PrimalDualState], None] | None = None) -> Trajectory:
    """Closed-loop run over the scenario timeline.

    At each step ``k`` the gradient proxies are formed at ``z[k]`` against the
    data of step ``k``; with ``adaptive`` the step sizes are then updated from
    the cosine similarity with the previous proxies; finally the switched
    projected update produces ``z[k+1]``.
    """
    K = min(scenario.horizon, config.max_steps if steps is None else steps)
    qp0 = scenario.qp_at(0)
    if channel is None:
        channel = MeasurementChannel.from_plant(scenario.plant)
    dual_box = scenario.dual_box
    state = initial_state(qp0, gammas, x0, lam0)
    n, M, m = scenario.n, scenario.M, scenario.plant.m
    xs = np.empty((K + 1, n))
    lams = np.empty((K + 1, M))
    gam = np.empty((K + 1, n + M))
    y_meas = np.full((K, m), np.nan)
    y_true = np.empty((K, m))
    obj = np.empty(K)
    viol = np.empty(K)
    gerr = np.empty(K)
    switched = np.zeros(K, dtype=int)
    near = np.zeros(K, dtype=bool)
    xs[0], lams[0], gam[0] = state.x, state.lam, gammas.gamma
    prev_grad = None

    def partial(upto):
        return Trajectory(xs[:upto + 1], lams[:upto + 1], gam[:upto + 1], y_meas[:upto],
                          y_true[:upto], obj[:upto], viol[:upto], gerr[:upto], switched[:upto],
                          gammas.labels, config.alpha, near[:upto])

    for k in range(K):
        try:
            qp = scenario.qp_at(k)
            ctx = FeedbackContext(scenario.problem_at(k), channel, exploration)
            state = replace(state, k=k)
            gx, gl, yh = gradient_proxies(qp, state, config, gammas, ctx)
            ex_x, ex_l = exact_gradients(qp, config.reg, gammas, state.x, state.lam)
            if adaptive is not None:
                grad_now = np.concatenate([gx, gl])
                gammas, _ = adapt_all(gammas, grad_now, prev_grad, adaptive)
                prev_grad = grad_now
            x_new, lam_new, gxs, gls = _apply(qp, state, config, gammas, gx, gl, dual_box)
        except Exception as exc:  # noqa: BLE001 - re-raised with the partial run attached
            raise SolverError(f"step {k} failed: {exc}", partial(k)) from exc
        if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(lam_new))):
            raise SolverError(f"step {k} produced non-finite iterates", partial(k))
        if max(np.abs(x_new).max(initial=0.0), np.abs(lam_new).max(initial=0.0)) > DIVERGENCE_NORM:
            raise SolverError(f"step {k}: iterates exceed {DIVERGENCE_NORM:g}, diverged", partial(k))
        gvec = np.concatenate([gammas.gamma_x, gammas.gamma_lambda])
        gerr[k] = np.linalg.norm(gvec * np.concatenate([gx - ex_x, gl - ex_l]))
        switched[k] = int(np.sum(gxs != gammas.gamma_x) + np.sum(gls != gammas.gamma_lambda))
        if yh is not None:
            y_meas[k] = yh
        y_true[k] = scenario.plant.C @ state.x + scenario.plant.U @ scenario.plant.w(k)
        obj[k] = 0.5 * state.x @ qp.A @ state.x + qp.b @ state.x + qp.c
        viol[k] = float(np.max(qp.D @ state.x + qp.d, initial=0.0)) if qp.M else 0.0
        near[k] = bool(np.any(dual_box.near_bound(state.lam))) if M else False
        state = PrimalDualState(x_new, lam_new, k + 1, gammas, gx, gl)
        xs[k + 1], lams[k + 1], gam[k + 1] = x_new, lam_new, gvec
        if callback is not None:
            callback(k, state)
    traj = partial(K)
    traj.labels = gammas.labels
    traj.meta["dual_near_bound_any"] = bool(near.any())
    return traj


# -- step-size cap ------------------------------------------------------------

def is_stable(scenario, config: SolverConfig, gammas: StepSizeGroups, steps: int = 400,
              k: int = 0, x0=None, lam0=None) -> bool:
    """Whether the exact iteration on the frozen problem of step ``k`` settles.

    The distance to the exact saddle point is tracked over ``steps``
    iterations.  The run counts as stable when it stays finite and either
    converges to round-off, or ends closer than it started with the peak
    error of the last quarter strictly below the peak of the quarter before.
    Limit cycles (equal peaks) and divergence fail the test.
    """
    from .oracle import solve_saddle_point

    qp = scenario.qp_at(k)
    box = scenario.dual_box
    z_star, _ = solve_saddle_point(qp, config.reg, gammas, k, dual_box=box)
    cfg = replace(config, estimator=EXACT, max_steps=steps)
    state = initial_state(qp, gammas, x0, lam0)
    if np.linalg.norm(state.z - z_star) < 1e-12:
        # starting at the solution tells nothing; nudge along a generic
        # direction so no eigenvector or constraint normal is singled out
        nudge = 1.0 + np.random.default_rng(0).random(z_star.size)
        x_pert = z_star[:qp.n] + nudge[:qp.n]
        for (a, b), s in zip(qp.blocks, qp.input_sets):
            x_pert[a:b] = project(s, x_pert[a:b])
        state = initial_state(qp, gammas, x_pert, box.project(z_star[qp.n:] + nudge[qp.n:]))
    errs = [np.linalg.norm(state.z - z_star)]
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            try:
                state = primal_dual_step(qp, state, cfg, gammas, dual_box=box)
            except ValueError:
                return False
            err = np.linalg.norm(state.z - z_star)
            if not np.isfinite(err) or err > 1e12 * max(errs[0], 1.0):
                return False
            errs.append(err)
    errs = np.asarray(errs)
    e0, e_end = errs[0], errs[-1]
    if e_end <= 1e-10 * max(e0, 1.0):
        return True
    q = steps // 4
    peak_mid = errs[2 * q:3 * q].max()
    peak_late = errs[3 * q:].max()
    return bool(e_end < e0 and peak_late < peak_mid * (1 - 1e-9))


def bisect_alpha(scenario, config: SolverConfig, gammas: StepSizeGroups,
                 lo: float = 1e-4, hi: float = 10.0, iters: int = 30,
                 steps: int = 400) -> float:
    """Largest stable ``alpha`` in ``[lo, hi]`` by bisection in log space."""
    def stable(a):
        return is_stable(scenario, replace(config, alpha=a), replace(gammas, alpha=a), steps)

    if not stable(lo):
        raise SolverError(f"alpha={lo} is already unstable")
    if stable(hi):
        return hi
    for _ in range(iters):
        mid = math.sqrt(lo * hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-3:
            break
    return lo
