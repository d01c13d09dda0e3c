"""Exact saddle points, reference trajectories and tracking metrics.

The saddle point of the regularized Lagrangian solves the variational
inequality ``F(z) in -N_{X x D}(z)`` with the affine, unscaled operator
``F(z) = (W + diag(r)) z + w``, where ``r`` holds the regularization weights.
It is computed independently of the online iterations:

1. the unconstrained closed form ``z = -(W + diag(r))^{-1} w``, accepted when
   it is a fixed point;
2. an active-set KKT solve seeded from a previous solution;
3. a conic solve (cvxpy) of the problem with ``lam`` eliminated in closed
   form, followed by the same active-set polish;
4. as a last resort the exact primal-dual iteration with a conservative step.

Every result is checked through :func:`fixed_point_residual`, i.e. against
the iteration map with the switching rule applied exactly as the solvers do.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .operators import StepSizeGroups, kkt_matrices
from .projection import DualBox, project
from .qp_model import QuadraticProgram, RegularizationParams, set_constraints
from .solvers import (SolverConfig, Trajectory, exact_gradients, initial_state, primal_dual_step,
                      switched_gamma_lam, switched_gamma_x)

ORACLE_TOL = 1e-10
TAIL_FRACTION = 0.5
BOUND_SLACK = 2.0
ERROR_FLOOR = 1e-13
BOUND_ATOL = 1e-8


class OracleError(RuntimeError):
    """Saddle-point solve failed; ``residual`` is the best residual reached."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


# -- residual -----------------------------------------------------------------

def fixed_point_residual(qp: QuadraticProgram, reg: RegularizationParams | None,
                         gammas: StepSizeGroups, z, alpha: float | None = None,
                         dual_box: DualBox | None = None, switching: bool = True) -> float:
    """``||z - Proj{z - alpha Gamma(z) Phi(z)}||`` with the solver's switching rule."""
    z = np.asarray(z, dtype=float).reshape(-1)
    n, M = qp.n, qp.M
    x, lam = z[:n], z[n:]
    alpha = gammas.alpha if alpha is None else alpha
    box = DualBox.uniform(M) if dual_box is None else dual_box
    gx, gl = exact_gradients(qp, reg, gammas, x, lam)
    sx = switched_gamma_x(qp.blocks, qp.input_sets, x, gammas.gamma_x, alpha, gx, 1e-10,
                          switching)
    tent = x - alpha * sx * gx
    x_new = np.empty(n)
    for (a, b), s in zip(qp.blocks, qp.input_sets):
        x_new[a:b] = project(s, tent[a:b])
    if M:
        sl = switched_gamma_lam(lam, gammas.gamma_lambda, alpha, gl, box.lambda_max, 1e-10,
                                switching)
        lam_new = box.project(lam + alpha * sl * gl)
    else:
        lam_new = lam
    return float(np.linalg.norm(np.concatenate([x - x_new, lam - lam_new])))


# -- saddle point -------------------------------------------------------------

def _reg_weights(qp, reg, gammas):
    if reg is None:
        return np.zeros(qp.n), np.zeros(qp.M)
    return reg.weights(gammas.gamma_x, gammas.gamma_lambda)


def _constraint_rows(qp: QuadraticProgram, box: DualBox):
    """``H z <= h`` describing ``X x D``, or ``None`` if some set is not polyhedral."""
    n, M = qp.n, qp.M
    rows, rhs = [], []
    for (a, b), s in zip(qp.blocks, qp.input_sets):
        hs = s.halfspaces(b - a)
        if hs is None:
            return None
        H = np.zeros((hs[0].shape[0], n + M))
        H[:, a:b] = hs[0]
        rows.append(H)
        rhs.append(hs[1])
    if M:
        eye = np.eye(M)
        rows.append(np.hstack([np.zeros((M, n)), -eye]))
        rhs.append(np.zeros(M))
        rows.append(np.hstack([np.zeros((M, n)), eye]))
        rhs.append(box.lambda_max)
    if not rows:
        return np.zeros((0, n + M)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


def _active_set_solve(K, w, H, h, active):
    """Solve the KKT system of the VI with the given active rows."""
    N = K.shape[0]
    HA = H[active]
    m = HA.shape[0]
    lhs = np.block([[K, HA.T], [HA, np.zeros((m, m))]])
    rhs = np.concatenate([-w, h[active]])
    sol = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    return sol[:N], sol[N:]


def _polish(K, w, H, h, z_guess, check, tols=(1e-6, 1e-8, 1e-4)):
    for t in tols:
        slack = h - H @ z_guess
        active = np.flatnonzero(slack <= t * max(1.0, np.max(np.abs(h), initial=1.0)))
        z, mu = _active_set_solve(K, w, H, h, active)
        if np.all(mu >= -1e-9) and np.all(H @ z <= h + 1e-9):
            res = check(z)
            if res is not None:
                return z, res
    return None


def _conic_solve(qp: QuadraticProgram, rx, rl, box: DualBox):
    """Primal problem with the regularized dual maximized out in closed form."""
    import cvxpy as cp

    n, M = qp.n, qp.M
    x = cp.Variable(n)
    P = qp.A + np.diag(rx)
    P = 0.5 * (P + P.T)
    obj = 0.5 * cp.quad_form(x, cp.psd_wrap(P)) + qp.b @ x
    cons = []
    for (a, b), s in zip(qp.blocks, qp.input_sets):
        cons += set_constraints(s, x[a:b])
    lam_con = None
    if M:
        if np.all(rl > 0):
            v = cp.Variable(M, nonneg=True)
            u = cp.Variable(M, nonneg=True)
            cons.append(u >= qp.D @ x + qp.d - v)
            obj = obj + cp.sum(cp.multiply(1.0 / (2.0 * rl), cp.square(v)))
            obj = obj + box.lambda_max @ u
        else:
            lam_con = qp.D @ x + qp.d <= 0
            cons.append(lam_con)
    prob = cp.Problem(cp.Minimize(obj), cons)
    try:
        prob.solve()
    except cp.error.SolverError:
        return None
    if x.value is None:
        return None
    xv = np.asarray(x.value, dtype=float)
    if not M:
        return xv
    if lam_con is not None:
        lam = np.clip(np.asarray(lam_con.dual_value, float), 0.0, box.lambda_max)
    else:
        lam = np.clip((qp.D @ xv + qp.d) / rl, 0.0, box.lambda_max)
    return np.concatenate([xv, lam])


def _iterative_solve(qp, reg, gammas, box, tol, max_steps, z0=None):
    """Exact homogeneous primal-dual iteration with the step ``eta / L^2``."""
    W, w = kkt_matrices(qp)
    rx, rl = _reg_weights(qp, reg, gammas)
    K = W + np.diag(np.concatenate([rx, rl]))
    eta = float(np.linalg.eigvalsh(0.5 * (K + K.T))[0])
    if eta <= 0:
        raise OracleError("operator is not strongly monotone; increase the regularization",
                          np.inf)
    L = float(np.linalg.norm(K, 2))
    alpha = eta / L ** 2
    unit = StepSizeGroups(alpha, np.ones(qp.n), np.ones(qp.M))
    # the iteration runs with unit step sizes but the original regularization weights
    cfg = SolverConfig(alpha=alpha, reg=None, switching=False, max_steps=1)
    shifted = QuadraticProgram(qp.A + np.diag(rx), qp.b, qp.c, qp.D, qp.d, qp.blocks,
                               qp.input_sets)
    state = initial_state(qp, unit)
    if z0 is not None:
        state = initial_state(qp, unit, z0[:qp.n], box.project(z0[qp.n:]))
    res = np.inf
    for i in range(max_steps):
        gx, gl = exact_gradients(shifted, None, unit, state.x, state.lam)
        gl = gl - rl * state.lam
        new = primal_dual_step(shifted, state, cfg, unit, dual_box=box, grads=(gx, gl))
        step = np.linalg.norm(new.z - state.z)
        state = new
        if i % 50 == 0 or step < tol * 1e-2:
            res = fixed_point_residual(qp, reg, gammas, state.z, dual_box=box)
            if res <= tol:
                return state.z, res
    raise OracleError("saddle-point iteration did not converge", res)


@dataclass
class SaddlePoint:
    z: np.ndarray
    residual: float
    method: str


def solve_saddle_point(qp: QuadraticProgram, reg: RegularizationParams | None,
                       gammas: StepSizeGroups, k: int = 0, tol: float = ORACLE_TOL,
                       dual_box: DualBox | None = None, hint=None,
                       max_steps: int = 200_000) -> tuple[np.ndarray, float]:
    """Unique saddle point of the regularized Lagrangian.

    Parameters
    ----------
    k : int
        Time index, only used in error messages.
    hint : ndarray, optional
        A nearby solution (e.g. of the previous time step) whose active set
        is tried first.

    Returns
    -------
    z_star, residual

    Raises
    ------
    OracleError
        If no route reaches a fixed-point residual ``<= tol``.
    """
    sp = _solve(qp, reg, gammas, k, tol, dual_box, hint, max_steps)
    return sp.z, sp.residual


def _solve(qp, reg, gammas, k, tol, dual_box, hint, max_steps) -> SaddlePoint:
    box = DualBox.uniform(qp.M) if dual_box is None else dual_box
    W, w = kkt_matrices(qp)
    rx, rl = _reg_weights(qp, reg, gammas)
    K = W + np.diag(np.concatenate([rx, rl]))

    def check(z):
        if not np.all(np.isfinite(z)):
            return None
        r = fixed_point_residual(qp, reg, gammas, z, dual_box=box)
        return r if r <= tol else None

    try:
        z = np.linalg.solve(K, -w)
        r = check(z)
        if r is not None:
            return SaddlePoint(z, r, "closed_form")
    except np.linalg.LinAlgError:
        pass
    Hh = _constraint_rows(qp, box)
    if Hh is not None:
        H, h = Hh
        if hint is not None:
            got = _polish(K, w, H, h, np.asarray(hint, float), check)
            if got is not None:
                return SaddlePoint(got[0], got[1], "active_set")
        z0 = _conic_solve(qp, rx, rl, box)
        if z0 is not None:
            r = check(z0)
            if r is not None:
                return SaddlePoint(z0, r, "conic")
            got = _polish(K, w, H, h, z0, check)
            if got is not None:
                return SaddlePoint(got[0], got[1], "conic+active_set")
    else:
        z0 = _conic_solve(qp, rx, rl, box)
    try:
        z, r = _iterative_solve(qp, reg, gammas, box, tol, max_steps, z0)
    except OracleError as exc:
        raise OracleError(f"step {k}: {exc.args[0]}", exc.residual) from exc
    return SaddlePoint(z, r, "iteration")


# -- reference trajectory ------------------------------------------------------

@dataclass
class ReferenceTrajectory:
    z_star: np.ndarray
    residuals: np.ndarray
    sigma: float
    methods: tuple[str, ...] = ()

    @property
    def horizon(self) -> int:
        return len(self.z_star)


def reference_trajectory(scenario, reg: RegularizationParams | None,
                         gammas: StepSizeGroups | None = None, tol: float = ORACLE_TOL,
                         steps: int | None = None) -> ReferenceTrajectory:
    """Saddle point at every step of the timeline and ``sigma``.

    Consecutive steps with identical problem data reuse the previous solution.
    """
    K = scenario.horizon if steps is None else min(steps, scenario.horizon)
    if gammas is None:
        gammas = StepSizeGroups.uniform(scenario.n, scenario.M, 1.0)
    box = scenario.dual_box
    zs = np.empty((K, scenario.n + scenario.M))
    res = np.empty(K)
    methods = []
    prev_qp = prev = None
    for k in range(K):
        qp = scenario.qp_at(k)
        if prev_qp is not None and _same_data(qp, prev_qp):
            zs[k], res[k] = zs[k - 1], res[k - 1]
            methods.append("reused")
            continue
        try:
            sp = _solve(qp, reg, gammas, k, tol, box, prev, 200_000)
        except OracleError as exc:
            raise OracleError(f"reference step {k}: {exc.args[0]}", exc.residual) from exc
        zs[k], res[k] = sp.z, sp.residual
        methods.append(sp.method)
        prev_qp, prev = qp, sp.z
    sigma = float(np.max(np.linalg.norm(np.diff(zs, axis=0), axis=1), initial=0.0))
    return ReferenceTrajectory(zs, res, sigma, tuple(methods))


def _same_data(a: QuadraticProgram, b: QuadraticProgram) -> bool:
    return (np.array_equal(a.b, b.b) and np.array_equal(a.d, b.d)
            and np.array_equal(a.A, b.A) and np.array_equal(a.D, b.D))


# -- tracking -----------------------------------------------------------------

def estimate_contraction(errors, tail_fraction: float = TAIL_FRACTION,
                         floor: float = ERROR_FLOOR) -> float:
    """Largest ratio ``e[k+1] / e[k]`` over the last ``tail_fraction`` of a run.

    Ratios whose denominator is below ``floor`` (converged to round-off) are
    skipped.  Returns ``nan`` if no ratio is usable.
    """
    e = np.asarray(errors, dtype=float)
    start = int(len(e) * (1.0 - tail_fraction))
    start = max(0, min(start, len(e) - 2))
    num, den = e[start + 1:], e[start:-1]
    ok = den > floor
    if not np.any(ok):
        return float("nan")
    return float(np.max(num[ok] / den[ok]))


def contraction_run(qp: QuadraticProgram, config: SolverConfig, gammas: StepSizeGroups,
                    z_star, steps: int = 500, dual_box: DualBox | None = None,
                    x0=None, lam0=None) -> np.ndarray:
    """Errors ``||z[k] - z*||`` of the exact iteration on a static problem."""
    state = initial_state(qp, gammas, x0, lam0)
    cfg = SolverConfig(alpha=config.alpha, reg=config.reg, switching=config.switching,
                       max_steps=1, membership_tol=config.membership_tol,
                       dual_bound=config.dual_bound)
    box = DualBox.uniform(qp.M, config.dual_bound) if dual_box is None else dual_box
    errs = [np.linalg.norm(state.z - z_star)]
    for _ in range(steps):
        state = primal_dual_step(qp, state, cfg, gammas, dual_box=box)
        errs.append(np.linalg.norm(state.z - z_star))
    return np.asarray(errs)


@dataclass
class TrackingReport:
    error_series: np.ndarray
    c_hat: float
    eps_phi_hat: float
    sigma: float
    alpha: float
    bound: float | None
    tail_error: float
    satisfied: bool | None
    bound_satisfied_after: int | None
    e_f_hat: float | None = None
    slack: float = BOUND_SLACK
    flags: list[str] = field(default_factory=list)

    def summary(self) -> str:
        def f(v):
            return "n/a" if v is None else f"{v:.6g}"
        verdict = {True: "PASS", False: "FAIL", None: "NOT REPORTABLE"}[self.satisfied]
        lines = [f"sigma        {f(self.sigma)}",
                 f"c_hat        {f(self.c_hat)}",
                 f"eps_phi_hat  {f(self.eps_phi_hat)}",
                 f"e_f_hat      {f(self.e_f_hat)}",
                 f"alpha        {f(self.alpha)}",
                 f"bound        {f(self.bound)}  (slack x{self.slack:g})",
                 f"tail error   {f(self.tail_error)}",
                 f"after step   {self.bound_satisfied_after}",
                 f"verdict      {verdict}"]
        lines += [f"flag         {m}" for m in self.flags]
        return "\n".join(lines)

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["k", "tracking_error"])
        for k, e in enumerate(self.error_series):
            wr.writerow([k, repr(float(e))])
        return buf.getvalue()


def tracking_errors(trajectory: Trajectory, reference: ReferenceTrajectory) -> np.ndarray:
    K = min(trajectory.steps, reference.horizon)
    return np.linalg.norm(trajectory.z[:K] - reference.z_star[:K], axis=1)


def tracking_report(trajectory: Trajectory, reference: ReferenceTrajectory, alpha: float,
                    c_hat: float | None = None, burn_in: float = TAIL_FRACTION,
                    slack: float = BOUND_SLACK, e_f_hat: float | None = None,
                    atol: float = BOUND_ATOL) -> TrackingReport:
    """Compare a closed-loop run with the reference against the tracking bound.

    ``c_hat`` should come from a static exact-gradient run
    (:func:`contraction_run` + :func:`estimate_contraction`); without it the
    trajectory's own error ratios are used, which is only meaningful for
    static, exact runs.  The bound ``(alpha eps_phi + sigma) / (1 - c_hat)`` is
    reported only for ``0 <= c_hat < 1``; the check uses ``slack * bound + atol``,
    where ``atol`` absorbs round-off once a static run has converged.
    """
    err = tracking_errors(trajectory, reference)
    flags = []
    if c_hat is None:
        c_hat = estimate_contraction(err, burn_in)
    eps_phi = float(np.max(trajectory.grad_error, initial=0.0))
    tail = err[int(len(err) * burn_in):]
    tail_err = float(np.max(tail, initial=0.0))
    bound = None
    satisfied = None
    after = None
    if np.isfinite(c_hat) and 0 <= c_hat < 1:
        bound = (alpha * eps_phi + reference.sigma) / (1.0 - c_hat)
        limit = slack * bound + atol
        above = np.flatnonzero(err > limit)
        after = 0 if len(above) == 0 else (int(above[-1]) + 1 if above[-1] + 1 < len(err)
                                           else None)
        satisfied = tail_err <= limit
    else:
        flags.append(f"c_hat={c_hat:.6g} is not in [0, 1); bound not reportable")
    if trajectory.meta.get("dual_near_bound_any"):
        flags.append("dual iterate within 1% of the dual bound")
    return TrackingReport(err, float(c_hat), eps_phi, reference.sigma, float(alpha), bound,
                          tail_err, satisfied, after, e_f_hat, slack, flags)
