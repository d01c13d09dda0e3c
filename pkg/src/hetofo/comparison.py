"""Metrics for comparing closed-loop runs on VPP scenarios.

* iterations-to-band: after each VPP band step, the number of iterations
  until the feeder power enters the band and stays there for a persistence
  window;
* maximum voltage violation over the run;
* cumulative DER cost over the run.

A run that never settles after a step is charged the remaining horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adaptive import standard_config
from .operators import RegularizationParams, StepSizeGroups
from .scenario import band_trace
from .solvers import SolverConfig, SolverError, bisect_alpha, run_online

PERSISTENCE_WINDOW = 20
BAND_TOL_FRACTION = 0.02
# Cap on adaptive step-size multipliers in the shipped comparison.  Without
# it, idle dual groups keep growing while their constraints are inactive and
# the first overshoot after a band step gets worse.
VPP_GAMMA_MAX = 3.0
# Fixed-alpha candidates, as fractions of the bisected stability threshold.
FIXED_ALPHA_FRACTIONS = tuple(np.geomspace(1.0, 0.05, 13))


@dataclass
class RunMetrics:
    iterations_to_band: list[int]
    settled: list[bool]
    max_voltage_violation: float
    cumulative_der_cost: float
    divergent: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def total_iterations_to_band(self) -> int:
        return int(sum(self.iterations_to_band))

    def as_row(self) -> dict:
        row = {f"iterations_to_band_{i + 1}": v for i, v in enumerate(self.iterations_to_band)}
        row.update(max_voltage_violation=self.max_voltage_violation,
                   cumulative_der_cost=self.cumulative_der_cost,
                   divergent=self.divergent)
        return row


def in_band_mask(feeder_power, band, tol_fraction: float = BAND_TOL_FRACTION) -> np.ndarray:
    """Per-step membership of the feeder power in its band, widened by a fraction of its width."""
    band = np.asarray(band, dtype=float)
    tol = tol_fraction * (band[:, 1] - band[:, 0])
    y = np.asarray(feeder_power, dtype=float)
    return (y >= band[:, 0] - tol) & (y <= band[:, 1] + tol)


def iterations_to_band(feeder_power, band, step_times, window: int = PERSISTENCE_WINDOW,
                       tol_fraction: float = BAND_TOL_FRACTION):
    """Iterations from each step until the power enters the band for ``window`` steps.

    Returns
    -------
    counts : list of int
        Charged ``next_step - step`` (or the remaining horizon) if the band
        is never held for a full window before the next step.
    settled : list of bool
    """
    inside = in_band_mask(feeder_power, band, tol_fraction)
    K = len(inside)
    ends = list(step_times[1:]) + [K]
    counts, settled = [], []
    for s, e in zip(step_times, ends):
        hit = None
        run = 0
        for k in range(s, min(e, K)):
            run = run + 1 if inside[k] else 0
            if run == window:
                hit = k - window + 1 - s
                break
        counts.append(e - s if hit is None else hit)
        settled.append(hit is not None)
    return counts, settled


def max_voltage_violation(voltages, v_lo: float, v_hi: float) -> float:
    v = np.asarray(voltages, dtype=float)
    if v.size == 0:
        return 0.0
    return float(max(0.0, np.max(v - v_hi), np.max(v_lo - v)))


def cumulative_der_cost(scenario, x_traj) -> float:
    """Sum over steps of the DER preference costs ``phi(x[k])``."""
    total = 0.0
    for k, x in enumerate(x_traj):
        total += float(scenario.problem_at(min(k, scenario.horizon - 1)).phi(x))
    return total


def run_metrics(scenario, trajectory, window: int = PERSISTENCE_WINDOW,
                tol_fraction: float = BAND_TOL_FRACTION) -> RunMetrics:
    """Comparison metrics of a run on a VPP step scenario (true plant outputs)."""
    meta = scenario.metadata
    steps = meta.get("step_times", [])
    K = trajectory.steps
    vpp_row = meta.get("vpp_output_rows", [0])[0]
    band = band_trace(scenario)[:K]
    counts, settled = iterations_to_band(trajectory.y_true[:, vpp_row], band,
                                         [s for s in steps if s < K], window, tol_fraction)
    vrows = meta.get("voltage_output_rows", [])
    viol = max_voltage_violation(trajectory.y_true[:, vrows], meta.get("v_lo", -np.inf),
                                 meta.get("v_hi", np.inf))
    cost = cumulative_der_cost(scenario, trajectory.x[:K])
    return RunMetrics(counts, settled, viol, cost)


def stability_threshold(scenario, config: SolverConfig, gammas: StepSizeGroups,
                        ks=None, lo: float = 1e-4, hi: float = 2.0, iters: int = 12,
                        steps: int = 400) -> float:
    """Smallest bisected stable ``alpha`` over the frozen problems at steps ``ks``.

    ``ks`` defaults to ``0`` plus the scenario's step times.
    """
    if ks is None:
        ks = [0] + [k for k in scenario.metadata.get("step_times", []) if k < scenario.horizon]
    return min(bisect_alpha(scenario.static(k, 1), config, gammas, lo, hi, iters, steps)
               for k in ks)


@dataclass
class AdaptiveVsFixed:
    """Outcome of the adaptive-versus-best-fixed experiment on one scenario."""

    alpha_bar: float
    alpha_fixed: float
    fixed: RunMetrics
    adaptive: RunMetrics

    @property
    def faster_after_every_step(self) -> bool:
        a, f = self.adaptive.iterations_to_band, self.fixed.iterations_to_band
        return len(a) == len(f) and all(x < y for x, y in zip(a, f))

    @property
    def voltage_no_worse(self) -> bool:
        return self.adaptive.max_voltage_violation <= self.fixed.max_voltage_violation

    @property
    def adaptive_wins(self) -> bool:
        return not self.adaptive.divergent and self.faster_after_every_step and self.voltage_no_worse


def adaptive_vs_fixed(scenario, reg: RegularizationParams | None = None,
                      gamma_max: float = VPP_GAMMA_MAX, x0=None,
                      fractions=FIXED_ALPHA_FRACTIONS) -> AdaptiveVsFixed:
    """Compare the adaptive rule against the best fixed step size.

    The stability threshold ``alpha_bar`` of uniform step sizes is found by
    bisection; the best fixed ``alpha`` is the candidate below it with the
    fewest total iterations-to-band (ties broken by voltage violation).  The
    adaptive run starts from the same ``alpha`` with all multipliers at 1.
    """
    reg = reg or RegularizationParams(1e-3, 1e-3)
    labels = scenario.group_labels()
    n, M = scenario.n, scenario.M
    if x0 is None:
        x0 = scenario.metadata.get("der_setpoints")
    base = SolverConfig(alpha=1.0, reg=reg, max_steps=10**6)

    def run(alpha, adaptive):
        g = StepSizeGroups.uniform(n, M, alpha, 1.0, labels)
        ad = standard_config(set(labels), gamma_max=gamma_max) if adaptive else None
        try:
            traj = run_online(scenario, replace(base, alpha=alpha), g, adaptive=ad, x0=x0)
        except SolverError:
            return None
        return run_metrics(scenario, traj)

    alpha_bar = stability_threshold(scenario, base, StepSizeGroups.uniform(n, M, 1.0, 1.0, labels))
    best = None
    for frac in fractions:
        m = run(alpha_bar * frac, False)
        if m is None:
            continue
        key = (m.total_iterations_to_band, m.max_voltage_violation)
        if best is None or key < best[0]:
            best = (key, alpha_bar * frac, m)
    if best is None:
        raise SolverError("no fixed step size below the stability threshold completed")
    ad = run(best[1], True)
    if ad is None:
        ad = RunMetrics([], [], float("inf"), float("inf"), True, ["adaptive run failed"])
    return AdaptiveVsFixed(alpha_bar, best[1], best[2], ad)
