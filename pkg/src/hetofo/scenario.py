"""Scenario construction, config files and drift metrics.

A :class:`ScenarioTimeline` is a base :class:`FeedbackProblem`, a
:class:`LinearPlant` and the time-varying data (input-cost offsets and
constraint offsets per step).  :func:`synth_network` builds the synthetic
virtual-power-plant / voltage-regulation feeder used by the experiments.

Config file schema (YAML)::

    name: str                      # optional
    problem:
      phi_A: n x n                 # required
      phi_b: n                     # required
      phi_c: float                 # default 0
      f0_Q: m x m, f0_q: m         # default 0
      G: M x m, g0: M              # default: no output constraints
      blocks: [[start, stop], ...] # default: one block
      input_sets: [set, ...]       # default: Unbounded per block
    plant:
      C: m x n                     # required
      U: m x w                     # required
      w_traj: K x w                # required
      e_y: float                   # default 0
      noise_seed: int              # default 0
    timeline:
      phi_b_traj: K x n            # default: phi_b at every step
      g0_traj: K x M               # default: g0 at every step
      labels: [tag, ...]           # one per constraint row, default "constraint"
      lambda_max: M                # default 1e3
    metadata: {}                   # free-form, carried through unchanged

Sets are written as mappings with a ``type`` key: ``Box`` (lower, upper),
``Halfspace`` (a, beta, sense), ``Ball`` (center, radius),
``NonnegativeOrthant``, ``Intersection`` (sets) or ``Unbounded``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .projection import Box, DualBox, set_from_dict
from .qp_model import FeedbackProblem, LinearPlant, QuadraticProgram, contiguous_blocks

VOLT = "volt"
VPP = "vpp"


class ScenarioError(ValueError):
    """A scenario file does not match the schema."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = ""
        if field:
            where += f" [field '{field}'"
            where += f", line {line}]" if line else "]"
        super().__init__(message + where)
        self.field = field
        self.line = line


@dataclass(frozen=True, eq=False)
class ScenarioTimeline:
    problem: FeedbackProblem
    plant: LinearPlant
    phi_b_traj: np.ndarray | None = None
    g0_traj: np.ndarray | None = None
    labels: tuple[str, ...] = ()
    lambda_max: np.ndarray | None = None
    name: str = "scenario"
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        K, n, M = self.plant.horizon, self.problem.n, self.problem.M
        pb = (np.tile(self.problem.phi_b, (K, 1)) if self.phi_b_traj is None
              else np.asarray(self.phi_b_traj, float).reshape(K, n))
        g0 = (np.tile(self.problem.g0, (K, 1)) if self.g0_traj is None
              else np.asarray(self.g0_traj, float).reshape(K, M))
        labels = tuple(self.labels) or tuple(["constraint"] * M)
        if len(labels) != M:
            raise ScenarioError(f"expected {M} constraint labels, got {len(labels)}", "timeline.labels")
        lm = np.full(M, 1e3) if self.lambda_max is None else np.asarray(self.lambda_max, float).reshape(M)
        if self.plant.C.shape[1] != n:
            raise ScenarioError("plant C must have one column per input", "plant.C")
        if self.plant.C.shape[0] != self.problem.G.shape[1]:
            raise ScenarioError("G must have one column per plant output", "problem.G")
        object.__setattr__(self, "phi_b_traj", pb)
        object.__setattr__(self, "g0_traj", g0)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "lambda_max", lm)

    @property
    def horizon(self) -> int:
        return self.plant.horizon

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def M(self) -> int:
        return self.problem.M

    @property
    def dual_box(self) -> DualBox:
        return DualBox(self.lambda_max)

    def problem_at(self, k: int) -> FeedbackProblem:
        return self.problem.with_data(phi_b=self.phi_b_traj[k], g0=self.g0_traj[k])

    def qp_at(self, k: int) -> QuadraticProgram:
        return self.problem_at(k).compose(self.plant, k)

    def group_labels(self) -> tuple[str, ...]:
        """Adaptive group of each ``z`` coordinate: ``x1..xN`` then ``lambda_<tag>``."""
        xs = []
        for i, (a, b) in enumerate(self.problem.blocks):
            xs += [f"x{i + 1}"] * (b - a)
        return tuple(xs) + tuple(f"lambda_{t}" for t in self.labels)

    def rows(self, tag: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.labels) == tag)

    def static(self, k: int = 0, horizon: int | None = None) -> "ScenarioTimeline":
        """Freeze the data of step ``k`` over ``horizon`` steps."""
        K = self.horizon if horizon is None else horizon
        plant = LinearPlant(self.plant.C, self.plant.U, np.tile(self.plant.w(k), (K, 1)),
                            self.plant.e_y, self.plant.noise_seed)
        return ScenarioTimeline(self.problem_at(k), plant, None, None, self.labels,
                                self.lambda_max, self.name + "-static", dict(self.metadata))

    def with_noise(self, e_y: float, seed: int | None = None) -> "ScenarioTimeline":
        plant = LinearPlant(self.plant.C, self.plant.U, self.plant.w_traj, e_y,
                            self.plant.noise_seed if seed is None else seed)
        return ScenarioTimeline(self.problem, plant, self.phi_b_traj, self.g0_traj,
                                self.labels, self.lambda_max, self.name, dict(self.metadata))

    def __eq__(self, other):
        if not isinstance(other, ScenarioTimeline):
            return NotImplemented
        return _to_config(self) == _to_config(other)


@dataclass(frozen=True)
class NetworkParams:
    """Synthetic feeder description.  Defaults are artifact choices."""

    n_ders: int = 10
    m_voltage_buses: int = 6
    vpp_rows: int = 1
    v_lo: float = 0.95
    v_hi: float = 1.05
    horizon: int = 600
    vpp_center: float | None = None
    vpp_halfwidth: float = 0.25
    cost_range: tuple[float, float] = (0.5, 1.5)
    p_max_range: tuple[float, float] = (0.8, 1.2)
    q_max: float = 0.5
    setpoint_fraction: float = 0.5
    sensitivity: float = 0.02
    load_base: float = 1.0
    load_sensitivity: float = 0.01
    load_drift_amplitude: float = 0.0
    load_drift_period: float = 200.0
    voltage_row_scale: float = 50.0
    vpp_row_scale: float = 1.0
    lambda_max: float = 1e3
    e_y: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_ders < 0 or self.m_voltage_buses < 0 or self.vpp_rows < 0:
            raise ValueError("counts must be nonnegative")
        if not self.v_lo < self.v_hi:
            raise ValueError("need v_lo < v_hi")
        if self.vpp_halfwidth < 0:
            raise ValueError("vpp band must be nonempty")
        if self.q_max < 0 or self.p_max_range[0] < 0:
            raise ValueError("box limits must be nonempty")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def synth_network(params: NetworkParams, band: np.ndarray | None = None) -> ScenarioTimeline:
    """Linearized feeder with VPP aggregate rows and bus-voltage rows.

    Inputs are ``(P_i, Q_i)`` per DER.  Outputs are ``vpp_rows`` aggregate
    net injections (``sum P_i - load``) followed by bus voltages.
    ``w = (1, load_1, ..., load_B)`` routes the nominal voltage and the
    uncontrollable loads.  ``band`` is an optional ``(K, 2)`` array of VPP
    bounds; by default the band is constant around the nominal aggregate.
    """
    p = params
    rng = np.random.default_rng(p.seed)
    N, B, R, K = p.n_ders, p.m_voltage_buses, p.vpp_rows, p.horizon
    n = 2 * N
    m = R + B

    costs = rng.uniform(*p.cost_range, size=N)
    p_max = rng.uniform(*p.p_max_range, size=N)
    der_bus = np.arange(N) % B if B else np.zeros(N, int)
    der_phase = np.arange(N) % R if R else np.zeros(N, int)

    C = np.zeros((m, n))
    for i in range(N):
        if R:
            C[der_phase[i], 2 * i] = 1.0
    if B:
        for i in range(N):
            own = der_bus[i]
            col = p.sensitivity * np.where(np.arange(B) == own, 2.0, rng.uniform(0.2, 0.6, B))
            C[R:, 2 * i] = col
            C[R:, 2 * i + 1] = col * rng.uniform(0.4, 0.6)
    # loads: one per bus, mapped onto VPP rows round-robin
    U = np.zeros((m, 1 + B))
    if B:
        U[R:, 0] = 1.0
        S = p.load_sensitivity * (np.eye(B) * 2.0 + rng.uniform(0.1, 0.4, (B, B)) * (1 - np.eye(B)))
        U[R:, 1:] = -S
        for j in range(B):
            if R:
                U[j % R, 1 + j] = -1.0

    t = np.arange(K)
    loads = p.load_base * np.ones((K, B))
    if B and p.load_drift_amplitude:
        phases = rng.uniform(0, 2 * np.pi, B)
        loads = loads + p.load_drift_amplitude * np.sin(2 * np.pi * t[:, None] / p.load_drift_period + phases)
    w_traj = np.hstack([np.ones((K, 1)), loads])

    setpoints = np.zeros(n)
    setpoints[0::2] = p.setpoint_fraction * p_max
    phi_A = np.diag(np.repeat(costs, 2))
    phi_b = -phi_A @ setpoints
    phi_c = 0.5 * setpoints @ phi_A @ setpoints

    nominal = np.zeros(R)
    for i in range(N):
        if R:
            nominal[der_phase[i]] += setpoints[2 * i]
    for j in range(B):
        if R:
            nominal[j % R] -= p.load_base
    if band is None:
        center = nominal if p.vpp_center is None else np.full(R, p.vpp_center)
        lo = np.tile(center - p.vpp_halfwidth, (K, 1))
        hi = np.tile(center + p.vpp_halfwidth, (K, 1))
    else:
        band = np.asarray(band, float).reshape(K, 2)
        lo = np.tile(band[:, :1], (1, R))
        hi = np.tile(band[:, 1:], (1, R))

    # constraint rows: per VPP row (upper, lower), then per bus (upper, lower)
    M = 2 * R + 2 * B
    G = np.zeros((M, m))
    g0 = np.zeros((K, M))
    labels = []
    sv, sp = p.voltage_row_scale, p.vpp_row_scale
    for r in range(R):
        G[2 * r, r] = sp
        G[2 * r + 1, r] = -sp
        g0[:, 2 * r] = -sp * hi[:, r]
        g0[:, 2 * r + 1] = sp * lo[:, r]
        labels += [VPP, VPP]
    for j in range(B):
        row = 2 * R + 2 * j
        G[row, R + j] = sv
        G[row + 1, R + j] = -sv
        g0[:, row] = -sv * p.v_hi
        g0[:, row + 1] = sv * p.v_lo
        labels += [VOLT, VOLT]

    sets = tuple(Box([0.0, -p.q_max], [p_max[i], p.q_max]) for i in range(N))
    blocks = contiguous_blocks([2] * N)
    problem = FeedbackProblem(phi_A, phi_b, G, g0[0] if K else np.zeros(M), phi_c=phi_c,
                              blocks=blocks, input_sets=sets)
    plant = LinearPlant(C, U, w_traj, p.e_y, p.seed)
    meta = {
        "kind": "network",
        "n_ders": N, "m_voltage_buses": B, "vpp_rows": R,
        "vpp_output_rows": list(range(R)),
        "voltage_output_rows": list(range(R, R + B)),
        "v_lo": p.v_lo, "v_hi": p.v_hi,
        "voltage_row_scale": sv, "vpp_row_scale": sp,
        "der_setpoints": setpoints.tolist(),
        "nominal_aggregate": nominal.tolist(),
        "seed": p.seed,
    }
    return ScenarioTimeline(problem, plant, None, g0, tuple(labels),
                            np.full(M, p.lambda_max), "network", meta)


def band_trace(timeline: ScenarioTimeline) -> np.ndarray:
    """``(K, 2)`` VPP bounds of the first VPP row, recovered from ``g0``."""
    rows = timeline.rows(VPP)
    sp = timeline.metadata.get("vpp_row_scale", 1.0)
    if len(rows) < 2:
        return np.zeros((timeline.horizon, 0))
    hi = -timeline.g0_traj[:, rows[0]] / sp
    lo = timeline.g0_traj[:, rows[1]] / sp
    return np.column_stack([lo, hi])


def vpp_step_scenario(params: NetworkParams, step_times: Sequence[int],
                      step_levels: Sequence[float], base_level: float | None = None) -> ScenarioTimeline:
    """Network whose VPP band center jumps to ``step_levels[i]`` at ``step_times[i]``.

    ``base_level`` is the initial band center (default: the nominal aggregate
    at the DER setpoints).
    """
    K = params.horizon
    step_times = list(step_times)
    if len(step_times) != len(step_levels):
        raise ValueError("step_times and step_levels must have equal length")
    if any(b <= a for a, b in zip(step_times, step_times[1:])):
        raise ValueError("step_times must be strictly increasing")
    if any(not 0 < s < K for s in step_times):
        raise ValueError("step_times must lie inside the horizon")
    if base_level is None:
        base_level = synth_network(NetworkParams(**{**params.__dict__, "horizon": 1})) \
            .metadata["nominal_aggregate"][0] if params.vpp_rows else 0.0
    centers = np.full(K, float(base_level))
    for s, lvl in zip(step_times, step_levels):
        centers[s:] = lvl
    band = np.column_stack([centers - params.vpp_halfwidth, centers + params.vpp_halfwidth])
    tl = synth_network(params, band)
    meta = dict(tl.metadata, kind="vpp_step", step_times=step_times,
                step_levels=[float(v) for v in step_levels], base_level=float(base_level))
    return ScenarioTimeline(tl.problem, tl.plant, None, tl.g0_traj, tl.labels,
                            tl.lambda_max, "vpp_step", meta)


VPP_STEP_DEFAULTS = {"vpp_halfwidth": 0.05, "vpp_row_scale": 0.5, "v_lo": 0.9, "v_hi": 1.1}


def default_vpp_step_scenario(seed: int = 0, **overrides) -> ScenarioTimeline:
    """Shipped comparison scenario: two band steps over a 600-step horizon.

    A narrow VPP band (half-width 0.05) on a feeder whose voltage limits are
    [0.9, 1.1]; ``overrides`` replace any :class:`NetworkParams` field.
    """
    params = NetworkParams(seed=seed, **{**VPP_STEP_DEFAULTS, **overrides})
    base = synth_network(NetworkParams(**{**params.__dict__, "horizon": 1})).metadata["nominal_aggregate"][0]
    K = params.horizon
    return vpp_step_scenario(params, [K // 3, 2 * K // 3], [base + 1.5, base - 1.0], base)


# -- config files -------------------------------------------------------------

def _tolist(a):
    return np.asarray(a).tolist()


def _to_config(tl: ScenarioTimeline) -> dict[str, Any]:
    pr, pl = tl.problem, tl.plant
    return {
        "name": tl.name,
        "problem": {
            "phi_A": _tolist(pr.phi_A), "phi_b": _tolist(pr.phi_b), "phi_c": pr.phi_c,
            "f0_Q": _tolist(pr.f0_Q), "f0_q": _tolist(pr.f0_q),
            "G": _tolist(pr.G), "g0": _tolist(pr.g0),
            "blocks": [list(b) for b in pr.blocks],
            "input_sets": [s.to_dict() for s in pr.input_sets],
        },
        "plant": {
            "C": _tolist(pl.C), "U": _tolist(pl.U), "w_traj": _tolist(pl.w_traj),
            "e_y": pl.e_y, "noise_seed": int(pl.noise_seed),
        },
        "timeline": {
            "phi_b_traj": _tolist(tl.phi_b_traj), "g0_traj": _tolist(tl.g0_traj),
            "labels": list(tl.labels), "lambda_max": _tolist(tl.lambda_max),
        },
        "metadata": _plain(tl.metadata),
    }


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_scenario(timeline: ScenarioTimeline, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(_to_config(timeline), fh, sort_keys=False, default_flow_style=None, width=120)


def _line_map(text: str) -> dict[tuple[str, ...], int]:
    """Map key paths to 1-based source lines."""
    out: dict[tuple[str, ...], int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                walk(v, path + (str(k.value),))

    if root is not None:
        walk(root, ())
    return out


def _get(cfg, lines, path, required=True, default=None):
    node = cfg
    for i, key in enumerate(path):
        if not isinstance(node, dict):
            raise ScenarioError("expected a mapping", ".".join(path[:i]), lines.get(tuple(path[:i])))
        if key not in node:
            if required:
                parent = tuple(path[:i])
                raise ScenarioError("missing required field", ".".join(path), lines.get(parent))
            return default
        node = node[key]
    return node


def scenario_from_config(cfg: dict[str, Any], text: str = "") -> ScenarioTimeline:
    lines = _line_map(text)
    if not isinstance(cfg, dict):
        raise ScenarioError("top level must be a mapping", None, 1)

    def arr(path, required=True, default=None, ndim=None):
        val = _get(cfg, lines, path, required, default)
        if val is None:
            return None
        try:
            a = np.asarray(val, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"not numeric: {exc}", ".".join(path), lines.get(tuple(path))) from exc
        if ndim == 2 and a.ndim != 2:
            if a.size == 0:
                a = a.reshape(0, 0)
            else:
                raise ScenarioError("expected a matrix (list of rows)", ".".join(path), lines.get(tuple(path)))
        return a

    phi_A = arr(("problem", "phi_A"), ndim=2)
    phi_b = arr(("problem", "phi_b"))
    C = arr(("plant", "C"), ndim=2)
    U = arr(("plant", "U"), ndim=2)
    w_traj = arr(("plant", "w_traj"), ndim=2)
    n = phi_A.shape[0]
    if C.size == 0:
        C = C.reshape(0, n)
    m = C.shape[0]
    if U.size == 0:
        U = U.reshape(m, -1) if m else np.zeros((0, w_traj.shape[1] if w_traj.ndim == 2 else 1))
    G = arr(("problem", "G"), False, None)
    G = np.zeros((0, m)) if G is None or G.size == 0 else G.reshape(-1, m)
    M = G.shape[0]
    g0 = arr(("problem", "g0"), False, np.zeros(M))
    sets_cfg = _get(cfg, lines, ("problem", "input_sets"), False, None)
    blocks = _get(cfg, lines, ("problem", "blocks"), False, None)
    try:
        sets = None if sets_cfg is None else tuple(set_from_dict(s) for s in sets_cfg)
        problem = FeedbackProblem(
            phi_A, phi_b, G, g0,
            arr(("problem", "f0_Q"), False, None), arr(("problem", "f0_q"), False, None),
            float(_get(cfg, lines, ("problem", "phi_c"), False, 0.0)),
            None if blocks is None else tuple(tuple(b) for b in blocks), sets)
    except (ValueError, KeyError, TypeError) as exc:
        raise ScenarioError(str(exc), "problem", lines.get(("problem",))) from exc
    try:
        plant = LinearPlant(C, U, w_traj, float(_get(cfg, lines, ("plant", "e_y"), False, 0.0)),
                            int(_get(cfg, lines, ("plant", "noise_seed"), False, 0)))
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc), "plant", lines.get(("plant",))) from exc
    pb = arr(("timeline", "phi_b_traj"), False, None)
    g0t = arr(("timeline", "g0_traj"), False, None)
    if g0t is not None and g0t.size == 0:
        g0t = None
    labels = _get(cfg, lines, ("timeline", "labels"), False, None) or ()
    lmax = arr(("timeline", "lambda_max"), False, None)
    if lmax is not None and lmax.size == 0:
        lmax = None
    try:
        return ScenarioTimeline(problem, plant, pb, g0t, tuple(labels), lmax,
                                str(cfg.get("name", "scenario")), dict(cfg.get("metadata") or {}))
    except ScenarioError as exc:
        raise ScenarioError(str(exc).split(" [")[0], exc.field, lines.get(tuple((exc.field or "").split(".")))) from exc
    except ValueError as exc:
        raise ScenarioError(str(exc), "timeline", lines.get(("timeline",))) from exc


def load_scenario(path) -> ScenarioTimeline:
    path = Path(path)
    text = path.read_text()
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"cannot parse {path.name}: {exc}", None,
                            mark.line + 1 if mark else None) from exc
    return scenario_from_config(cfg, text)


def export_timeline_csv(timeline: ScenarioTimeline, path) -> None:
    """One row per step: exogenous inputs and constraint offsets."""
    K = timeline.horizon
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wcols = [f"w{j}" for j in range(timeline.plant.w_traj.shape[1])]
        gcols = [f"g0_{j}_{t}" for j, t in enumerate(timeline.labels)]
        wr.writerow(["k"] + wcols + gcols)
        for k in range(K):
            wr.writerow([k] + [repr(float(v)) for v in timeline.plant.w_traj[k]]
                        + [repr(float(v)) for v in timeline.g0_traj[k]])


# -- drift --------------------------------------------------------------------

def drift_metrics(timeline: ScenarioTimeline, reg, gammas=None, samples: int = 5,
                  seed: int = 0, reference=None) -> tuple[float, float]:
    """``(sigma, e_f_hat)`` of a timeline.

    ``sigma`` is the largest step between consecutive reference saddle points.
    ``e_f_hat`` is the largest change between consecutive steps of the input
    cost gradient, the output cost gradient and the output-constraint values
    (the dual gradient), maximized over a few sampled points.
    """
    from .oracle import reference_trajectory

    ref = reference if reference is not None else reference_trajectory(timeline, reg, gammas)
    rng = np.random.default_rng(seed)
    pl = timeline.plant
    e_f = 0.0
    xs = rng.normal(size=(samples, timeline.n))
    for k in range(1, timeline.horizon):
        prev, cur = timeline.problem_at(k - 1), timeline.problem_at(k)
        for x in xs:
            y_prev = pl.C @ x + pl.U @ pl.w(k - 1)
            y_cur = pl.C @ x + pl.U @ pl.w(k)
            d_phi = np.linalg.norm(cur.grad_phi(x) - prev.grad_phi(x))
            d_f0 = np.linalg.norm(pl.C.T @ (cur.grad_f0(y_cur) - prev.grad_f0(y_prev)))
            d_g = np.linalg.norm(cur.g(y_cur) - prev.g(y_prev))
            e_f = max(e_f, d_phi, d_f0, d_g)
    return ref.sigma, float(e_f)
