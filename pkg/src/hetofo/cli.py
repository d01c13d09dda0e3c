"""Command-line experiment runner.

Subcommands
-----------
run           closed-loop run(s) of one configuration, with tracking report and
              plot data (CSV, optionally SVG charts)
compare       several named configurations side by side on a VPP scenario
analyze       monotonicity analysis and regularization recommendation
bisect-alpha  largest stable common step size

Exit status: 0 on success, 2 for configuration errors (bad manifest, missing
file, schema violation), 3 for numerical failures (divergence, oracle or
projection failure).

Manifest schema (YAML)::

    scenario: path | {generator: vpp_step, seed: int, params: {...}}
    horizon: int                    # optional; repeats a one-step scenario
    x0: [..]                        # optional initial input
    solver:
      estimator: exact | jacobian_feedback | zero_order
      alpha: float
      regularization: null | {p: float | auto, d: float | auto, mode: str}
      switching: bool
      max_steps: int
      membership_tol: float
      eps: float                    # zero-order probe size
    steps:                          # initial step sizes
      gamma: float                  # common value, or
      gamma_x: [..], gamma_lambda: [..]
    adaptive: null | {preset: standard, gamma_min, gamma_max, rules: {group: {...}}}
    exploration: {kind, amplitudes, periods, phase, seed, dt}
    noise: {e_y: float}
    seeds: [int, ...]
    output_dir: path
    compare:                        # for the compare subcommand
      - {name: str, <any top-level key above as an override>}

Relative paths in a manifest are resolved against the manifest's directory;
``output_dir`` is resolved against the working directory.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .adaptive import AdaptiveConfig, GroupRule, standard_config
from .comparison import RunMetrics, run_metrics
from .estimators import ExplorationSignal, MeasurementChannel
from .operators import StepSizeGroups, min_regularization, monotonicity_matrix, operator_analysis
from .oracle import (OracleError, contraction_run, estimate_contraction, reference_trajectory,
                     tracking_report)
from .projection import ProjectionError
from .qp_model import GAMMA_WEIGHTED, HOMOGENEOUS, RegularizationParams
from .scenario import (ScenarioError, ScenarioTimeline, band_trace,
                       default_vpp_step_scenario, load_scenario)
from .solvers import SolverConfig, SolverError, bisect_alpha, is_stable, run_online
from .svg import chart_from_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

DEFAULT_REG = 1e-3


class ConfigError(Exception):
    """Invalid manifest or command-line input."""


class NumericalError(Exception):
    """A numerical step of the experiment failed."""


# -- manifest -----------------------------------------------------------------

@dataclass
class RunManifest:
    raw: dict[str, Any]
    base_dir: Path
    seeds: list[int]
    output_dir: Path
    compare: list[dict[str, Any]] = field(default_factory=list)

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical manifest (keys sorted, JSON), output location excluded."""
        content = {k: v for k, v in self.raw.items() if k != "output_dir"}
        text = json.dumps(_canonical(content), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def comment(self) -> str:
        return f"manifest-sha256: {self.digest}"


def _canonical(obj):
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def load_manifest(path, overrides: list[str] = (), seed: int | None = None,
                  output_dir: str | None = None) -> RunManifest:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("manifest must be a mapping")
    return manifest_from_dict(raw, path.parent, overrides, seed, output_dir)


def manifest_from_dict(raw: dict, base_dir, overrides=(), seed=None, output_dir=None) -> RunManifest:
    raw = copy.deepcopy(raw)
    for item in overrides:
        _apply_override(raw, item)
    if seed is not None:
        raw["seeds"] = [int(seed)]
    if output_dir is not None:
        raw["output_dir"] = output_dir
    if "scenario" not in raw:
        raise ConfigError("manifest: missing required field 'scenario'")
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("manifest: 'seeds' must be a nonempty list of integers")
    out = Path(raw.get("output_dir", "out"))
    compare = raw.get("compare") or []
    if not isinstance(compare, list):
        raise ConfigError("manifest: 'compare' must be a list")
    names = [c.get("name") if isinstance(c, dict) else None for c in compare]
    if any(not isinstance(n, str) for n in names):
        raise ConfigError("manifest: every comparison entry needs a string 'name'")
    if len(set(names)) != len(names):
        raise ConfigError("manifest: comparison names must be unique")
    return RunManifest(raw, Path(base_dir), list(seeds), out, compare)


def _apply_override(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key.path=value")
    key, val = item.split("=", 1)
    node = raw
    parts = key.split(".")
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        node = node[p]
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} crosses a non-mapping field")
    try:
        node[parts[-1]] = yaml.safe_load(val)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {item!r}: {exc}") from exc


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k == "name":
            continue
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# -- building blocks from a manifest -------------------------------------------

def build_scenario(raw: dict, base_dir: Path, seed: int) -> ScenarioTimeline:
    entry = raw["scenario"]
    if isinstance(entry, str):
        path = (base_dir / entry) if not Path(entry).is_absolute() else Path(entry)
        if not path.is_file():
            raise ConfigError(f"scenario file not found: {path}")
        try:
            sc = load_scenario(path)
        except ScenarioError as exc:
            raise ConfigError(f"scenario {path.name}: {exc}") from exc
    elif isinstance(entry, dict):
        gen = entry.get("generator")
        params = dict(entry.get("params") or {})
        if gen != "vpp_step":
            raise ConfigError(f"unknown scenario generator {gen!r}")
        try:
            sc = default_vpp_step_scenario(int(entry.get("seed", seed)), **params)
        except TypeError as exc:
            raise ConfigError(f"scenario params: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"scenario params: {exc}") from exc
    else:
        raise ConfigError("manifest: 'scenario' must be a path or a generator mapping")
    noise = raw.get("noise") or {}
    if "e_y" in noise:
        sc = sc.with_noise(float(noise["e_y"]), seed)
    elif sc.plant.e_y > 0:
        sc = sc.with_noise(sc.plant.e_y, seed)
    horizon = raw.get("horizon")
    if horizon is not None:
        if not isinstance(horizon, int) or horizon < 1:
            raise ConfigError("manifest: 'horizon' must be a positive integer")
        if sc.horizon == 1 and horizon > 1:
            sc = sc.static(0, horizon)
        elif horizon > sc.horizon:
            raise ConfigError(f"manifest: horizon {horizon} exceeds the scenario's {sc.horizon}")
    return sc


def build_steps(raw: dict, sc: ScenarioTimeline, alpha: float) -> StepSizeGroups:
    st = raw.get("steps") or {}
    n, M = sc.n, sc.M
    try:
        if "gamma_x" in st or "gamma_lambda" in st:
            gx = np.asarray(st.get("gamma_x", np.ones(n)), float).reshape(-1)
            gl = np.asarray(st.get("gamma_lambda", np.ones(M)), float).reshape(-1)
            if gx.size == 1 and n != 1:
                gx = np.full(n, gx[0])
            if gl.size == 1 and M != 1:
                gl = np.full(M, gl[0])
            if gx.shape != (n,) or gl.shape != (M,):
                raise ConfigError(f"steps: expected {n} primal and {M} dual step sizes")
            return StepSizeGroups(alpha, gx, gl, sc.group_labels())
        return StepSizeGroups.uniform(n, M, alpha, float(st.get("gamma", 1.0)), sc.group_labels())
    except ValueError as exc:
        raise ConfigError(f"steps: {exc}") from exc


def build_regularization(entry, sc: ScenarioTimeline, gammas: StepSizeGroups):
    if entry is None:
        return None
    if not isinstance(entry, dict):
        raise ConfigError("solver.regularization must be null or a mapping")
    mode = entry.get("mode", HOMOGENEOUS)
    p, d = entry.get("p", DEFAULT_REG), entry.get("d", DEFAULT_REG)
    if p == "auto":
        info = operator_analysis(sc.qp_at(0), gammas, float(entry.get("margin", 1e-3)))
        p = info["p"]
    if d == "auto":
        d = p
    try:
        return RegularizationParams(float(p), float(d), mode)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver.regularization: {exc}") from exc


def build_solver(raw: dict, sc: ScenarioTimeline) -> tuple[SolverConfig, StepSizeGroups]:
    sv = raw.get("solver") or {}
    alpha = sv.get("alpha", 0.1)
    try:
        alpha = float(alpha)
    except (TypeError, ValueError) as exc:
        raise ConfigError("solver.alpha must be a number") from exc
    if not alpha > 0:
        raise ConfigError("solver.alpha must be positive")
    gammas = build_steps(raw, sc, alpha)
    reg = build_regularization(sv.get("regularization", {}), sc, gammas)
    try:
        cfg = SolverConfig(
            estimator=sv.get("estimator", "exact"), alpha=alpha, reg=reg,
            switching=bool(sv.get("switching", True)),
            max_steps=int(sv.get("max_steps", sc.horizon)),
            membership_tol=float(sv.get("membership_tol", 1e-10)),
            eps=float(sv.get("eps", 1e-2)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc
    return cfg, gammas


def build_adaptive(entry, gammas: StepSizeGroups) -> AdaptiveConfig | None:
    if entry is None:
        return None
    if not isinstance(entry, dict):
        raise ConfigError("adaptive must be null or a mapping")
    try:
        gmin = float(entry.get("gamma_min", 1e-6))
        gmax = float(entry.get("gamma_max", 1e3))
        groups = list(gammas.groups())
        if entry.get("preset", "standard") == "standard":
            base = standard_config(groups, gmin, gmax)
            rules = dict(base.rules)
        else:
            rules = {}
        for name, r in (entry.get("rules") or {}).items():
            rules[name] = GroupRule(**r)
        return AdaptiveConfig(rules, gamma_min=gmin, gamma_max=gmax)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"adaptive: {exc}") from exc


def build_exploration(entry, n: int) -> ExplorationSignal | None:
    if entry is None:
        return None
    try:
        amp = np.asarray(entry.get("amplitudes", 1.0), float).reshape(-1)
        if amp.size == 1:
            amp = np.full(n, amp[0])
        periods = entry.get("periods")
        return ExplorationSignal(entry.get("kind", "sinusoid_bank"), amp,
                                 None if periods is None else np.asarray(periods, float),
                                 entry.get("phase"), int(entry.get("seed", 0)),
                                 float(entry.get("dt", 1.0)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"exploration: {exc}") from exc


def _x0(raw, sc):
    x0 = raw.get("x0")
    if x0 is None:
        if "der_setpoints" in sc.metadata:
            return np.asarray(sc.metadata["der_setpoints"], float)
        return None
    if x0 == "setpoints":
        return np.asarray(sc.metadata["der_setpoints"], float)
    x0 = np.asarray(x0, float).reshape(-1)
    if x0.shape != (sc.n,):
        raise ConfigError(f"x0 must have {sc.n} entries")
    return x0


@dataclass
class Experiment:
    scenario: ScenarioTimeline
    config: SolverConfig
    gammas: StepSizeGroups
    adaptive: AdaptiveConfig | None
    exploration: ExplorationSignal | None
    x0: np.ndarray | None


def build_experiment(raw: dict, base_dir: Path, seed: int) -> Experiment:
    sc = build_scenario(raw, base_dir, seed)
    cfg, gammas = build_solver(raw, sc)
    adaptive = build_adaptive(raw.get("adaptive"), gammas)
    expl = build_exploration(raw.get("exploration"), sc.n)
    if cfg.estimator == "zero_order" and expl is None:
        raise ConfigError("zero_order estimator needs an 'exploration' section")
    return Experiment(sc, cfg, gammas, adaptive, expl, _x0(raw, sc))


def execute(exp: Experiment):
    channel = MeasurementChannel.from_plant(exp.scenario.plant)
    try:
        return run_online(exp.scenario, exp.config, exp.gammas, exp.adaptive, x0=exp.x0,
                          exploration=exp.exploration, channel=channel)
    except SolverError as exc:
        raise NumericalError(str(exc)) from exc


# -- output -------------------------------------------------------------------

def write_csv(path: Path, header: list[str], rows, comment: str) -> None:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_cell(v) for v in r])
    path.write_text(buf.getvalue())


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def plot_data(out: Path, sc: ScenarioTimeline, traj, report, comment: str) -> list[Path]:
    """CSV files for error, feeder power with band, voltages with bounds and step sizes."""
    written = []
    K = traj.steps
    p = out / "error.csv"
    write_csv(p, ["k", "tracking_error"], enumerate(report.error_series), comment)
    written.append(p)
    meta = sc.metadata
    if meta.get("vpp_output_rows"):
        band = band_trace(sc)
        r = meta["vpp_output_rows"][0]
        p = out / "feeder_power.csv"
        write_csv(p, ["k", "feeder_power", "band_lo", "band_hi"],
                  ((k, traj.y_true[k, r], band[k, 0], band[k, 1]) for k in range(K)), comment)
        written.append(p)
    if meta.get("voltage_output_rows"):
        rows = meta["voltage_output_rows"]
        p = out / "voltages.csv"
        write_csv(p, ["k"] + [f"v{j + 1}" for j in range(len(rows))] + ["v_lo", "v_hi"],
                  ([k, *traj.y_true[k, rows], meta["v_lo"], meta["v_hi"]] for k in range(K)),
                  comment)
        written.append(p)
    groups = traj.group_gamma()
    p = out / "step_sizes.csv"
    write_csv(p, ["k"] + [f"gamma_{g}" for g in groups],
              ([k, *(g[k] for g in groups.values())] for k in range(K + 1)), comment)
    written.append(p)
    return written


def _reference_and_report(exp: Experiment, traj):
    sc, cfg = exp.scenario, exp.config
    try:
        ref = reference_trajectory(sc, cfg.reg, exp.gammas, steps=traj.steps)
        qp0 = sc.qp_at(0)
        errs = contraction_run(qp0, replace(cfg, estimator="exact"), exp.gammas, ref.z_star[0],
                               steps=500, dual_box=sc.dual_box, x0=exp.x0)
    except (OracleError, ProjectionError, SolverError) as exc:
        raise NumericalError(str(exc)) from exc
    c_hat = estimate_contraction(errs)
    return ref, tracking_report(traj, ref, cfg.alpha, c_hat=c_hat)


def run_one(raw, base_dir, seed, out: Path, comment: str, with_report: bool = True,
            svg: bool = False):
    exp = build_experiment(raw, base_dir, seed)
    traj = execute(exp)
    out.mkdir(parents=True, exist_ok=True)
    traj_ref = None
    report = None
    if with_report:
        traj_ref, report = _reference_and_report(exp, traj)
        traj.meta["tracking_error"] = report.error_series
    (out / "trajectory.csv").write_text(traj.to_csv(header_comment=comment))
    if report is not None:
        (out / "tracking_report.txt").write_text(f"# {comment}\n{report.summary()}\n")
        for path in plot_data(out, exp.scenario, traj, report, comment):
            if svg:
                chart_from_csv(path)
    return exp, traj, report


# -- subcommands --------------------------------------------------------------

def cmd_run(args) -> int:
    man = load_manifest(args.manifest, args.set or [], args.seed, args.out)
    comment = man.comment()
    for seed in man.seeds:
        out = man.output_dir / f"seed_{seed}" if len(man.seeds) > 1 else man.output_dir
        exp, traj, report = run_one(man.raw, man.base_dir, seed, out, comment, svg=args.svg)
        print(f"seed {seed}: {traj.steps} steps -> {out}")
        print(f"  final x = {np.array2string(traj.x[-1], precision=8)}")
        if report is not None:
            print("  " + report.summary().replace("\n", "\n  "))
    return EXIT_OK


def _member_metrics(raw, base_dir, seed):
    exp = build_experiment(raw, base_dir, seed)
    try:
        traj = execute(exp)
    except NumericalError as exc:
        return exp, None, None, f"run failed: {exc}"
    divergent = None
    if exp.adaptive is None:
        ks = [0] + [k for k in exp.scenario.metadata.get("step_times", []) if k < exp.scenario.horizon]
        try:
            ok = all(is_stable(exp.scenario, exp.config, exp.gammas, 400, k) for k in ks)
        except (OracleError, SolverError, ProjectionError) as exc:
            raise NumericalError(str(exc)) from exc
        if not ok:
            divergent = "step size above the stability threshold"
    metrics = run_metrics(exp.scenario, traj)
    if divergent:
        metrics.divergent = True
        metrics.notes.append(divergent)
    return exp, traj, metrics, None


def cmd_compare(args) -> int:
    man = load_manifest(args.manifest, args.set or [], args.seed, args.out)
    if len(man.compare) < 2:
        raise ConfigError("compare needs at least two named configurations under 'compare'")
    comment = man.comment()
    jobs = [(c["name"], seed, _merge(man.raw, c)) for c in man.compare for seed in man.seeds]

    def job(item):
        name, seed, raw = item
        return name, seed, _member_metrics(raw, man.base_dir, seed)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(job, jobs))
    man.output_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    summary: dict[str, list[RunMetrics]] = {}
    for name, seed, (exp, traj, metrics, err) in results:
        sub = man.output_dir / name / f"seed_{seed}"
        sub.mkdir(parents=True, exist_ok=True)
        if traj is not None:
            (sub / "trajectory.csv").write_text(traj.to_csv(header_comment=comment))
        if metrics is None:
            metrics = RunMetrics([], [], float("nan"), float("nan"), True, [err])
        summary.setdefault(name, []).append(metrics)
        row = [name, seed, " ".join(map(str, metrics.iterations_to_band)),
               metrics.total_iterations_to_band, metrics.max_voltage_violation,
               metrics.cumulative_der_cost, int(metrics.divergent), "; ".join(metrics.notes)]
        rows.append(row)
    write_csv(man.output_dir / "comparison.csv",
              ["name", "seed", "iterations_to_band", "total_iterations_to_band",
               "max_voltage_violation", "cumulative_der_cost", "divergent", "notes"], rows, comment)
    ranked = sorted((n for n, ms in summary.items() if not any(m.divergent for m in ms)),
                    key=lambda n: (sum(m.total_iterations_to_band for m in summary[n]),
                                   max(m.max_voltage_violation for m in summary[n])))
    lines = [f"# {comment}", f"{'name':<16}{'seed':>6}{'iters-to-band':>18}"
             f"{'max V viol':>14}{'DER cost':>14}  flags"]
    for r in rows:
        lines.append(f"{r[0]:<16}{r[1]:>6}{r[2]:>18}{r[4]:>14.6g}{r[5]:>14.6g}  "
                     f"{'DIVERGENT ' + r[7] if r[6] else ''}")
    lines.append("ranking (excluding divergent): " + (", ".join(ranked) or "none"))
    text = "\n".join(lines) + "\n"
    (man.output_dir / "comparison.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def _parse_gamma(text: str | None, n: int, M: int) -> np.ndarray:
    if text is None:
        return np.ones(n + M)
    try:
        vals = np.asarray([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ConfigError(f"--gamma: {exc}") from exc
    if vals.size == 1:
        return np.full(n + M, vals[0])
    if vals.size != n + M:
        raise ConfigError(f"--gamma needs 1 or {n + M} values")
    if np.any(vals <= 0):
        raise ConfigError("--gamma values must be positive")
    return vals


def _scenario_for_cli(args):
    if args.manifest:
        man = load_manifest(args.manifest, args.set or [], args.seed)
        seed = man.seeds[0]
        exp = build_experiment(man.raw, man.base_dir, seed)
        return exp.scenario, exp.config, exp.gammas
    if not args.scenario:
        raise ConfigError("give --scenario or --manifest")
    path = Path(args.scenario)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        sc = load_scenario(path)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from exc
    return sc, None, None


def cmd_analyze(args) -> int:
    sc, cfg, gammas = _scenario_for_cli(args)
    if args.gamma is not None or gammas is None:
        g = _parse_gamma(args.gamma, sc.n, sc.M)
        alpha = args.alpha if args.alpha else (gammas.alpha if gammas is not None else 0.1)
        gammas = StepSizeGroups(alpha, g[:sc.n], g[sc.n:], sc.group_labels())
    qp = sc.qp_at(args.k)
    info = operator_analysis(qp, gammas, args.margin)
    V = monotonicity_matrix(info["W"], gammas.gamma)
    p, eta, lam_min = min_regularization(V, args.margin)
    verdict = "positive definite" if lam_min > 0 else "indefinite"
    np.set_printoptions(precision=6, suppress=True, linewidth=120)
    print(f"scenario      {sc.name} (n={sc.n}, M={sc.M}, K={sc.horizon})")
    if info["W"].shape[0] <= 12:
        print(f"W =\n{info['W']}")
        print(f"V = 1/2 (Gamma W + W' Gamma) =\n{V}")
    else:
        print(f"W             {info['W'].shape[0]}x{info['W'].shape[1]} (too large to print)")
    print(f"lambda_min(V) {lam_min:.6g}  ({verdict})")
    print(f"recommended p {p:.6g}  (margin {args.margin:g})")
    print(f"eta           {eta:.6g}")
    reg = RegularizationParams(p, p, GAMMA_WEIGHTED)
    try:
        ref = reference_trajectory(sc, reg, gammas)
        print(f"oracle sigma  {ref.sigma:.6g}")
        cfg_b = SolverConfig(alpha=gammas.alpha, reg=reg)
        a_bar = bisect_alpha(sc, cfg_b, gammas, iters=args.iters)
        print(f"suggested alpha (largest stable, bisection) {a_bar:.6g}")
    except (OracleError, SolverError, ProjectionError) as exc:
        raise NumericalError(str(exc)) from exc
    return EXIT_OK


def cmd_bisect(args) -> int:
    sc, cfg, gammas = _scenario_for_cli(args)
    if gammas is None or args.gamma is not None:
        g = _parse_gamma(args.gamma, sc.n, sc.M)
        gammas = StepSizeGroups(1.0, g[:sc.n], g[sc.n:], sc.group_labels())
    if cfg is None:
        cfg = SolverConfig(alpha=gammas.alpha, reg=RegularizationParams(DEFAULT_REG, DEFAULT_REG))
    ks = args.k if args.k else [0] + [k for k in sc.metadata.get("step_times", [])]
    try:
        a_bar = min(_bisect_at(sc, cfg, gammas, k, args) for k in ks)
    except (OracleError, SolverError, ProjectionError) as exc:
        raise NumericalError(str(exc)) from exc
    print(f"largest stable alpha: {a_bar:.6g}  (checked at k = {', '.join(map(str, ks))})")
    return EXIT_OK


def _bisect_at(sc, cfg, gammas, k, args):
    static = sc.static(k, 1)
    return bisect_alpha(static, cfg, gammas, lo=args.lo, hi=args.hi, iters=args.iters,
                        steps=args.steps)


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hetofo", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, manifest_required):
        p.add_argument("--manifest", "-m", required=manifest_required, help="run manifest (YAML)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a manifest field, e.g. solver.alpha=0.05 (repeatable)")
        p.add_argument("--seed", type=int, help="run a single seed instead of the manifest's")

    p = sub.add_parser("run", help="closed-loop run with tracking report and plot data")
    common(p, True)
    p.add_argument("--out", help="output directory (overrides the manifest)")
    p.add_argument("--svg", action="store_true", help="also write an SVG line chart per plot CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare named configurations on a VPP scenario")
    common(p, True)
    p.add_argument("--out", help="output directory (overrides the manifest)")
    p.add_argument("--jobs", type=int, default=1, help="concurrent members (default 1)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="monotonicity analysis and regularization advice")
    common(p, False)
    p.add_argument("--scenario", help="scenario file (instead of a manifest)")
    p.add_argument("--gamma", help="step sizes: one value or n+M comma-separated values")
    p.add_argument("--alpha", type=float, help="common step size used for the bisection start")
    p.add_argument("--margin", type=float, default=1e-3, help="regularization margin")
    p.add_argument("--k", type=int, default=0, help="time step to analyze")
    p.add_argument("--iters", type=int, default=20, help="bisection iterations")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bisect-alpha", help="largest stable common step size")
    common(p, False)
    p.add_argument("--scenario", help="scenario file (instead of a manifest)")
    p.add_argument("--gamma", help="step sizes: one value or n+M comma-separated values")
    p.add_argument("--k", type=int, action="append", help="time step(s) to check (repeatable)")
    p.add_argument("--lo", type=float, default=1e-4)
    p.add_argument("--hi", type=float, default=10.0)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--steps", type=int, default=400, help="iterations per stability test")
    p.set_defaults(func=cmd_bisect)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, OracleError, SolverError, ProjectionError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
