"""Experiment orchestration: configs, sparsity extraction, demos, and artifact bundles."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import io, svg
from .gradient import lqrm_cost
from .network import NetworkSpec, build_benchmark, calibrate_noise_level
from .optimizers import (
    METHODS,
    OptimizerConfig,
    RunResult,
    SweepConfig,
    SweepStageError,
    gamma_sweep,
    run_method,
)
from .regularizers import RegKind, RegularizerSpec, reg_value
from .solvers import lqrm_optimal, optimal_gain, riccati_value_iteration
from .system import CostSpec, MultiplicativeNoiseSystem, NoiseTerm, is_mean_square_stable, monte_carlo_simulate

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


# --------------------------------------------------------------------------- sparsity


@dataclass(frozen=True)
class SparsityReport:
    """Near-zero pattern of a gain.

    ``pattern`` is per entry (``m x n``), per row (``m``), or per column
    (``n``) depending on ``granularity``; ``True`` marks a sparse group.
    """

    pattern: np.ndarray
    sparsity_fraction: float
    granularity: str
    ratio: float

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        """Entrywise view of the pattern."""
        if self.granularity == "entry":
            return self.pattern
        if self.granularity == "row":
            return np.repeat(self.pattern[:, None], shape[1], axis=1)
        return np.repeat(self.pattern[None, :], shape[0], axis=0)

    def to_json(self) -> dict:
        return {
            "pattern": self.pattern.astype(int).tolist(),
            "sparsity_fraction": self.sparsity_fraction,
            "rule": {"threshold_ratio": self.ratio, "granularity": self.granularity},
        }


def sparsity_pattern(K, granularity: str = "entry", ratio: float = 0.05) -> SparsityReport:
    """Mark values below ``ratio`` times the largest value as sparse.

    Values are ``|K_ij|`` for ``"entry"`` and the 2-norms of rows or columns
    for ``"row"``/``"col"``. An all-zero gain is entirely sparse.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if granularity == "entry":
        v = np.abs(K)
    elif granularity == "row":
        v = np.linalg.norm(K, axis=1)
    elif granularity in ("col", "column"):
        granularity = "col"
        v = np.linalg.norm(K, axis=0)
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    vmax = v.max() if v.size else 0.0
    pattern = np.ones(v.shape, dtype=bool) if vmax == 0 else v < ratio * vmax
    return SparsityReport(pattern, float(pattern.mean()) if pattern.size else 1.0, granularity, ratio)


def granularity_for(kind: RegKind | str) -> str:
    axis = RegKind(kind).axis
    return {None: "entry", 1: "row", 0: "col"}[axis]


# --------------------------------------------------------------------------- demos

THRESHOLD_DEMO_A = np.array([[0.4, 0.9, -0.3], [0.7, -0.3, -0.4], [-0.2, 0.1, -0.8]])
THRESHOLD_DEMO_B = np.array([[0.2, -0.6], [-1.3, -1.6], [-0.3, -1.5]])


def hard_threshold_demo(threshold: float = 0.4, regularized_gammas=(0.1, 1.0)) -> dict:
    """Zero out small entries of the noise-free optimal gain and check closed-loop stability.

    Also runs a short L1-regularized subgradient solve at each of
    ``regularized_gammas`` from the optimal gain, whose best gains stay
    mean-square stabilizing.
    """
    sys = MultiplicativeNoiseSystem(THRESHOLD_DEMO_A, THRESHOLD_DEMO_B)
    cost = CostSpec.identity(3, 2)
    K_opt, P = lqrm_optimal(sys, cost)
    K_thr = np.where(np.abs(K_opt) < threshold, 0.0, K_opt)
    eig_max = float(np.abs(np.linalg.eigvals(sys.closed_loop(K_thr))).max())
    report = is_mean_square_stable(sys, K_thr)
    regularized = []
    for gamma in regularized_gammas:
        res = run_method(
            "subgradient", sys, cost, RegularizerSpec("l1", gamma), K_opt,
            OptimizerConfig(eta=1e-3, max_iterations=2000, best_hold_iterations=100),
        )
        regularized.append({
            "gamma": gamma,
            "K": res.best_gain.tolist(),
            "stable": is_mean_square_stable(sys, res.best_gain).stable,
            "spectral_radius": float(np.abs(np.linalg.eigvals(sys.closed_loop(res.best_gain))).max()),
        })
    return {
        "threshold": threshold,
        "K_optimal": K_opt.tolist(),
        "K_thresholded": K_thr.tolist(),
        "closed_loop_max_abs_eigenvalue": eig_max,
        "second_moment_radius": report.spectral_radius,
        "thresholded_stable": report.stable,
        "optimal_closed_loop_max_abs_eigenvalue": float(np.abs(np.linalg.eigvals(sys.closed_loop(K_opt))).max()),
        "regularized": regularized,
    }


def minima_demo_function(x):
    """Strongly convex ``x^2`` plus the gradient-dominated ``4((x-8)^2 + 3 sin^2(x-8))``."""
    return x**2 + 4.0 * ((x - 8.0) ** 2 + 3.0 * np.sin(x - 8.0) ** 2)


def local_minima(f: Callable, lo: float, hi: float, points: int = 100_001, tol: float = 1e-10) -> list[float]:
    """Locate interior local minima of ``f`` on ``[lo, hi]``.

    Brackets sign changes of the finite-difference slope on a uniform grid,
    then bisects on the central-difference derivative.
    """
    x = np.linspace(lo, hi, points)
    slope = np.diff(f(x))
    idx = np.nonzero((slope[:-1] < 0) & (slope[1:] >= 0))[0]
    h = 1e-6 * max(1.0, abs(hi - lo))

    def deriv(t):
        return (f(t + h) - f(t - h)) / (2 * h)

    out = []
    for i in idx:
        a, b = x[i], x[i + 2]
        if deriv(a) > 0 or deriv(b) < 0:
            out.append(float(x[i + 1]))
            continue
        while b - a > tol:
            mid = 0.5 * (a + b)
            if deriv(mid) < 0:
                a = mid
            else:
                b = mid
        out.append(float(0.5 * (a + b)))
    return out


def local_minima_demo(grid_lo: float = 0.0, grid_hi: float = 12.0, grid_points: int = 100_001) -> list[float]:
    return local_minima(minima_demo_function, grid_lo, grid_hi, grid_points)


def noise_awareness_instance(margin: float = 0.01) -> dict:
    """Scalar unstable plant with input noise where ignoring the noise destabilizes.

    The input-noise variance is calibrated so the noise-free LQR gain has
    second-moment radius ``1 + margin``; the noise-aware gain from the
    generalized Riccati equation is then checked for stability.
    """
    A, B = np.array([[2.0]]), np.array([[1.0]])
    cost = CostSpec.identity(1, 1)
    base = MultiplicativeNoiseSystem(A, B, (), [NoiseTerm(0.0, B)])
    K_lqr, _ = lqrm_optimal(base.without_noise(), cost)
    _, betas = calibrate_noise_level(base, 1.0 + margin, 0.0, K=K_lqr)
    sys = base.with_variances([], betas)
    K_lqrm, _ = lqrm_optimal(sys, cost)
    r_lqr = is_mean_square_stable(sys, K_lqr)
    r_lqrm = is_mean_square_stable(sys, K_lqrm)
    return {
        "system": sys,
        "K_lqr": K_lqr,
        "K_lqrm": K_lqrm,
        "lqr": r_lqr,
        "lqrm": r_lqrm,
    }


# --------------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    system: MultiplicativeNoiseSystem
    cost: CostSpec
    regularizer: RegularizerSpec
    optimizer: OptimizerConfig
    sweep: SweepConfig | None
    initial_gain: str | np.ndarray = "riccati"
    seed: int = 0
    validation: dict = field(default_factory=lambda: {"horizon": 500, "rollouts": 2000})
    output_dir: str | None = None
    source: dict = field(default_factory=dict)


_OPT_FIELDS = {"method", "eta", "max_iterations", "grad_norm_tol_coeff", "best_hold_iterations",
               "feasibility_backoff", "max_backoffs", "record_every", "direction"}
_SWEEP_FIELDS = {"gamma0", "r_gamma", "eta0", "r_eta", "stages"}
_NETWORK_FIELDS = {"n_nodes", "p_er", "seed", "ts", "noise_count_state", "noise_count_input", "noise_level", "c"}
_TOP_FIELDS = {"system", "network", "cost", "regularizer", "optimizer", "sweep", "initial_gain", "seed",
               "validation", "output"}


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be an object")
    return sec


def _unknown(sec: dict, allowed: set, path: str):
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else key, "unknown field")


def _build(path: str, factory, **kwargs):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def parse_config(cfg: dict, base_dir: Path | str = ".", seed: int | None = None) -> ExperimentConfig:
    """Validate a JSON config dict; errors carry the offending field path."""
    if not isinstance(cfg, dict):
        raise ConfigError("", "config must be a JSON object")
    _unknown(cfg, _TOP_FIELDS, "")
    has_sys, has_net = "system" in cfg, "network" in cfg
    if has_sys == has_net:
        raise ConfigError("system", "exactly one of 'system' or 'network' is required")
    base_dir = Path(base_dir)
    if has_sys:
        spec = cfg["system"]
        if isinstance(spec, dict) and "path" in spec:
            p = Path(spec["path"])
            p = p if p.is_absolute() else base_dir / p
            try:
                spec = io.read_json(p)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError("system.path", f"cannot read system file: {exc}") from None
        try:
            system = io.system_from_json(spec, "system")
        except io.FormatError as exc:
            raise ConfigError(exc.path, str(exc).split(": ", 1)[-1]) from None
    else:
        net = _section(cfg, "network")
        _unknown(net, _NETWORK_FIELDS, "network")
        kw = dict(net)
        if isinstance(kw.get("noise_level"), list):
            kw["noise_level"] = tuple(kw["noise_level"])
        nspec = _build("network", NetworkSpec, **kw)
        try:
            system = build_benchmark(nspec)
        except (ValueError, RuntimeError) as exc:
            raise ConfigError("network", str(exc)) from None

    n, m = system.n, system.m
    c = _section(cfg, "cost")
    _unknown(c, {"Q", "R", "Sigma0"}, "cost")
    mats = {}
    for key, default in (("Q", np.eye(n)), ("R", np.eye(m)), ("Sigma0", np.eye(n))):
        try:
            mats[key] = io.matrix_from_json(c[key], f"cost.{key}") if key in c else default
        except io.FormatError as exc:
            raise ConfigError(exc.path, str(exc).split(": ", 1)[-1]) from None
    cost = _build("cost", CostSpec, **mats)
    try:
        cost.check(system)
    except ValueError as exc:
        raise ConfigError("cost", str(exc)) from None

    r = _section(cfg, "regularizer")
    _unknown(r, {"kind", "gamma", "mu", "huber_phi"}, "regularizer")
    if "kind" in r and r["kind"] not in {k.value for k in RegKind}:
        raise ConfigError("regularizer.kind", f"unknown regularizer {r['kind']!r}; expected one of "
                          f"{sorted(k.value for k in RegKind)}")
    reg = _build("regularizer", RegularizerSpec, **r)

    o = _section(cfg, "optimizer")
    _unknown(o, _OPT_FIELDS, "optimizer")
    if "method" in o and o["method"] not in METHODS:
        raise ConfigError("optimizer.method", f"unknown method {o['method']!r}; expected one of {list(METHODS)}")
    opt = _build("optimizer", OptimizerConfig, **o)

    sweep = None
    if "sweep" in cfg:
        s = _section(cfg, "sweep")
        _unknown(s, _SWEEP_FIELDS, "sweep")
        sweep = _build("sweep", SweepConfig, **s)

    init = cfg.get("initial_gain", "riccati")
    if isinstance(init, str):
        if init not in ("riccati", "zero"):
            raise ConfigError("initial_gain", "must be 'riccati', 'zero', or a matrix")
    else:
        try:
            init = io.matrix_from_json(init, "initial_gain")
        except io.FormatError as exc:
            raise ConfigError(exc.path, str(exc).split(": ", 1)[-1]) from None
        if init.shape != (m, n):
            raise ConfigError("initial_gain", f"expected shape {(m, n)}, got {init.shape}")

    val = dict(horizon=500, rollouts=2000)
    v = _section(cfg, "validation")
    _unknown(v, {"horizon", "rollouts"}, "validation")
    val.update(v)
    for key in ("horizon", "rollouts"):
        if not isinstance(val[key], int) or val[key] < 1:
            raise ConfigError(f"validation.{key}", "must be a positive integer")

    out = _section(cfg, "output")
    _unknown(out, {"dir"}, "output")
    run_seed = cfg.get("seed", 0) if seed is None else seed
    if not isinstance(run_seed, int):
        raise ConfigError("seed", "must be an integer")
    return ExperimentConfig(system, cost, reg, opt, sweep, init, run_seed, val, out.get("dir"), cfg)


def initial_gain(config: ExperimentConfig) -> np.ndarray:
    sys, cost = config.system, config.cost
    if isinstance(config.initial_gain, np.ndarray):
        return config.initial_gain
    if config.initial_gain == "zero":
        return np.zeros((sys.m, sys.n))
    P = riccati_value_iteration(sys, cost).P
    return optimal_gain(sys, cost, P)


# --------------------------------------------------------------------------- bundles


def _stage_row(stage: int, gamma: float, res: RunResult, sys, cost, reg: RegularizerSpec) -> dict:
    K = res.best_gain
    J = lqrm_cost(sys, cost, K).J
    rv = reg_value(K, reg)
    rep = sparsity_pattern(K, granularity_for(reg.kind))
    return {
        "stage": stage,
        "gamma": gamma,
        "J": J,
        "reg": rv,
        "C": J + gamma * rv,
        "sparsity_fraction": rep.sparsity_fraction,
        "iterations": res.iterations,
        "termination": res.termination.value,
        "wall_time": res.wall_time,
    }


SUMMARY_COLUMNS = ("stage", "gamma", "J", "reg", "C", "sparsity_fraction", "iterations", "termination", "wall_time")


class _BundleWriter:
    def __init__(self, out: Path, config: ExperimentConfig):
        self.out = out
        self.config = config
        self.rows: list[dict] = []
        out.mkdir(parents=True, exist_ok=True)

    def _check_stable(self, K: np.ndarray, what: str):
        if not is_mean_square_stable(self.config.system, K).stable:
            raise RuntimeError(f"{what} is not mean-square stabilizing; refusing to write it")

    def stage(self, s: int, gamma: float, res: RunResult):
        cfg = self.config
        reg = cfg.regularizer.with_gamma(gamma)
        for K, what in ((res.final_gain, "final gain"), (res.best_gain, "best gain")):
            self._check_stable(K, f"stage {s} {what}")
        io.write_trajectory_csv(self.out / f"stage_{s:02d}_trajectory.csv", res.trajectory)
        io.write_json(self.out / f"stage_{s:02d}_gains.json", {
            "gamma": gamma,
            "termination": res.termination.value,
            "best_iteration": res.best_iteration,
            "final": io.matrix_to_json(res.final_gain),
            "best": io.matrix_to_json(res.best_gain),
        })
        rep = sparsity_pattern(res.best_gain, granularity_for(reg.kind))
        io.write_json(self.out / f"stage_{s:02d}_sparsity.json", {"gamma": gamma, **rep.to_json()})
        mask = rep.mask(res.best_gain.shape)
        title = f"gamma={gamma:.4g}, {100 * rep.sparsity_fraction:.1f}% sparse"
        (self.out / f"stage_{s:02d}_sparsity.svg").write_text(svg.pattern_grid(mask, title=title))
        (self.out / f"stage_{s:02d}_sparsity.txt").write_text(svg.pattern_ascii(mask))
        self.rows.append(_stage_row(s, gamma, res, cfg.system, cfg.cost, reg))
        self.write_summary()

    def write_summary(self):
        with open(self.out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
            w.writeheader()
            for row in sorted(self.rows, key=lambda r: r["gamma"]):
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        if self.rows:
            rows = sorted(self.rows, key=lambda r: r["gamma"])
            sp = [100 * r["sparsity_fraction"] for r in rows]
            (self.out / "summary_cost.svg").write_text(svg.line_plot(
                {self.config.optimizer.method: (sp, [r["J"] for r in rows])},
                "sparsity (%)", "LQRm cost (unpolished)", title="Cost vs sparsity"))
            (self.out / "summary_time.svg").write_text(svg.line_plot(
                {self.config.optimizer.method: ([r["gamma"] for r in rows], [r["wall_time"] for r in rows])},
                "gamma", "wall time (s)", title="Stage wall time"))


def run_experiment(config: ExperimentConfig, out_dir: Path | str) -> dict:
    """Run a single solve or a warm-started sweep and write the artifact bundle to ``out_dir``.

    Stage artifacts are flushed as each stage completes, so a failing stage
    leaves the earlier ones on disk along with ``error.json``.
    """
    out = Path(out_dir)
    writer = _BundleWriter(out, config)
    io.write_json(out / "config.json", config.source)
    io.write_json(out / "system.json", io.system_to_json(config.system))
    K0 = initial_gain(config)
    t0 = time.perf_counter()
    method = config.optimizer.method
    try:
        if config.sweep is None:
            res = run_method(method, config.system, config.cost, config.regularizer, K0, config.optimizer)
            if res.termination.value == "infeasible_start":
                raise RuntimeError("initial gain is not mean-square stabilizing")
            writer.stage(0, config.regularizer.gamma, res)
            final = res.best_gain
        else:
            results = gamma_sweep(config.system, config.cost, config.regularizer, K0, method,
                                  config.sweep, config.optimizer, on_stage=writer.stage)
            final = results[-1][1].best_gain
    except (SweepStageError, RuntimeError, ValueError) as exc:
        info = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SweepStageError):
            info["stage"] = exc.stage
        io.write_json(out / "error.json", info)
        raise

    analytic = lqrm_cost(config.system, config.cost, final).J
    h, n_roll = config.validation["horizon"], config.validation["rollouts"]
    mc, se = monte_carlo_simulate(config.system, config.cost, final, h, n_roll, config.seed)
    validation = {
        "analytic_J": analytic,
        "monte_carlo_J": io._num(mc),
        "monte_carlo_stderr": io._num(se),
        "z_score": io._num((mc - analytic) / se) if se and math.isfinite(se) and se > 0 else None,
        "horizon": h,
        "rollouts": n_roll,
        "seed": config.seed,
    }
    io.write_json(out / "validation.json", validation)
    summary = {"stages": writer.rows, "validation": validation, "wall_time": time.perf_counter() - t0}
    return summary
