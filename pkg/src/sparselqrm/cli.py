"""Command line interface: ``sparselqrm <subcommand> [--config PATH] [--out DIR] [--seed N]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .experiment import (
    ConfigError,
    hard_threshold_demo,
    initial_gain,
    local_minima_demo,
    parse_config,
    run_experiment,
)
from .gradient import lqrm_cost
from .network import NetworkSpec, build_benchmark, erdos_renyi_adjacency, open_loop_radius
from .system import CostSpec, monte_carlo_simulate

logger = logging.getLogger("sparselqrm")


def _load_config(args, require_sweep: bool | None = None):
    if not args.config:
        raise ConfigError("--config", "a config file is required")
    path = Path(args.config)
    try:
        raw = io.read_json(path)
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from None
    cfg = parse_config(raw, base_dir=path.parent, seed=args.seed)
    if require_sweep and cfg.sweep is None:
        raise ConfigError("sweep", "the sweep subcommand needs a 'sweep' section")
    if require_sweep is False:
        cfg.sweep = None
    return cfg


def _out_dir(args, cfg=None) -> Path:
    out = args.out or (cfg.output_dir if cfg is not None else None) or "out"
    return Path(out)


def cmd_solve(args) -> dict:
    cfg = _load_config(args, require_sweep=False)
    return run_experiment(cfg, _out_dir(args, cfg))


def cmd_sweep(args) -> dict:
    cfg = _load_config(args, require_sweep=True)
    return run_experiment(cfg, _out_dir(args, cfg))


def cmd_network(args) -> dict:
    if args.config:
        raw = io.read_json(args.config)
        net = raw.get("network", raw)
    else:
        net = {}
    for key, val in (("n_nodes", args.nodes), ("noise_level", args.noise_level)):
        if val is not None:
            net[key] = val
    if args.seed is not None:
        net["seed"] = args.seed
    try:
        spec = NetworkSpec(**net)
    except (TypeError, ValueError) as exc:
        raise ConfigError("network", str(exc)) from None
    sys_ = build_benchmark(spec)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    io.save_system(out / "system.json", sys_)
    io.write_json(out / "adjacency.json", io.matrix_to_json(erdos_renyi_adjacency(spec.n_nodes, spec.p_er, spec.seed)))
    return {
        "n_states": sys_.n,
        "n_inputs": sys_.m,
        "p_er": spec.p_er,
        "alphas": sys_.alphas.tolist(),
        "betas": sys_.betas.tolist(),
        "open_loop_second_moment_radius": open_loop_radius(sys_),
        "path": str(out / "system.json"),
    }


def cmd_demo_threshold(args) -> dict:
    rep = hard_threshold_demo(args.threshold)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        io.write_json(Path(args.out) / "threshold_demo.json", rep)
    return rep


def cmd_demo_minima(args) -> dict:
    minima = local_minima_demo(args.lo, args.hi, args.points)
    return {"minima": minima, "count": len(minima)}


def cmd_validate(args) -> dict:
    cfg = _load_config(args)
    K = initial_gain(cfg)
    if args.gain:
        obj = io.read_json(args.gain)
        K = io.matrix_from_json(obj.get("best", obj.get("K", obj)) if isinstance(obj, dict) else obj, "gain")
    analytic = lqrm_cost(cfg.system, cfg.cost, K).J
    h = args.horizon or cfg.validation["horizon"]
    n = args.rollouts or cfg.validation["rollouts"]
    mc, se = monte_carlo_simulate(cfg.system, cfg.cost, K, h, n, cfg.seed)
    z = (mc - analytic) / se if se and np.isfinite(se) and se > 0 else None
    return {
        "analytic_J": analytic,
        "monte_carlo_J": io._num(mc),
        "monte_carlo_stderr": io._num(se),
        "z_score": z,
        "within_3_stderr": bool(z is not None and abs(z) <= 3),
        "horizon": h,
        "rollouts": n,
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparselqrm", description="Sparse feedback design for LQR with multiplicative noise")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", metavar="PATH", help="JSON experiment config")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        return p

    common(sub.add_parser("solve", help="single regularized solve")).set_defaults(func=cmd_solve)
    common(sub.add_parser("sweep", help="warm-started gamma sweep")).set_defaults(func=cmd_sweep)
    p = common(sub.add_parser("network", help="generate and save a benchmark network system"))
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--noise-level", default=None, choices=["low", "high"])
    p.set_defaults(func=cmd_network)
    p = common(sub.add_parser("demo-threshold", help="hard-thresholding counterexample"), config=False)
    p.add_argument("--threshold", type=float, default=0.4)
    p.set_defaults(func=cmd_demo_threshold)
    p = common(sub.add_parser("demo-minima", help="two-local-minima counterexample"), config=False)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=12.0)
    p.add_argument("--points", type=int, default=100_001)
    p.set_defaults(func=cmd_demo_minima)
    p = common(sub.add_parser("validate", help="Monte Carlo check of the analytic cost"))
    p.add_argument("--gain", metavar="PATH", help="gain JSON (defaults to the config's initial gain)")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--rollouts", type=int, default=None)
    p.set_defaults(func=cmd_validate)
    return parser


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "path": exc.path, "message": str(exc)}), file=sys.stderr)
        return 2
    except (io.FormatError, ValueError, RuntimeError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        if hasattr(exc, "path"):
            err["path"] = exc.path
        print(json.dumps(err), file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, default=_jsonable))
    return 0


if __name__ == "__main__":
    sys.exit(main())
