"""Regularized policy gradient, subgradient, and proximal gradient descent."""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from .gradient import (
    CostEval,
    gauss_newton_step,
    lqrm_cost,
    lqrm_gradient,
    natural_gradient_step,
)
from .regularizers import RegularizerSpec, UnsupportedProxError, reg_gradient, reg_prox, reg_value, supports_prox
from .solvers import DEFAULT_OPTIONS, SolveOptions
from .system import CostSpec, MultiplicativeNoiseSystem, check_gain

logger = logging.getLogger(__name__)

Method = Literal["gradient", "subgradient", "proximal"]
METHODS: tuple[str, ...] = ("gradient", "subgradient", "proximal")


class Termination(str, enum.Enum):
    GRAD_NORM = "grad_norm"
    BEST_HOLD = "best_hold"
    MAX_ITER = "max_iter"
    INFEASIBLE_START = "infeasible_start"
    FEASIBILITY_COLLAPSE = "feasibility_collapse"


@dataclass(frozen=True)
class OptimizerConfig:
    """Step size and stopping rules.

    The gradient method stops once ``||grad||_F < grad_norm_tol_coeff * m * n``;
    the subgradient and proximal methods stop once the best iterate has been
    held for ``best_hold_iterations``. An infeasible candidate step is retried
    with ``eta`` multiplied by ``feasibility_backoff``, at most ``max_backoffs``
    times, and the nominal ``eta`` is restored for the next iteration.
    """

    method: Method = "gradient"
    eta: float = 1e-3
    max_iterations: int = 10_000
    grad_norm_tol_coeff: float = 0.1
    best_hold_iterations: int = 100
    feasibility_backoff: float = 0.5
    max_backoffs: int = 60
    record_every: int = 1
    direction: Literal["gradient", "natural", "gauss_newton"] = "gradient"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.best_hold_iterations < 1:
            raise ValueError("best_hold_iterations must be >= 1")
        if not 0 < self.feasibility_backoff < 1:
            raise ValueError("feasibility_backoff must be in (0, 1)")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.direction not in ("gradient", "natural", "gauss_newton"):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass(frozen=True)
class SweepConfig:
    """Warm-started regularization sweep: stage ``s`` uses ``gamma0 * r_gamma**s`` and ``eta0 * r_eta**s``."""

    gamma0: float = 10.0
    r_gamma: float = math.sqrt(2.0)
    eta0: float = 1e-5
    r_eta: float | None = None
    stages: int = 10

    def __post_init__(self):
        if self.r_eta is None:
            object.__setattr__(self, "r_eta", self.r_gamma ** (-(2.0 ** 0.25)))
        if not (self.gamma0 > 0 and self.r_gamma > 1 and self.eta0 > 0 and self.r_eta > 0):
            raise ValueError("sweep parameters must be positive with r_gamma > 1")
        if self.stages < 1:
            raise ValueError("stages must be >= 1")

    def gamma(self, stage: int) -> float:
        return self.gamma0 * self.r_gamma ** stage

    def eta(self, stage: int) -> float:
        return self.eta0 * self.r_eta ** stage


@dataclass(frozen=True)
class IterateRecord:
    iteration: int
    J: float
    reg: float
    C: float
    grad_norm: float
    eta: float


@dataclass
class RunResult:
    final_gain: np.ndarray
    best_gain: np.ndarray
    trajectory: list[IterateRecord]
    termination: Termination
    wall_time: float
    best_iteration: int = 0
    best_cost: float = math.inf
    gamma: float = 0.0
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def best_record(self) -> IterateRecord | None:
        for rec in self.trajectory:
            if rec.iteration == self.best_iteration:
                return rec
        return None


#: called as ``callback(iteration, K, cost_eval)`` at every iterate
Callback = Callable[[int, np.ndarray, CostEval], None]


def _total(J: float, reg: RegularizerSpec, K: np.ndarray) -> tuple[float, float]:
    r = reg_value(K, reg)
    return r, J + reg.gamma * r


def _check_setup(method: str, reg: RegularizerSpec, config: OptimizerConfig) -> None:
    if method == "gradient" and reg.gamma > 0 and not reg.smooth:
        raise ValueError("the gradient method needs a Huber-smoothed penalty (huber_phi > 0) when gamma > 0")
    if method in ("subgradient", "proximal") and reg.smooth:
        raise ValueError(f"the {method} method uses the exact penalty; set huber_phi = 0")
    if method == "proximal" and not supports_prox(reg.kind):
        raise UnsupportedProxError(f"no closed-form prox for {reg.kind.value!r}")
    if config.direction != "gradient" and reg.gamma > 0:
        raise ValueError("natural and Gauss-Newton directions are only available without regularization")


def _descent(
    method: str,
    sys: MultiplicativeNoiseSystem,
    cost: CostSpec,
    reg: RegularizerSpec,
    K0,
    config: OptimizerConfig,
    callback: Callback | None,
    solve_opts: SolveOptions,
) -> RunResult:
    _check_setup(method, reg, config)
    cost.check(sys)
    K = check_gain(sys, K0).copy()
    t0 = time.perf_counter()
    ev = lqrm_cost(sys, cost, K, solve_opts)
    if not ev.stable:
        logger.warning("initial gain is not mean-square stabilizing")
        return RunResult(K, K, [], Termination.INFEASIBLE_START, time.perf_counter() - t0, gamma=reg.gamma)

    gamma = reg.gamma
    grad_tol = config.grad_norm_tol_coeff * K.size
    r, C = _total(ev.J, reg, K)
    best_K, best_C, best_k = K.copy(), C, 0
    trajectory: list[IterateRecord] = []
    termination = Termination.MAX_ITER
    eta = config.eta
    k = 0

    while True:
        gJ = lqrm_gradient(sys, cost, K, ev)
        if config.direction == "natural":
            gJ = natural_gradient_step(sys, cost, K, ev)
        elif config.direction == "gauss_newton":
            gJ = gauss_newton_step(sys, cost, K, ev)

        if method == "proximal":
            direction = gJ
            step_norm = np.linalg.norm(K - reg_prox(K - eta * gJ, reg, eta * gamma)) / eta
        else:
            direction = gJ + gamma * reg_gradient(K, reg) if gamma > 0 else gJ
            step_norm = np.linalg.norm(direction)

        done = None
        if method == "gradient" and step_norm < grad_tol:
            done = Termination.GRAD_NORM
        elif method != "gradient" and k - best_k >= config.best_hold_iterations:
            done = Termination.BEST_HOLD
        elif k >= config.max_iterations:
            done = Termination.MAX_ITER

        if done is not None or k % config.record_every == 0:
            trajectory.append(IterateRecord(k, ev.J, r, C, float(step_norm), eta))
        if callback is not None:
            callback(k, K, ev)
        if done is not None:
            termination = done
            break

        # feasibility guard: shrink this step only until the candidate is stabilizing
        eta_try = eta
        for _ in range(config.max_backoffs + 1):
            if method == "proximal":
                cand = reg_prox(K - eta_try * direction, reg, eta_try * gamma)
            else:
                cand = K - eta_try * direction
            ev_c = lqrm_cost(sys, cost, cand, solve_opts)
            if ev_c.stable:
                break
            eta_try *= config.feasibility_backoff
        else:
            logger.warning("step size collapsed at iteration %d; stopping", k)
            termination = Termination.FEASIBILITY_COLLAPSE
            break
        if eta_try != eta:
            logger.debug("iteration %d: step backed off to %.3g", k, eta_try)

        K, ev, k = cand, ev_c, k + 1
        r, C = _total(ev.J, reg, K)
        if C < best_C:
            best_K, best_C, best_k = K.copy(), C, k

    return RunResult(
        final_gain=K,
        best_gain=best_K,
        trajectory=trajectory,
        termination=termination,
        wall_time=time.perf_counter() - t0,
        best_iteration=best_k,
        best_cost=best_C,
        gamma=gamma,
        iterations=k,
    )


def run_gradient(sys, cost, reg: RegularizerSpec, K0, config: OptimizerConfig,
                 callback: Callback | None = None, solve_opts: SolveOptions = DEFAULT_OPTIONS) -> RunResult:
    """Gradient descent on ``J(K) + gamma * ||K||_M`` with a Huber-smoothed penalty."""
    return _descent("gradient", sys, cost, reg, K0, config, callback, solve_opts)


def run_subgradient(sys, cost, reg: RegularizerSpec, K0, config: OptimizerConfig,
                    callback: Callback | None = None, solve_opts: SolveOptions = DEFAULT_OPTIONS) -> RunResult:
    """Step along ``grad J + gamma * subgradient`` and keep the lowest-cost iterate."""
    return _descent("subgradient", sys, cost, reg, K0, config, callback, solve_opts)


def run_proximal(sys, cost, reg: RegularizerSpec, K0, config: OptimizerConfig,
                 callback: Callback | None = None, solve_opts: SolveOptions = DEFAULT_OPTIONS) -> RunResult:
    """Proximal gradient: ``K <- prox_{eta*gamma*||.||_M}(K - eta * grad J(K))``."""
    return _descent("proximal", sys, cost, reg, K0, config, callback, solve_opts)


RUNNERS = {"gradient": run_gradient, "subgradient": run_subgradient, "proximal": run_proximal}


def run_method(method: str, sys, cost, reg, K0, config: OptimizerConfig, **kwargs) -> RunResult:
    if method not in RUNNERS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return RUNNERS[method](sys, cost, reg, K0, replace(config, method=method), **kwargs)


class SweepStageError(RuntimeError):
    def __init__(self, stage: int, gamma: float, cause: Exception, completed: list):
        self.stage = stage
        self.gamma = gamma
        self.completed = completed
        super().__init__(f"sweep stage {stage} (gamma={gamma:g}) failed: {cause}")


def gamma_sweep(
    sys: MultiplicativeNoiseSystem,
    cost: CostSpec,
    reg_template: RegularizerSpec,
    K_init,
    method: str,
    sweep: SweepConfig,
    config: OptimizerConfig,
    on_stage: Callable[[int, float, RunResult], None] | None = None,
    solve_opts: SolveOptions = DEFAULT_OPTIONS,
) -> list[tuple[float, RunResult]]:
    """Solve a sequence of increasingly regularized problems, warm-starting each at the previous best gain."""
    results: list[tuple[float, RunResult]] = []
    K = check_gain(sys, K_init)
    for s in range(sweep.stages):
        gamma, eta = sweep.gamma(s), sweep.eta(s)
        try:
            res = run_method(method, sys, cost, reg_template.with_gamma(gamma), K,
                             replace(config, eta=eta), solve_opts=solve_opts)
        except Exception as exc:
            raise SweepStageError(s, gamma, exc, results) from exc
        if res.termination is Termination.INFEASIBLE_START:
            raise SweepStageError(s, gamma, ValueError("initial gain is not stabilizing"), results)
        logger.info("stage %d gamma=%.4g: %s after %d iterations, C=%.6g",
                    s, gamma, res.termination.value, res.iterations, res.best_cost)
        results.append((gamma, res))
        if on_stage is not None:
            on_stage(s, gamma, res)
        K = res.best_gain
    return results


@dataclass(frozen=True)
class ConvergenceRate:
    ratios: list[float]
    bound: float
    gaps: list[float]
    converged: bool


def verify_convergence_rate(
    sys: MultiplicativeNoiseSystem,
    cost: CostSpec,
    K0,
    eta: float,
    iterations: int = 50,
    Kstar=None,
    gap_tol: float = 1e-13,
) -> ConvergenceRate:
    """Per-step ratios ``(J_{k+1} - J*) / (J_k - J*)`` of plain policy gradient descent.

    ``bound`` is ``1 - eta * smin(R) smin(Sigma0)^2 / ||Sigma_K*||``. Once the
    gap drops below ``gap_tol * J*`` the run is reported as converged and the
    remaining ratios are omitted.
    """
    from .solvers import lqrm_optimal

    if Kstar is None:
        Kstar, _ = lqrm_optimal(sys, cost)
    ev_star = lqrm_cost(sys, cost, Kstar)
    Jstar = ev_star.J
    bound = 1.0 - eta * np.linalg.eigvalsh(cost.R).min() * np.linalg.eigvalsh(cost.Sigma0).min() ** 2 / np.linalg.norm(
        ev_star.Sigma_K, 2
    )
    K = check_gain(sys, K0)
    ev = lqrm_cost(sys, cost, K)
    if not ev.stable:
        raise ValueError("initial gain is not mean-square stabilizing")
    gaps = [ev.J - Jstar]
    ratios: list[float] = []
    converged = gaps[0] <= gap_tol * abs(Jstar)
    for _ in range(iterations):
        if converged:
            break
        K = K - eta * lqrm_gradient(sys, cost, K, ev)
        ev = lqrm_cost(sys, cost, K)
        if not ev.stable:
            raise ValueError("step size too large: iterate left the stabilizing set")
        gap = ev.J - Jstar
        ratios.append(gap / gaps[-1])
        gaps.append(gap)
        converged = gap <= gap_tol * abs(Jstar)
    return ConvergenceRate(ratios, float(bound), gaps, converged)
