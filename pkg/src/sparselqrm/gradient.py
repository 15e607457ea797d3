"""LQRm cost, exact policy gradient, and related step directions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .solvers import (
    DEFAULT_OPTIONS,
    NotStabilizingError,
    SecondMomentSolver,
    SolveOptions,
    _input_curvature,
    solve_cost_lyapunov,
    solve_covariance_lyapunov,
)
from .system import CostSpec, MultiplicativeNoiseSystem, check_gain, is_mean_square_stable


@dataclass(frozen=True)
class CostEval:
    """Result of evaluating ``J(K)``.

    For a gain that is not mean-square stabilizing ``J`` is ``inf`` and the
    matrices are ``None``.
    """

    J: float
    P_K: np.ndarray | None
    Sigma_K: np.ndarray | None
    stable: bool
    K: np.ndarray | None = None


def lqrm_cost(
    sys: MultiplicativeNoiseSystem, cost: CostSpec, K, opts: SolveOptions = DEFAULT_OPTIONS
) -> CostEval:
    """Evaluate ``J(K) = Tr(P_K Sigma0)``; unstable gains give ``J = inf`` instead of raising."""
    cost.check(sys)
    K = check_gain(sys, K)
    if opts.resolve(sys.n) == "fixed_point":
        if not is_mean_square_stable(sys, K).stable:
            return CostEval(float("inf"), None, None, False, K)
        P = solve_cost_lyapunov(sys, cost, K, opts)
        S = solve_covariance_lyapunov(sys, cost.Sigma0, K, opts)
        return CostEval(float(np.sum(P * cost.Sigma0)), P, S, True, K)
    solver = SecondMomentSolver(sys, K, opts.tolerance)
    if not solver.stable:
        return CostEval(float("inf"), None, None, False, K)
    P = solver.cost_matrix(cost.Q + K.T @ cost.R @ K)
    S = solver.covariance(cost.Sigma0)
    return CostEval(float(np.sum(P * cost.Sigma0)), P, S, True, K)


def cost_duality_gap(cost: CostSpec, ev: CostEval) -> float:
    """Relative gap between ``Tr(P_K Sigma0)`` and ``Tr((Q+K'RK) Sigma_K)``."""
    K = ev.K
    primal = np.sum(ev.P_K * cost.Sigma0)
    dual = np.sum((cost.Q + K.T @ cost.R @ K) * ev.Sigma_K)
    return float(abs(primal - dual) / max(abs(primal), abs(dual), 1e-300))


def _evaluated(sys, cost, K, ev: CostEval | None) -> CostEval:
    if ev is None:
        ev = lqrm_cost(sys, cost, K)
    if not ev.stable:
        raise NotStabilizingError(is_mean_square_stable(sys, K).spectral_radius)
    return ev


def input_curvature(sys: MultiplicativeNoiseSystem, cost: CostSpec, P_K: np.ndarray) -> np.ndarray:
    """``R_K = R + B'P_K B + sum beta_j B_j'P_K B_j``."""
    return _input_curvature(sys, cost.R, P_K)


def lqrm_gradient(sys: MultiplicativeNoiseSystem, cost: CostSpec, K, ev: CostEval | None = None) -> np.ndarray:
    """Exact policy gradient ``2 (R_K K + B'P_K A) Sigma_K``.

    Pass a precomputed ``ev`` from :func:`lqrm_cost` to avoid re-solving the
    Lyapunov equations.
    """
    K = check_gain(sys, K)
    ev = _evaluated(sys, cost, K, ev)
    P = ev.P_K
    E = input_curvature(sys, cost, P) @ K + sys.B.T @ P @ sys.A
    return 2.0 * E @ ev.Sigma_K


def fd_gradient(sys: MultiplicativeNoiseSystem, cost: CostSpec, K, epsilon: float | None = None) -> np.ndarray:
    """Central-difference gradient of ``J``, one entry at a time."""
    K = check_gain(sys, K)
    if epsilon is None:
        epsilon = 1e-6 * (1.0 + np.linalg.norm(K))
    G = np.empty_like(K)
    for idx in np.ndindex(*K.shape):
        E = np.zeros_like(K)
        E[idx] = epsilon
        Jp = lqrm_cost(sys, cost, K + E).J
        Jm = lqrm_cost(sys, cost, K - E).J
        if not (np.isfinite(Jp) and np.isfinite(Jm)):
            raise NotStabilizingError(
                float("nan"),
                f"perturbed gain at entry {idx} is not stabilizing; use a smaller epsilon than {epsilon:g}",
            )
        G[idx] = (Jp - Jm) / (2.0 * epsilon)
    return G


def natural_gradient_step(sys: MultiplicativeNoiseSystem, cost: CostSpec, K, ev: CostEval | None = None) -> np.ndarray:
    """Natural gradient ``grad J(K) Sigma_K^{-1}``."""
    K = check_gain(sys, K)
    ev = _evaluated(sys, cost, K, ev)
    grad = lqrm_gradient(sys, cost, K, ev)
    try:
        # X S = grad  <=>  S X' = grad'  (S symmetric)
        return sla.solve(ev.Sigma_K, grad.T, assume_a="pos").T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Sigma_K is singular; natural gradient undefined") from exc


def gauss_newton_step(sys: MultiplicativeNoiseSystem, cost: CostSpec, K, ev: CostEval | None = None) -> np.ndarray:
    """Gauss-Newton direction ``R_K^{-1} grad J(K) Sigma_K^{-1}``.

    A step of size 1/2 along the negative of this direction lands on the
    policy-improvement gain ``-R_K^{-1} B'P_K A``.
    """
    K = check_gain(sys, K)
    ev = _evaluated(sys, cost, K, ev)
    nat = natural_gradient_step(sys, cost, K, ev)
    return sla.solve(input_curvature(sys, cost, ev.P_K), nat, assume_a="pos")


@dataclass(frozen=True)
class GradientDomination:
    lhs: float
    rhs: float
    holds: bool


def gradient_domination_check(
    sys: MultiplicativeNoiseSystem,
    cost: CostSpec,
    K,
    Kstar,
    ev: CostEval | None = None,
    ev_star: CostEval | None = None,
) -> GradientDomination:
    """Compare ``J(K) - J(K*)`` with ``||Sigma_K*|| / (4 smin(R) smin(Sigma0)^2) ||grad J(K)||_F^2``."""
    smin_S0 = np.linalg.eigvalsh(cost.Sigma0).min()
    if smin_S0 <= 0:
        raise ValueError("Sigma0 must be positive definite for the gradient domination bound")
    ev = _evaluated(sys, cost, check_gain(sys, K), ev)
    ev_star = _evaluated(sys, cost, check_gain(sys, Kstar), ev_star)
    grad = lqrm_gradient(sys, cost, K, ev)
    smin_R = np.linalg.eigvalsh(cost.R).min()
    coeff = np.linalg.norm(ev_star.Sigma_K, 2) / (4.0 * smin_R * smin_S0**2)
    lhs = ev.J - ev_star.J
    rhs = float(coeff * np.sum(grad**2))
    return GradientDomination(float(lhs), rhs, bool(lhs <= rhs + 1e-9))
