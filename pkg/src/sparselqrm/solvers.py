"""Generalized Lyapunov and Riccati equations for multiplicative-noise LQR."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg as sla

from .system import (
    CostSpec,
    MultiplicativeNoiseSystem,
    check_gain,
    is_mean_square_stable,
    second_moment_adjoint_map,
    second_moment_map,
    second_moment_matrix,
    symmetrize,
)

logger = logging.getLogger(__name__)


class NotStabilizingError(ValueError):
    """The gain is not mean-square stabilizing."""

    def __init__(self, spectral_radius: float, message: str | None = None):
        self.spectral_radius = spectral_radius
        if message is None:
            message = f"gain is not mean-square stabilizing (spectral radius {spectral_radius:.6g})"
        super().__init__(message)


class NoConvergenceError(RuntimeError):
    """An iterative solve hit its iteration cap."""

    def __init__(self, iterations: int, residual: float, what: str = "iteration"):
        self.iterations = iterations
        self.residual = residual
        super().__init__(f"{what} did not converge after {iterations} iterations (residual {residual:.3e})")


@dataclass(frozen=True)
class SolveOptions:
    method: Literal["direct_vectorized", "fixed_point", "auto"] = "auto"
    tolerance: float = 1e-12
    max_iterations: int = 100_000
    auto_threshold_dim: int = 60

    def __post_init__(self):
        if self.method not in ("direct_vectorized", "fixed_point", "auto"):
            raise ValueError(f"unknown solve method {self.method!r}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def resolve(self, n: int) -> str:
        if self.method != "auto":
            return self.method
        return "direct_vectorized" if n <= self.auto_threshold_dim else "fixed_point"


DEFAULT_OPTIONS = SolveOptions()


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    iterations_used: int
    residual: float


def _rel_residual(X: np.ndarray, X_new: np.ndarray) -> float:
    return float(np.linalg.norm(X - X_new) / max(1.0, np.linalg.norm(X)))


class SecondMomentSolver:
    """Factorized ``I - M`` for one closed loop, solving both Lyapunov equations.

    Construction performs one LU factorization of the ``n^2 x n^2`` matrix and
    certifies stability: for the positive second-moment map, the solution of
    ``X = I + L(X)`` is positive definite exactly when the spectral radius is
    below one.
    """

    def __init__(self, sys: MultiplicativeNoiseSystem, K, tolerance: float = 1e-12):
        self.sys = sys
        self.K = check_gain(sys, K)
        self.tolerance = tolerance
        n = sys.n
        self._M = second_moment_matrix(sys, self.K)
        self.stable = False
        self._lu = None
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            try:
                self._lu = sla.lu_factor(np.eye(n * n) - self._M, check_finite=False)
            except (sla.LinAlgWarning, np.linalg.LinAlgError, ValueError):
                return
        if not np.all(np.isfinite(self._lu[0])):
            return
        X = self._solve(np.eye(n), trans=0)
        try:
            np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            return
        self.stable = True

    def spectral_radius(self) -> float:
        return is_mean_square_stable(self.sys, self.K).spectral_radius

    def _require_stable(self):
        if not self.stable:
            raise NotStabilizingError(self.spectral_radius())

    def _solve(self, C: np.ndarray, trans: int) -> np.ndarray:
        n = self.sys.n
        X = sla.lu_solve(self._lu, C.ravel(), trans=trans, check_finite=False).reshape(n, n)
        return symmetrize(X)

    def _refined(self, C: np.ndarray, trans: int, apply) -> np.ndarray:
        X = self._solve(C, trans)
        for _ in range(3):
            resid = C + apply(X) - X
            if np.linalg.norm(resid) <= self.tolerance * max(1.0, np.linalg.norm(X)):
                break
            X = X + self._solve(resid, trans)
        return X

    def covariance(self, Sigma0: np.ndarray) -> np.ndarray:
        """Solve ``S = Sigma0 + L(S)``."""
        self._require_stable()
        return self._refined(Sigma0, 0, lambda X: second_moment_map(self.sys, self.K, X))

    def cost_matrix(self, Q_K: np.ndarray) -> np.ndarray:
        """Solve ``P = Q_K + L*(P)``."""
        self._require_stable()
        return self._refined(Q_K, 1, lambda X: second_moment_adjoint_map(self.sys, self.K, X))


def _fixed_point(apply, C: np.ndarray, opts: SolveOptions, what: str) -> np.ndarray:
    X = C.copy()
    resid = np.inf
    for k in range(1, opts.max_iterations + 1):
        X_new = symmetrize(C + apply(X))
        resid = _rel_residual(X, X_new)
        X = X_new
        if resid <= opts.tolerance:
            logger.debug("%s fixed point converged in %d iterations", what, k)
            return X
        if not np.all(np.isfinite(X)):
            break
    raise NoConvergenceError(opts.max_iterations, resid, what)


def _check_stable_for_fixed_point(sys, K):
    report = is_mean_square_stable(sys, K)
    if not report.stable:
        raise NotStabilizingError(report.spectral_radius)


def solve_cost_lyapunov(
    sys: MultiplicativeNoiseSystem, cost: CostSpec, K, opts: SolveOptions = DEFAULT_OPTIONS
) -> np.ndarray:
    """Cost-to-go matrix ``P_K`` of the gain ``K``.

    Solves ``P = Q + K'RK + (A+BK)'P(A+BK) + sum alpha_i A_i'PA_i + sum beta_j K'B_j'PB_jK``.

    Raises
    ------
    NotStabilizingError
        If ``K`` is not mean-square stabilizing.
    NoConvergenceError
        If the fixed-point method exceeds ``opts.max_iterations``.
    """
    cost.check(sys)
    K = check_gain(sys, K)
    Q_K = cost.Q + K.T @ cost.R @ K
    if opts.resolve(sys.n) == "direct_vectorized":
        return SecondMomentSolver(sys, K, opts.tolerance).cost_matrix(Q_K)
    _check_stable_for_fixed_point(sys, K)
    return _fixed_point(lambda P: second_moment_adjoint_map(sys, K, P), Q_K, opts, "cost Lyapunov")


def solve_covariance_lyapunov(
    sys: MultiplicativeNoiseSystem, Sigma0, K, opts: SolveOptions = DEFAULT_OPTIONS
) -> np.ndarray:
    """Aggregate state covariance ``Sigma_K = sum_t E[x_t x_t']`` of the gain ``K``.

    Solves ``S = Sigma0 + (A+BK)S(A+BK)' + sum alpha_i A_i S A_i' + sum beta_j B_jK S K'B_j'``.
    """
    K = check_gain(sys, K)
    Sigma0 = symmetrize(np.asarray(Sigma0, dtype=float))
    if Sigma0.shape != (sys.n, sys.n):
        raise ValueError(f"Sigma0 has shape {Sigma0.shape}, expected {(sys.n, sys.n)}")
    if opts.resolve(sys.n) == "direct_vectorized":
        return SecondMomentSolver(sys, K, opts.tolerance).covariance(Sigma0)
    _check_stable_for_fixed_point(sys, K)
    return _fixed_point(lambda S: second_moment_map(sys, K, S), Sigma0, opts, "covariance Lyapunov")


def _input_curvature(sys: MultiplicativeNoiseSystem, R: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``R + B'PB + sum beta_j B_j'PB_j``."""
    G = R + sys.B.T @ P @ sys.B
    for t in sys.input_noise:
        G = G + t.variance * (t.matrix.T @ P @ t.matrix)
    return symmetrize(G)


def riccati_map(sys: MultiplicativeNoiseSystem, cost: CostSpec, P: np.ndarray) -> np.ndarray:
    """One step of value iteration on the generalized Riccati equation."""
    A, B = sys.A, sys.B
    out = cost.Q + A.T @ P @ A
    for t in sys.state_noise:
        out = out + t.variance * (t.matrix.T @ P @ t.matrix)
    G = _input_curvature(sys, cost.R, P)
    BPA = B.T @ P @ A
    out = out - BPA.T @ sla.solve(G, BPA, assume_a="pos")
    return symmetrize(out)


def riccati_value_iteration(
    sys: MultiplicativeNoiseSystem, cost: CostSpec, opts: SolveOptions = DEFAULT_OPTIONS
) -> RiccatiSolution:
    """Solve the generalized algebraic Riccati equation by value iteration from ``P = Q``.

    Raises :class:`NoConvergenceError` when the relative residual stays above
    ``opts.tolerance`` for ``opts.max_iterations`` sweeps, which is how an
    unstabilizable problem shows up.
    """
    cost.check(sys)
    P = cost.Q.copy()
    resid = np.inf
    for k in range(1, opts.max_iterations + 1):
        P_new = riccati_map(sys, cost, P)
        resid = _rel_residual(P_new, P)
        P = P_new
        if resid <= opts.tolerance:
            return RiccatiSolution(P, k, resid)
        if not np.all(np.isfinite(P)):
            break
    raise NoConvergenceError(opts.max_iterations, resid, "Riccati value iteration")


def optimal_gain(sys: MultiplicativeNoiseSystem, cost: CostSpec, P: np.ndarray) -> np.ndarray:
    """Greedy gain ``-(R + B'PB + sum beta_j B_j'PB_j)^{-1} B'PA`` for the value matrix ``P``."""
    P = symmetrize(np.asarray(P, dtype=float))
    G = _input_curvature(sys, cost.R, P)
    try:
        return -sla.solve(G, sys.B.T @ P @ sys.A, assume_a="pos")
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("input curvature matrix is singular") from exc


def lqrm_optimal(sys: MultiplicativeNoiseSystem, cost: CostSpec, opts: SolveOptions = DEFAULT_OPTIONS):
    """Return ``(K*, P*)`` for the noise-aware problem."""
    sol = riccati_value_iteration(sys, cost, opts)
    return optimal_gain(sys, cost, sol.P), sol.P
