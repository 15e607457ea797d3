"""Linear systems with multiplicative noise, quadratic costs, and mean-square stability.

The closed-loop second moment ``X_t = E[x_t x_t^T]`` under ``u_t = K x_t`` evolves by
the linear map

    X -> (A+BK) X (A+BK)^T + sum_i alpha_i A_i X A_i^T + sum_j beta_j (B_j K) X (B_j K)^T

whose spectral radius decides mean-square stability.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

#: above this state dimension the spectral radius is found by Arnoldi iteration
POWER_ITERATION_DIM = 20


class DimensionError(ValueError):
    """Matrix dimensions are inconsistent."""


def _as_matrix(X, name: str) -> np.ndarray:
    X = np.array(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    if X.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d matrix, got shape {X.shape}")
    return X


def symmetrize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class NoiseTerm:
    """One multiplicative noise channel: variance and direction matrix."""

    variance: float
    matrix: np.ndarray


def _noise_list(terms, shape: tuple[int, int], name: str) -> tuple[NoiseTerm, ...]:
    out = []
    for idx, term in enumerate(terms or ()):
        if isinstance(term, NoiseTerm):
            var, mat = term.variance, term.matrix
        else:
            var, mat = term
        var = float(var)
        mat = _as_matrix(mat, f"{name}[{idx}]")
        if var < 0 or not np.isfinite(var):
            raise ValueError(f"{name}[{idx}] variance must be finite and >= 0, got {var}")
        if mat.shape != shape:
            raise DimensionError(f"{name}[{idx}] has shape {mat.shape}, expected {shape}")
        mat.setflags(write=False)
        out.append(NoiseTerm(var, mat))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class MultiplicativeNoiseSystem:
    """Discrete-time system ``x+ = (A + sum d_i A_i) x + (B + sum g_j B_j) u``.

    The noises ``d_i`` and ``g_j`` are zero mean, independent, i.i.d. over
    time with variances ``alpha_i`` and ``beta_j``.  ``state_noise`` and
    ``input_noise`` accept ``(variance, matrix)`` pairs or :class:`NoiseTerm`.
    """

    A: np.ndarray
    B: np.ndarray
    state_noise: tuple[NoiseTerm, ...] = ()
    input_noise: tuple[NoiseTerm, ...] = ()

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if B.shape[0] != n:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {n}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "state_noise", _noise_list(self.state_noise, A.shape, "state_noise"))
        object.__setattr__(self, "input_noise", _noise_list(self.input_noise, B.shape, "input_noise"))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def alphas(self) -> np.ndarray:
        return np.array([t.variance for t in self.state_noise])

    @property
    def betas(self) -> np.ndarray:
        return np.array([t.variance for t in self.input_noise])

    @property
    def is_deterministic(self) -> bool:
        return all(t.variance == 0 for t in self.state_noise + self.input_noise)

    def without_noise(self) -> "MultiplicativeNoiseSystem":
        return MultiplicativeNoiseSystem(self.A, self.B)

    def with_variances(self, alphas: Sequence[float], betas: Sequence[float]) -> "MultiplicativeNoiseSystem":
        """Copy of the system with the noise variances replaced."""
        if len(alphas) != len(self.state_noise) or len(betas) != len(self.input_noise):
            raise DimensionError("variance count does not match the number of noise terms")
        return MultiplicativeNoiseSystem(
            self.A,
            self.B,
            tuple(NoiseTerm(a, t.matrix) for a, t in zip(alphas, self.state_noise)),
            tuple(NoiseTerm(b, t.matrix) for b, t in zip(betas, self.input_noise)),
        )

    def closed_loop(self, K) -> np.ndarray:
        return self.A + self.B @ check_gain(self, K)


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Quadratic stage cost weights and the initial-state covariance."""

    Q: np.ndarray
    R: np.ndarray
    Sigma0: np.ndarray

    def __post_init__(self):
        mats = {}
        for name in ("Q", "R", "Sigma0"):
            X = _as_matrix(getattr(self, name), name)
            if X.shape[0] != X.shape[1]:
                raise DimensionError(f"{name} must be square, got shape {X.shape}")
            if not np.all(np.isfinite(X)):
                raise ValueError(f"{name} has non-finite entries")
            X = symmetrize(X)
            X.setflags(write=False)
            mats[name] = X
        if mats["Q"].shape != mats["Sigma0"].shape:
            raise DimensionError("Q and Sigma0 must have the same shape")
        tol = 1e-10
        for name, strict in (("Q", False), ("R", True), ("Sigma0", False)):
            X = mats[name]
            lam = np.linalg.eigvalsh(X).min()
            scale = max(1.0, np.abs(X).max())
            if strict and lam <= tol * scale:
                raise ValueError(f"{name} must be positive definite (min eigenvalue {lam:.3e})")
            if not strict and lam < -tol * scale:
                raise ValueError(f"{name} must be positive semidefinite (min eigenvalue {lam:.3e})")
            object.__setattr__(self, name, X)

    @classmethod
    def identity(cls, n: int, m: int) -> "CostSpec":
        return cls(np.eye(n), np.eye(m), np.eye(n))

    def check(self, sys: MultiplicativeNoiseSystem) -> None:
        if self.Q.shape != (sys.n, sys.n):
            raise DimensionError(f"Q has shape {self.Q.shape}, system has n={sys.n}")
        if self.R.shape != (sys.m, sys.m):
            raise DimensionError(f"R has shape {self.R.shape}, system has m={sys.m}")


def check_gain(sys: MultiplicativeNoiseSystem, K) -> np.ndarray:
    """Validate a gain ``K`` (m x n) against ``sys`` and return it as an array."""
    K = np.asarray(K, dtype=float)
    if K.ndim == 0 and sys.m == 1 and sys.n == 1:
        K = K.reshape(1, 1)
    if K.shape != (sys.m, sys.n):
        raise DimensionError(f"gain has shape {K.shape}, expected {(sys.m, sys.n)}")
    if not np.all(np.isfinite(K)):
        raise ValueError("gain has non-finite entries")
    return K


@dataclass(frozen=True)
class StabilityReport:
    spectral_radius: float
    stable: bool
    operator_dim: int
    margin: float = field(default=0.0)

    def __bool__(self):
        return self.stable


def second_moment_map(sys: MultiplicativeNoiseSystem, K, X: np.ndarray) -> np.ndarray:
    """Apply the closed-loop second-moment map to ``X`` without vectorizing."""
    K = check_gain(sys, K)
    F = sys.A + sys.B @ K
    out = F @ X @ F.T
    for t in sys.state_noise:
        out += t.variance * (t.matrix @ X @ t.matrix.T)
    for t in sys.input_noise:
        BK = t.matrix @ K
        out += t.variance * (BK @ X @ BK.T)
    return out


def second_moment_adjoint_map(sys: MultiplicativeNoiseSystem, K, P: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`second_moment_map` under the trace inner product."""
    K = check_gain(sys, K)
    F = sys.A + sys.B @ K
    out = F.T @ P @ F
    for t in sys.state_noise:
        out += t.variance * (t.matrix.T @ P @ t.matrix)
    for t in sys.input_noise:
        BK = t.matrix @ K
        out += t.variance * (BK.T @ P @ BK)
    return out


def _kron(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    a, b = X.shape
    c, d = Y.shape
    return (X[:, None, :, None] * Y[None, :, None, :]).reshape(a * c, b * d)


def _state_noise_operator(sys: MultiplicativeNoiseSystem) -> np.ndarray:
    """``sum alpha_i A_i (x) A_i``, cached on the (immutable) system."""
    cached = sys.__dict__.get("_state_noise_op")
    if cached is None:
        n = sys.n
        cached = np.zeros((n * n, n * n))
        for t in sys.state_noise:
            if t.variance:
                cached += t.variance * _kron(t.matrix, t.matrix)
        cached.setflags(write=False)
        object.__setattr__(sys, "_state_noise_op", cached)
    return cached


def second_moment_matrix(sys: MultiplicativeNoiseSystem, K) -> np.ndarray:
    """Matrix of the second-moment map acting on row-major ``vec(X)``.

    ``second_moment_matrix(sys, K) @ X.ravel()`` equals
    ``second_moment_map(sys, K, X).ravel()``; the matrix is
    ``F(x)F + sum alpha_i A_i(x)A_i + sum beta_j (B_j K)(x)(B_j K)`` with ``F = A + BK``.
    """
    K = check_gain(sys, K)
    F = sys.A + sys.B @ K
    M = _kron(F, F)
    M += _state_noise_operator(sys)
    for t in sys.input_noise:
        if t.variance:
            BK = t.matrix @ K
            M += t.variance * _kron(BK, BK)
    return M


def spectral_radius(M: np.ndarray, large: bool | None = None) -> float:
    if M.size == 0:
        return 0.0
    if large is None:
        large = M.shape[0] > POWER_ITERATION_DIM ** 2
    if large:
        try:
            vals = spla.eigs(M, k=1, which="LM", return_eigenvectors=False, tol=1e-12)
            return float(np.abs(vals).max())
        except spla.ArpackNoConvergence:
            logger.debug("Arnoldi did not converge, falling back to dense eigenvalues")
    return float(np.abs(sla.eigvals(M)).max())


def is_mean_square_stable(sys: MultiplicativeNoiseSystem, K, margin: float = 0.0) -> StabilityReport:
    """Certify mean-square stability of ``u = K x`` applied to ``sys``.

    Stable means the spectral radius of the second-moment matrix is strictly
    below ``1 - margin``.
    """
    M = second_moment_matrix(sys, K)
    rho = spectral_radius(M, large=sys.n > POWER_ITERATION_DIM)
    return StabilityReport(rho, bool(rho < 1.0 - margin), M.shape[0], margin)


def monte_carlo_simulate(
    sys: MultiplicativeNoiseSystem,
    cost: CostSpec,
    K,
    horizon: int,
    rollouts: int,
    seed: int,
    chunk_size: int = 1000,
) -> tuple[float, float]:
    """Estimate the finite-horizon cost of ``u = K x`` by simulation.

    Noise draws are Gaussian, ``d_i ~ N(0, alpha_i)`` and ``g_j ~ N(0, beta_j)``,
    and ``x_0 ~ N(0, Sigma0)``. Rollouts are simulated in chunks of
    ``chunk_size``; chunk ``c`` draws from the ``c``-th child of
    ``SeedSequence(seed)`` so the result does not depend on evaluation order.

    Returns
    -------
    estimate, stderr
        Sample mean and standard error of ``sum_{t<horizon} x'Qx + u'Ru``.
        A trajectory that overflows yields ``(inf, inf)``.
    """
    if horizon < 1 or rollouts < 1:
        raise ValueError("horizon and rollouts must be >= 1")
    cost.check(sys)
    K = check_gain(sys, K)
    n = sys.n
    L0 = _psd_factor(cost.Sigma0)
    sa = np.sqrt(sys.alphas)
    sb = np.sqrt(sys.betas)
    A_i = np.array([t.matrix for t in sys.state_noise]).reshape(-1, n, n)
    BK_j = np.array([t.matrix @ K for t in sys.input_noise]).reshape(-1, n, n)
    F = sys.A + sys.B @ K
    QK = cost.Q + K.T @ cost.R @ K

    n_chunks = -(-rollouts // chunk_size)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    totals = np.empty(rollouts)
    with np.errstate(over="ignore", invalid="ignore"):
        for c, ss in enumerate(children):
            lo = c * chunk_size
            size = min(chunk_size, rollouts - lo)
            rng = np.random.default_rng(ss)
            x = rng.standard_normal((size, n)) @ L0.T
            acc = np.zeros(size)
            for _ in range(horizon):
                acc += np.einsum("ri,ij,rj->r", x, QK, x)
                xn = x @ F.T
                if len(sa):
                    d = rng.standard_normal((size, len(sa))) * sa
                    xn += np.einsum("rk,kij,rj->ri", d, A_i, x)
                if len(sb):
                    g = rng.standard_normal((size, len(sb))) * sb
                    xn += np.einsum("rk,kij,rj->ri", g, BK_j, x)
                x = xn
                if not np.all(np.isfinite(x)):
                    logger.warning("Monte Carlo trajectory diverged; gain is likely not mean-square stable")
                    return float("inf"), float("inf")
            totals[lo:lo + size] = acc
    if not np.all(np.isfinite(totals)):
        return float("inf"), float("inf")
    mean = float(totals.mean())
    stderr = float(totals.std(ddof=1) / np.sqrt(rollouts)) if rollouts > 1 else 0.0
    return mean, stderr


def _psd_factor(S: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L L^T = S`` for a PSD ``S``."""
    w, V = np.linalg.eigh(S)
    return V * np.sqrt(np.clip(w, 0.0, None))
