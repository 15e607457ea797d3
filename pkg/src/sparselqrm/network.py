"""Diffusion dynamics on Erdos-Renyi graphs with multiplicative noise."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.csgraph import connected_components

from .system import MultiplicativeNoiseSystem, NoiseTerm, is_mean_square_stable

logger = logging.getLogger(__name__)

#: open-loop second-moment spectral radius targeted by each named noise level
NOISE_LEVEL_RADIUS = {"low": 0.95, "high": 1.05}


def er_probability(n: int, c: float) -> float:
    """Edge probability ``(log n + c) / n``; ``P(connected) -> exp(-exp(-c))`` as ``n`` grows."""
    return (math.log(n) + c) / n


def is_connected(adjacency: np.ndarray) -> bool:
    ncomp, _ = connected_components(adjacency, directed=False)
    return ncomp == 1


def erdos_renyi_adjacency(n: int, p: float, seed: int, max_tries: int = 1000) -> np.ndarray:
    """Sample a connected undirected G(n, p) adjacency matrix, resampling until connected."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    for attempt in range(1, max_tries + 1):
        W = np.zeros((n, n))
        W[iu] = rng.random(len(iu[0])) < p
        W = W + W.T
        if is_connected(W):
            if attempt > 1:
                logger.debug("connected graph after %d draws", attempt)
            return W
    raise RuntimeError(f"no connected graph in {max_tries} draws with n={n}, p={p}")


def laplacian(adjacency: np.ndarray) -> np.ndarray:
    W = np.asarray(adjacency, dtype=float)
    return np.diag(W.sum(axis=1)) - W


def grounded_laplacian(adjacency: np.ndarray) -> np.ndarray:
    """Graph Laplacian with the first node's row and column removed."""
    W = np.asarray(adjacency, dtype=float)
    if W.shape[0] < 2 or W.shape[0] != W.shape[1]:
        raise ValueError("adjacency must be square with at least 2 nodes")
    if not is_connected(W):
        raise ValueError("graph is disconnected; the grounded Laplacian would be singular")
    return laplacian(W)[1:, 1:]


def tustin_discretize(A_c, B_c, ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear discretization ``A_d = (I - ts/2 A_c)^{-1}(I + ts/2 A_c)``, ``B_d = (I - ts/2 A_c)^{-1} B_c ts``."""
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    B_c = np.atleast_2d(np.asarray(B_c, dtype=float))
    if ts <= 0:
        raise ValueError("ts must be > 0")
    n = A_c.shape[0]
    M = np.eye(n) - 0.5 * ts * A_c
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(M, check_finite=True)
    if np.any(np.diag(lu[0]) == 0):
        raise np.linalg.LinAlgError("I - (ts/2) A_c is singular")
    A_d = sla.lu_solve(lu, np.eye(n) + 0.5 * ts * A_c)
    B_d = sla.lu_solve(lu, B_c) * ts
    return A_d, B_d


@dataclass(frozen=True)
class NetworkSpec:
    """Benchmark parameters.

    ``noise_level`` is ``"low"``/``"high"`` (calibrated to an open-loop
    second-moment radius of 0.95/1.05), a float target radius, or a pair
    ``(alpha, beta)`` of explicit common variances.
    """

    n_nodes: int = 51
    p_er: float | None = None
    seed: int = 0
    ts: float = 1.0
    noise_count_state: int = 2
    noise_count_input: int = 2
    noise_level: str | float | tuple[float, float] = "low"
    c: float = 7.0

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")
        if self.p_er is None:
            object.__setattr__(self, "p_er", min(er_probability(self.n_nodes, self.c), 0.999))
        if not 0 < self.p_er < 1:
            raise ValueError("p_er must be in (0, 1)")
        if self.ts <= 0:
            raise ValueError("ts must be > 0")
        if self.noise_count_state < 0 or self.noise_count_input < 0:
            raise ValueError("noise counts must be >= 0")


def _noise_directions(rng: np.random.Generator, count: int, shape) -> list[np.ndarray]:
    mats = []
    for _ in range(count):
        X = rng.standard_normal(shape)
        mats.append(X / np.linalg.norm(X))
    return mats


def open_loop_radius(sys: MultiplicativeNoiseSystem) -> float:
    return is_mean_square_stable(sys, np.zeros((sys.m, sys.n))).spectral_radius


def calibrate_noise_level(
    sys: MultiplicativeNoiseSystem,
    target: str | float = "stable_margin",
    margin: float = 0.05,
    tol: float = 1e-6,
    K=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Common variance ``s`` for every noise term so the second-moment radius hits a target.

    ``target`` is ``"stable_margin"`` (radius ``1 - margin``),
    ``"unstable_margin"`` (radius ``1 + margin``), or an explicit radius.
    The radius is evaluated under the gain ``K`` (open loop by default) and
    is nondecreasing in ``s``, so bisection applies.

    Returns
    -------
    alphas, betas
        Arrays filled with ``s``, matching the noise terms of ``sys``.
    """
    if target == "stable_margin":
        goal = 1.0 - margin
    elif target == "unstable_margin":
        goal = 1.0 + margin
    else:
        goal = float(target)
    if K is None:
        K = np.zeros((sys.m, sys.n))
    p, q = len(sys.state_noise), len(sys.input_noise)

    def radius(s: float) -> float:
        return is_mean_square_stable(sys.with_variances([s] * p, [s] * q), K).spectral_radius

    r0 = radius(0.0)
    if r0 >= goal:
        raise ValueError(f"noise-free radius {r0:.6g} already exceeds the target {goal:.6g}")
    lo, hi = 0.0, 1.0
    r_prev = r0
    while True:
        r_hi = radius(hi)
        if r_hi < r_prev - 1e-12:
            raise RuntimeError("second-moment radius decreased with the noise scale; bracket failed")
        if r_hi >= goal:
            break
        lo, r_prev = hi, r_hi
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("noise cannot reach the target radius; do the noise terms act on the state?")
    r_lo = r_prev
    while True:
        mid = 0.5 * (lo + hi)
        r = radius(mid)
        if r < r_lo - 1e-12 or r > r_hi + 1e-12:
            raise RuntimeError("second-moment radius is not monotone along the bisection path")
        if abs(r - goal) <= tol or hi - lo <= 1e-15 * max(1.0, hi):
            return np.full(p, mid), np.full(q, mid)
        if r < goal:
            lo, r_lo = mid, r
        else:
            hi, r_hi = mid, r


def build_benchmark(spec: NetworkSpec) -> MultiplicativeNoiseSystem:
    """Grounded-Laplacian diffusion network, Tustin-discretized, with an actuator at every node."""
    W = erdos_renyi_adjacency(spec.n_nodes, spec.p_er, spec.seed)
    Lg = grounded_laplacian(W)
    n = Lg.shape[0]
    A, B = tustin_discretize(-Lg, np.eye(n), spec.ts)
    # separate stream for noise directions so graph resampling does not shift them
    rng = np.random.default_rng([spec.seed, 1])
    A_dirs = _noise_directions(rng, spec.noise_count_state, (n, n))
    B_dirs = _noise_directions(rng, spec.noise_count_input, (n, n))
    base = MultiplicativeNoiseSystem(
        A, B, [NoiseTerm(0.0, X) for X in A_dirs], [NoiseTerm(0.0, X) for X in B_dirs]
    )
    level = spec.noise_level
    if isinstance(level, (tuple, list)):
        alpha, beta = level
        alphas, betas = np.full(len(A_dirs), float(alpha)), np.full(len(B_dirs), float(beta))
    elif isinstance(level, str):
        if level not in NOISE_LEVEL_RADIUS:
            raise ValueError(f"unknown noise level {level!r}")
        alphas, betas = calibrate_noise_level(base, NOISE_LEVEL_RADIUS[level], 0.0)
    else:
        alphas, betas = calibrate_noise_level(base, float(level), 0.0)
    return base.with_variances(alphas, betas)
