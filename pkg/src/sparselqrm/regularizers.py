"""Sparsity-promoting penalties on a gain matrix.

Every penalty is a sum over groups (entries, rows, or columns) of a norm.
Row groups act on actuators, column groups on sensors.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class UnsupportedProxError(ValueError):
    """No closed-form proximal map is available for this penalty."""


class RegKind(str, enum.Enum):
    L1 = "l1"
    ROW_MAX = "rowmax"
    COL_MAX = "colmax"
    GROUP_LASSO_ROW = "glrow"
    GROUP_LASSO_COL = "glcol"
    SPARSE_GROUP_LASSO_ROW = "sglrow"
    SPARSE_GROUP_LASSO_COL = "sglcol"

    @property
    def axis(self) -> int | None:
        """Axis along which a group norm is taken (1 = rows, 0 = columns)."""
        if self in (RegKind.ROW_MAX, RegKind.GROUP_LASSO_ROW, RegKind.SPARSE_GROUP_LASSO_ROW):
            return 1
        if self in (RegKind.COL_MAX, RegKind.GROUP_LASSO_COL, RegKind.SPARSE_GROUP_LASSO_COL):
            return 0
        return None


@dataclass(frozen=True)
class RegularizerSpec:
    """Penalty ``gamma * ||K||_M``, optionally Huber-smoothed with threshold ``huber_phi``.

    ``mu`` mixes the entrywise and group parts of the sparse group LASSO kinds,
    ``(1 - mu) ||K||_1 + mu ||K||_gl``, and is ignored otherwise.
    """

    kind: RegKind = RegKind.L1
    gamma: float = 0.0
    mu: float = 0.5
    huber_phi: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", RegKind(self.kind))
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must be in [0, 1], got {self.mu}")
        if self.huber_phi < 0:
            raise ValueError(f"huber_phi must be >= 0, got {self.huber_phi}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    @property
    def smooth(self) -> bool:
        return self.huber_phi > 0

    def with_gamma(self, gamma: float) -> "RegularizerSpec":
        return RegularizerSpec(self.kind, gamma, self.mu, self.huber_phi)


def _huber(a: np.ndarray, phi: float) -> np.ndarray:
    """Huber function of nonnegative magnitudes ``a``."""
    return np.where(a > phi, a - 0.5 * phi, a * a / (2.0 * phi))


def _group_norms(K: np.ndarray, axis: int, ord) -> np.ndarray:
    return np.linalg.norm(K, ord=ord, axis=axis)


def _l1_value(K, phi):
    a = np.abs(K)
    return float(np.sum(_huber(a, phi) if phi > 0 else a))


def _group_value(K, axis, ord, phi):
    g = _group_norms(K, axis, ord)
    return float(np.sum(_huber(g, phi) if phi > 0 else g))


def reg_value(K, spec: RegularizerSpec) -> float:
    """Value of ``||K||_M`` (Huber form if ``spec.huber_phi > 0``), without the ``gamma`` weight."""
    K = np.asarray(K, dtype=float)
    kind, phi = spec.kind, spec.huber_phi
    if kind is RegKind.L1:
        return _l1_value(K, phi)
    if kind in (RegKind.ROW_MAX, RegKind.COL_MAX):
        return _group_value(K, kind.axis, np.inf, phi)
    if kind in (RegKind.GROUP_LASSO_ROW, RegKind.GROUP_LASSO_COL):
        return _group_value(K, kind.axis, 2, phi)
    return (1.0 - spec.mu) * _l1_value(K, phi) + spec.mu * _group_value(K, kind.axis, 2, phi)


def _max_selection(K: np.ndarray, axis: int, scale: np.ndarray | None = None) -> np.ndarray:
    """Place ``sign`` of the largest-magnitude entry of each group, first index on ties."""
    Kg = K if axis == 1 else K.T
    G = np.zeros_like(Kg)
    idx = np.argmax(np.abs(Kg), axis=1)
    rows = np.arange(Kg.shape[0])
    vals = np.sign(Kg[rows, idx])
    if scale is not None:
        vals = vals * scale
    G[rows, idx] = vals
    return G if axis == 1 else G.T


def _group_normalize(K: np.ndarray, axis: int, floor: float) -> np.ndarray:
    """``K_group / max(||K_group||_2, floor)``; zero groups map to zero."""
    norms = _group_norms(K, axis, 2)
    denom = np.maximum(norms, floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(denom > 0, 1.0 / denom, 0.0)
    return K * (scale[:, None] if axis == 1 else scale[None, :])


def reg_subgradient(K, spec: RegularizerSpec) -> np.ndarray:
    """A subgradient of the exact (nonsmooth) penalty.

    Uses ``sign(0) = 0`` for entries and the zero vector for zero groups; the
    row/column max penalties put the sign on the first maximizing entry.
    """
    if spec.smooth:
        raise ValueError("reg_subgradient is for the exact penalty; use huber_gradient when huber_phi > 0")
    K = np.asarray(K, dtype=float)
    kind = spec.kind
    if kind is RegKind.L1:
        return np.sign(K)
    if kind in (RegKind.ROW_MAX, RegKind.COL_MAX):
        return _max_selection(K, kind.axis)
    if kind in (RegKind.GROUP_LASSO_ROW, RegKind.GROUP_LASSO_COL):
        return _group_normalize(K, kind.axis, 0.0)
    return (1.0 - spec.mu) * np.sign(K) + spec.mu * _group_normalize(K, kind.axis, 0.0)


def huber_gradient(K, spec: RegularizerSpec) -> np.ndarray:
    """Gradient of the Huber-smoothed penalty.

    Entrywise this is ``K_ij / max(|K_ij|, phi)`` and for 2-norm groups
    ``K_group / max(||K_group||_2, phi)``. The max-norm groups get the
    max-entry sign selection, scaled by ``||group||_inf / phi`` inside the
    quadratic cap.
    """
    phi = spec.huber_phi
    if phi <= 0:
        raise ValueError("huber_gradient requires huber_phi > 0")
    K = np.asarray(K, dtype=float)
    kind = spec.kind
    l1 = lambda: K / np.maximum(np.abs(K), phi)  # noqa: E731
    if kind is RegKind.L1:
        return l1()
    if kind in (RegKind.ROW_MAX, RegKind.COL_MAX):
        gmax = _group_norms(K, kind.axis, np.inf)
        return _max_selection(K, kind.axis, scale=np.minimum(gmax / phi, 1.0))
    if kind in (RegKind.GROUP_LASSO_ROW, RegKind.GROUP_LASSO_COL):
        return _group_normalize(K, kind.axis, phi)
    return (1.0 - spec.mu) * l1() + spec.mu * _group_normalize(K, kind.axis, phi)


def reg_gradient(K, spec: RegularizerSpec) -> np.ndarray:
    """Huber gradient when smoothed, otherwise the subgradient selection."""
    return huber_gradient(K, spec) if spec.smooth else reg_subgradient(K, spec)


def soft_threshold(V: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(V) * np.maximum(np.abs(V) - tau, 0.0)


def block_soft_threshold(V: np.ndarray, tau: float, axis: int) -> np.ndarray:
    """Shrink every row (``axis=1``) or column (``axis=0``) by ``max(1 - tau/||v||_2, 0)``."""
    norms = _group_norms(V, axis, 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(norms > tau, 1.0 - tau / norms, 0.0)
    return V * (shrink[:, None] if axis == 1 else shrink[None, :])


def reg_prox(V, spec: RegularizerSpec, tau: float) -> np.ndarray:
    """Proximal map of ``tau * ||.||_M`` at ``V``.

    Optimizers pass ``tau = eta * gamma``.
    """
    if spec.smooth:
        raise ValueError("reg_prox is defined for the exact penalty only (huber_phi = 0)")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    V = np.asarray(V, dtype=float)
    kind = spec.kind
    if kind in (RegKind.ROW_MAX, RegKind.COL_MAX):
        raise UnsupportedProxError(f"no closed-form prox for {kind.value!r}")
    if kind is RegKind.L1:
        return soft_threshold(V, tau)
    if kind in (RegKind.GROUP_LASSO_ROW, RegKind.GROUP_LASSO_COL):
        return block_soft_threshold(V, tau, kind.axis)
    return block_soft_threshold(soft_threshold(V, (1.0 - spec.mu) * tau), spec.mu * tau, kind.axis)


def supports_prox(kind: RegKind | str) -> bool:
    return RegKind(kind) not in (RegKind.ROW_MAX, RegKind.COL_MAX)


def group_count(shape: tuple[int, int], kind: RegKind | str) -> int:
    """Number of Huber-smoothed terms in the penalty (entries + groups for sparse group kinds)."""
    m, n = shape
    kind = RegKind(kind)
    if kind is RegKind.L1:
        return m * n
    size = m if kind.axis == 1 else n
    if kind in (RegKind.SPARSE_GROUP_LASSO_ROW, RegKind.SPARSE_GROUP_LASSO_COL):
        return m * n + size
    return size
