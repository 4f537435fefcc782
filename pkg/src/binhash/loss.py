"""Weighted pairwise cross-entropy over code inner products.

For one pair with similarity label ``s`` and weight ``w`` the loss is

    w * (log(1 + exp(alpha * <u, v>)) - alpha * s * <u, v>)

where ``alpha`` is the bandwidth of the logistic link. It is evaluated both on
the continuous codes produced during training and, with the same weights, on
their sign-thresholded binary versions; the two totals converging to each
other is the signature of codes becoming exactly binary.

The softplus term is always computed in the overflow-safe form
``max(alpha*x, 0) + log1p(exp(-|alpha*x|))`` (what ``np.logaddexp(0, .)``
does), so the loss stays finite far beyond the ~709 threshold where a naive
``exp`` overflows in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .codes import sign_values


@dataclass(frozen=True)
class LossConfig:
    """Loss hyperparameters; ``alpha`` below 1 keeps the logistic link from saturating."""

    alpha: float = 0.2
    weighted: bool = True
    use_continuous_similarity: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass(frozen=True)
class LossReport:
    """Loss totals on continuous codes and on their binarized counterparts."""

    continuous_loss: float
    binary_loss: float
    pair_count: int

    def __post_init__(self):
        for name in ("continuous_loss", "binary_loss"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")

    @property
    def continuous_loss_mean(self) -> float:
        return self.continuous_loss / self.pair_count if self.pair_count else 0.0

    @property
    def binary_loss_mean(self) -> float:
        return self.binary_loss / self.pair_count if self.pair_count else 0.0


def adaptive_sigmoid(x, alpha: float):
    """Logistic function ``1 / (1 + exp(-alpha * x))``, overflow-safe."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return expit(alpha * np.asarray(x, dtype=np.float64))


def pair_loss(inner, similar, weight, alpha: float):
    """Loss of one pair given the code inner product. Broadcasts over arrays."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    x = alpha * np.asarray(inner, dtype=np.float64)
    value = np.asarray(weight, dtype=np.float64) * (
        np.logaddexp(0.0, x) - np.asarray(similar, dtype=np.float64) * x
    )
    return float(value) if value.ndim == 0 else value


def pair_grad(g_i, g_j, similar, weight, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`pair_loss` at ``inner = <g_i, g_j>`` w.r.t. both codes.

    ``d/dg_i = w * alpha * (sigmoid(alpha * <g_i, g_j>) - s) * g_j`` and
    symmetrically for ``g_j``.
    """
    gi = np.asarray(g_i, dtype=np.float64)
    gj = np.asarray(g_j, dtype=np.float64)
    if gi.shape != gj.shape or gi.ndim != 1:
        raise ValueError(f"codes must be 1-D and equal-length, got {gi.shape} and {gj.shape}")
    if not (np.isfinite(gi).all() and np.isfinite(gj).all()):
        raise ValueError("codes must be finite")
    coef = weight * alpha * (float(adaptive_sigmoid(gi @ gj, alpha)) - similar)
    return coef * gj, coef * gi


def batch_loss(pairs, codes, config: LossConfig) -> LossReport:
    """Sum :func:`pair_loss` over a pair list, on ``codes`` and on their signs.

    ``codes`` is an (N, K) array of continuous codes indexed by the pair
    positions; each pair's stored weight is applied to both totals.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2:
        raise ValueError(f"codes must be an (N, K) array, got shape {codes.shape}")
    signs = sign_values(codes).astype(np.float64)
    n = codes.shape[0]
    continuous_total = 0.0
    binary_total = 0.0
    for p in pairs:
        if not (0 <= p.i < n and 0 <= p.j < n):
            raise ValueError(f"pair ({p.i}, {p.j}) references a missing code (have {n})")
        continuous_total += pair_loss(codes[p.i] @ codes[p.j], p.similar, p.weight, config.alpha)
        binary_total += pair_loss(signs[p.i] @ signs[p.j], p.similar, p.weight, config.alpha)
    return LossReport(continuous_total, binary_total, len(pairs))


def _upper(matrix: np.ndarray) -> np.ndarray:
    a, b = np.triu_indices(matrix.shape[0], k=1)
    return matrix[a, b]


def dense_pair_losses(
    codes: np.ndarray, similar: np.ndarray, weights: np.ndarray, alpha: float
) -> tuple[float, float, int]:
    """Loss totals over all unordered pairs of a batch, from dense matrices.

    Returns ``(continuous_total, binary_total, pair_count)``; equivalent to
    :func:`batch_loss` over every in-batch pair but vectorized.
    """
    codes = np.asarray(codes, dtype=np.float64)
    s = _upper(np.asarray(similar, dtype=np.float64))
    w = _upper(np.asarray(weights, dtype=np.float64))
    x = alpha * _upper(codes @ codes.T)
    continuous_total = float(np.sum(w * (np.logaddexp(0.0, x) - s * x)))
    signs = sign_values(codes).astype(np.float64)
    xb = alpha * _upper(signs @ signs.T)
    binary_total = float(np.sum(w * (np.logaddexp(0.0, xb) - s * xb)))
    return continuous_total, binary_total, s.size


def dense_code_grad(
    codes: np.ndarray, similar: np.ndarray, weights: np.ndarray, alpha: float
) -> np.ndarray:
    """Gradient of the summed pair loss w.r.t. every code in the batch.

    ``similar`` and ``weights`` are symmetric (B, B) matrices whose diagonal is
    ignored. Row i of the result is the sum of :func:`pair_grad` contributions
    from every pair containing i.
    """
    codes = np.asarray(codes, dtype=np.float64)
    coef = np.asarray(weights, dtype=np.float64) * alpha * (
        expit(alpha * (codes @ codes.T)) - np.asarray(similar, dtype=np.float64)
    )
    np.fill_diagonal(coef, 0.0)
    return coef @ codes
