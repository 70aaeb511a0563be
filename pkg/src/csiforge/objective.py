"""Composite training loss: phase-invariant NMSE, correlation, smoothness.

Two flavours of every term live here: complex-numpy functions used for
evaluation, and graph versions (suffix ``_t``) that work on the real
``(B, 2, K, L)`` layout of the neural engine and return per-sample values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridcore import fro_norm_sq, inner_product
from .neural import engine as E


@dataclass(frozen=True)
class LossWeights:
    beta: float = 0.05   # smoothness
    gamma: float = 0.1   # correlation
    lambda_t: float = 1.0
    lambda_f: float = 1.0
    primary: str = "sp_nmse"
    reduction: str = "energy"   # batch aggregation: "energy" (ratio of expectations) or "mean"

    def __post_init__(self):
        for name in ("beta", "gamma", "lambda_t", "lambda_f"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")
        if self.primary not in ("sp_nmse", "nmse"):
            raise ValueError(f"primary loss must be 'sp_nmse' or 'nmse', got {self.primary!r}")
        if self.reduction not in ("energy", "mean"):
            raise ValueError(f"reduction must be 'energy' or 'mean', got {self.reduction!r}")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    pri: float
    smooth: float
    corr: float
    alpha_star: complex


def _reference_energy(H) -> float:
    e = fro_norm_sq(H)
    if e <= 0:
        raise ValueError("reference channel has zero energy")
    return e


def nmse(H_hat, H) -> float:
    H_hat, H = np.asarray(H_hat), np.asarray(H)
    e = _reference_energy(H)
    return fro_norm_sq(H_hat - H) / e


def sp_nmse(H_hat, H) -> tuple[float, complex]:
    """Error after the best complex rescaling of the reference.

    Returns ``(loss, alpha)`` with ``alpha = <H_hat, H> / ||H||^2``.
    """
    H_hat, H = np.asarray(H_hat), np.asarray(H)
    e = _reference_energy(H)
    alpha = inner_product(H_hat, H) / e
    return fro_norm_sq(H_hat - alpha * H) / e, alpha


def corr_loss(H_hat, H) -> float:
    H_hat, H = np.asarray(H_hat), np.asarray(H)
    a, b = fro_norm_sq(H_hat), fro_norm_sq(H)
    if a <= 0 or b <= 0:
        raise ValueError("correlation loss is undefined for a zero tensor")
    c = abs(inner_product(H_hat, H)) / np.sqrt(a * b)
    return float(1.0 - min(c, 1.0))


def smooth_loss(H_hat, weights: LossWeights = LossWeights()) -> float:
    """Weighted squared forward differences along time (axis 1) and frequency (axis 0)."""
    H_hat = np.asarray(H_hat)
    total = 0.0
    if H_hat.shape[1] > 1:
        total += weights.lambda_t * fro_norm_sq(np.diff(H_hat, axis=1))
    if H_hat.shape[0] > 1:
        total += weights.lambda_f * fro_norm_sq(np.diff(H_hat, axis=0))
    return float(total)


def total_loss(H_hat, H, weights: LossWeights = LossWeights()) -> LossBreakdown:
    """Composite loss; the smoothness component is divided by ``||H||^2`` so
    that all three terms are dimensionless."""
    sp, alpha = sp_nmse(H_hat, H)
    pri = sp if weights.primary == "sp_nmse" else nmse(H_hat, H)
    sm = smooth_loss(H_hat, weights) / _reference_energy(H)
    co = corr_loss(H_hat, H)
    return LossBreakdown(pri + weights.beta * sm + weights.gamma * co, pri, sm, co, alpha)


# --- graph versions ------------------------------------------------------------------
# pred: Tensor (B, 2, K, L); target: ndarray (B, 2, K, L), treated as constant.

_AX = (1, 2, 3)


def _energy(target) -> np.ndarray:
    e = np.sum(target**2, axis=_AX)
    if np.any(e <= 0):
        raise ValueError("reference channel has zero energy")
    return e


def inner_t(pred, target):
    """Real and imaginary parts of ``<pred, target>`` per sample."""
    tr, ti = target[:, 0], target[:, 1]
    pr, pi = pred[:, 0], pred[:, 1]
    re = E.tsum(pr * tr + pi * ti, axis=(1, 2))
    im = E.tsum(pi * tr - pr * ti, axis=(1, 2))
    return re, im


def nmse_t(pred, target):
    return E.tsum(E.square(pred - target), axis=_AX) * (1.0 / _energy(target))


def sp_nmse_t(pred, target):
    e = _energy(target)
    re, im = inner_t(pred, target)
    ar = (re * (1.0 / e)).reshape(-1, 1, 1)
    ai = (im * (1.0 / e)).reshape(-1, 1, 1)
    tr, ti = target[:, 0], target[:, 1]
    res_r = pred[:, 0] - (ar * tr - ai * ti)
    res_i = pred[:, 1] - (ar * ti + ai * tr)
    err = E.tsum(E.square(res_r) + E.square(res_i), axis=(1, 2))
    return err * (1.0 / e)


def corr_t(pred, target):
    e = _energy(target)
    re, im = inner_t(pred, target)
    mag = E.sqrt(E.square(re) + E.square(im))
    pnorm = E.sqrt(E.tsum(E.square(pred), axis=_AX))
    return 1.0 - mag / (pnorm * np.sqrt(e))


def smooth_t(pred, weights: LossWeights, target=None):
    """Raw per-sample smoothness, or divided by target energy when ``target`` is given."""
    B, _, K, L = pred.shape
    total = E.Tensor(np.zeros(B))
    if L > 1:
        dt = pred[:, :, :, 1:] - pred[:, :, :, :-1]
        total = total + weights.lambda_t * E.tsum(E.square(dt), axis=_AX)
    if K > 1:
        df = pred[:, :, 1:, :] - pred[:, :, :-1, :]
        total = total + weights.lambda_f * E.tsum(E.square(df), axis=_AX)
    if target is not None:
        total = total * (1.0 / _energy(target))
    return total


def total_loss_t(pred, target, weights: LossWeights, sample_weights=None):
    """Batch composite loss and its per-component batch aggregates.

    Per-sample losses are combined as a weighted mean. With
    ``sample_weights = ||H_i||^2`` the NMSE term becomes the batch ratio of
    expectations, matching how test error is aggregated.
    """
    pri = sp_nmse_t(pred, target) if weights.primary == "sp_nmse" else nmse_t(pred, target)
    parts = {"pri": pri}
    total = pri
    if weights.beta:
        parts["smooth"] = smooth_t(pred, weights, target)
        total = total + weights.beta * parts["smooth"]
    if weights.gamma:
        parts["corr"] = corr_t(pred, target)
        total = total + weights.gamma * parts["corr"]
    B = pred.shape[0]
    w = np.ones(B) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    if w.shape != (B,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("sample weights must be nonnegative, one per sample, not all zero")
    w = w / w.sum()
    loss = E.tsum(total * w)
    return loss, {k: float(np.dot(w, v.value)) for k, v in parts.items()}
