"""Weighted MSE and weighted NLL losses with analytic gradients.

Batched arrays use the shapes

    w    (N, K)        mode weights
    mu   (N, K, T, 2)  mode means
    ls   (N, K, T, 2)  log standard deviations
    rho  (N, K, T)     correlation coefficients
    Y    (N, T, 2)     ground-truth positions
    mask (N, T)        1 for valid steps, 0 for missing ones

Each sample's loss is normalised by its number of valid steps and the batch
value is the mean over samples. Returned gradients are with respect to that
batch mean.
"""

from __future__ import annotations

import math

import numpy as np

from .gmm import TrajectoryDistribution

LOG_2PI = math.log(2.0 * math.pi)


def _counts(mask: np.ndarray) -> np.ndarray:
    cnt = mask.sum(-1)
    if np.any(cnt <= 0):
        raise ValueError("every sample needs at least one valid (unmasked) step")
    return cnt


def wmse_batch(w, mu, Y, mask, grad: bool = False):
    """Weighted MSE. Returns (value, per-mode losses (N, K), grads or None)."""
    N = w.shape[0]
    cnt = _counts(mask)
    err = Y[:, None] - mu
    per_step = (err**2).sum(-1) * mask[:, None, :]
    Lk = per_step.sum(-1) / cnt[:, None]
    value = float((w * Lk).sum() / N)
    if not grad:
        return value, Lk, None
    g_mu = -2.0 * (w / (N * cnt[:, None]))[:, :, None, None] * mask[:, None, :, None] * err
    g_w = Lk / N
    return value, Lk, {"w": g_w, "mu": g_mu}


def nll_terms(mu, ls, rho, Y):
    """Per-step negative log density and its intermediates."""
    sx = np.exp(ls[..., 0])
    sy = np.exp(ls[..., 1])
    err = Y[:, None] - mu
    a = err[..., 0] / sx
    b = err[..., 1] / sy
    om = 1.0 - rho**2
    q = a * a + b * b - 2.0 * rho * a * b
    nll = LOG_2PI + ls[..., 0] + ls[..., 1] + 0.5 * np.log(om) + 0.5 * q / om
    return nll, (sx, sy, a, b, om, q)


def wnll_batch(w, mu, ls, rho, Y, mask, grad: bool = False):
    """Weighted NLL. Returns (value, per-mode losses (N, K), grads or None)."""
    N = w.shape[0]
    cnt = _counts(mask)
    nll, (sx, sy, a, b, om, q) = nll_terms(mu, ls, rho, Y)
    Lk = (nll * mask[:, None, :]).sum(-1) / cnt[:, None]
    value = float((w * Lk).sum() / N)
    if not grad:
        return value, Lk, None
    scale = (w / (N * cnt[:, None]))[:, :, None] * mask[:, None, :]
    da = (a - rho * b) / om
    db = (b - rho * a) / om
    g_mu = np.stack([-da / sx, -db / sy], axis=-1) * scale[..., None]
    g_ls = np.stack([1.0 - a * da, 1.0 - b * db], axis=-1) * scale[..., None]
    g_rho = (-rho / om + (rho * q - a * b * om) / om**2) * scale
    return value, Lk, {"w": Lk / N, "mu": g_mu, "ls": g_ls, "rho": g_rho}


def _dist_arrays(pred: TrajectoryDistribution, truth, mask):
    truth = np.asarray(truth, dtype=float)
    mask = np.ones(pred.T) if mask is None else np.asarray(mask, dtype=float)
    if truth.shape != (pred.T, 2) or mask.shape != (pred.T,):
        raise ValueError(f"truth/mask length must match the prediction horizon {pred.T}")
    if mask.sum() <= 0:
        raise ValueError("all truth steps are masked")
    mu = np.transpose(pred.means, (1, 0, 2))[None]
    return truth[None], mask[None], pred.weights[None], mu


def loss_wmse(pred: TrajectoryDistribution, truth, mask=None) -> float:
    """sum_k w_k * sum_t m_t ||y_t - mu_kt||^2 / sum_t m_t for one prediction."""
    Y, M, w, mu = _dist_arrays(pred, truth, mask)
    return wmse_batch(w, mu, Y, M)[0]


def loss_wnll(pred: TrajectoryDistribution, truth, mask=None) -> float:
    """-sum_k w_k * sum_t m_t log N(y_t | mu_kt, S_kt) / sum_t m_t for one prediction."""
    Y, M, w, mu = _dist_arrays(pred, truth, mask)
    cov = np.transpose(pred.covs, (1, 0, 2, 3))[None]
    sxx, syy, sxy = cov[..., 0, 0], cov[..., 1, 1], cov[..., 0, 1]
    det = sxx * syy - sxy * cov[..., 1, 0]
    if np.any(sxx <= 0) or np.any(det <= 0) or not np.allclose(sxy, cov[..., 1, 0]):
        raise ValueError("covariances must be symmetric positive definite")
    ls = 0.5 * np.log(np.stack([sxx, syy], axis=-1))
    rho = sxy / np.sqrt(sxx * syy)
    return wnll_batch(w, mu, ls, rho, Y, M)[0]
