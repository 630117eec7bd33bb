"""Displacement and likelihood metrics for mixture and ensemble predictions.

For a single distribution, ADE/FDE use the most likely mode and NLL is the
mixture negative log density. Weighted (w*) metrics weight per-mode values by
the mode weights; best-of-N (min*) metrics take the best mode. An ensemble is
scored on its integrated (member-averaged) trajectory for ADE/FDE and as a
flat mixture of all member modes, each member weighted 1/M, for the rest.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .gmm import EnsemblePrediction, TrajectoryDistribution
from .losses import nll_terms

METRIC_NAMES = ("ADE", "FDE", "NLL", "wADE", "wFDE", "wNLL", "minADE", "minFDE", "minNLL")


def _flatten(pred) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weights (J,), means (J, T, 2), covs (J, T, 2, 2) of a flat mixture."""
    if isinstance(pred, EnsemblePrediction):
        ws = np.concatenate([m.weights / pred.M for m in pred.members])
        mus = np.concatenate([np.transpose(m.means, (1, 0, 2)) for m in pred.members])
        covs = np.concatenate([np.transpose(m.covs, (1, 0, 2, 3)) for m in pred.members])
        return ws, mus, covs
    return pred.weights, np.transpose(pred.means, (1, 0, 2)), np.transpose(pred.covs, (1, 0, 2, 3))


def _nll_per_step(mus, covs, truth) -> np.ndarray:
    sxx, syy = covs[..., 0, 0], covs[..., 1, 1]
    ls = 0.5 * np.log(np.stack([sxx, syy], axis=-1))
    rho = covs[..., 0, 1] / np.sqrt(sxx * syy)
    nll, _ = nll_terms(mus[None], ls[None], rho[None], truth[None])
    return nll[0]


def displacement_errors(traj: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    err = np.hypot(*(traj - truth).T)
    valid = np.flatnonzero(mask > 0)
    return float(err[valid].mean()), float(err[valid[-1]])


def metrics(pred: TrajectoryDistribution | EnsemblePrediction, truth, mask=None) -> dict[str, float]:
    truth = np.asarray(truth, dtype=float)
    T = pred.T
    mask = np.ones(T) if mask is None else np.asarray(mask, dtype=float)
    if truth.shape != (T, 2) or mask.shape != (T,):
        raise ValueError("truth/mask length must match the prediction horizon")
    if mask.sum() <= 0:
        raise ValueError("all truth steps are masked")
    if isinstance(pred, EnsemblePrediction):
        point = pred.integrated_trajectory()
    else:
        point = pred.mean_trajectory()
    ade, fde = displacement_errors(point, truth, mask)
    w, mus, covs = _flatten(pred)
    per_mode = [displacement_errors(m, truth, mask) for m in mus]
    ades = np.array([p[0] for p in per_mode])
    fdes = np.array([p[1] for p in per_mode])
    nll_steps = _nll_per_step(mus, covs, truth)  # (J, T)
    valid = mask > 0
    nll_modes = nll_steps[:, valid].mean(axis=1)
    with np.errstate(divide="ignore"):
        mix = -logsumexp(-nll_steps[:, valid], b=w[:, None], axis=0)
    return {
        "ADE": ade,
        "FDE": fde,
        "NLL": float(mix.mean()),
        "wADE": float(w @ ades),
        "wFDE": float(w @ fdes),
        "wNLL": float(w @ nll_modes),
        "minADE": float(ades.min()),
        "minFDE": float(fdes.min()),
        "minNLL": float(nll_modes.min()),
    }


def evaluate(predictions: list, truths: list, masks: list) -> dict[str, float]:
    """Mean of each metric over a list of predictions."""
    rows = [metrics(p, t, m) for p, t, m in zip(predictions, truths, masks)]
    return {k: float(np.mean([r[k] for r in rows])) for k in METRIC_NAMES}
