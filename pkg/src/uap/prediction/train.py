"""Supervised data assembly, two-phase training and bootstrap ensembles."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..scenario import AgentState, Scenario
from .features import features_from_array, history_array, to_local
from .gmm import EnsemblePrediction
from .model import GmmRegressor, ModelConfig, init_model

log = logging.getLogger(__name__)


class TrainingDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs_phase1: int = 20
    epochs_phase2: int = 10
    lr: float = 0.02
    lr_phase2: float = 0.005
    batch_size: int = 64
    clip: float = 10.0
    seed: int = 0
    bootstrap: bool = True
    M: int = 5

    def __post_init__(self):
        if self.epochs_phase1 < 0 or self.epochs_phase2 < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.M < 1:
            raise ValueError("ensemble size M must be >= 1")
        if not (self.lr > 0 and self.lr_phase2 > 0 and self.batch_size >= 1 and self.clip > 0):
            raise ValueError("lr, lr_phase2, batch_size and clip must be positive")


@dataclass(frozen=True, eq=False)
class TrainingData:
    """Supervised samples: padded histories (N, h, 4), raw features (N, F),
    futures in the agent frame and in world coordinates (N, T, 2), masks (N, T)."""

    hist: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    Y_world: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "TrainingData":
        idx = np.asarray(idx)
        return TrainingData(self.hist[idx], self.X[idx], self.Y[idx], self.Y_world[idx], self.mask[idx])

    @staticmethod
    def concat(parts: Sequence["TrainingData"]) -> "TrainingData":
        return TrainingData(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("hist", "X", "Y", "Y_world", "mask")))


def make_samples(
    histories: Sequence[Sequence[AgentState]], futures: Sequence[np.ndarray], masks: Sequence[np.ndarray], history: int
) -> TrainingData:
    hist = np.stack([history_array(h, history) for h in histories])
    Yw = np.stack([np.asarray(f, dtype=float) for f in futures])
    mask = np.stack([np.asarray(m, dtype=float) for m in masks])
    Yw = np.where(mask[..., None] > 0, Yw, 0.0)
    Y = to_local(Yw, hist[:, -1, :2], hist[:, -1, 3])
    Y = np.where(mask[..., None] > 0, Y, 0.0)
    return TrainingData(hist, features_from_array(hist), Y, Yw, mask)


def build_dataset(scenarios: Iterable[Scenario], history: int, horizon: int, stride: int = 1) -> TrainingData:
    """One sample per (agent, step) with at least one observed future step."""
    hs, fs, ms = [], [], []
    for sc in scenarios:
        for agent in sc.agents:
            P = agent.positions()
            for j in range(agent.start_step, agent.end_step, stride):
                i = j - agent.start_step
                fut = np.zeros((horizon, 2))
                m = np.zeros(horizon)
                n = min(horizon, len(P) - i - 1)
                fut[:n] = P[i + 1 : i + 1 + n]
                m[:n] = 1.0
                hs.append(agent.states[max(0, i - history + 1) : i + 1])
                fs.append(fut)
                ms.append(m)
    if not hs:
        raise ValueError("no training samples in the given scenarios")
    return make_samples(hs, fs, ms, history)


def _sgd(model: GmmRegressor, data: TrainingData, kind: str, epochs: int, lr: float, cfg: TrainConfig, rng, phase: str):
    theta = model.get_params()
    n = len(data)
    losses = []
    for ep in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            value, g = model.loss_and_grad(data.X[idx], data.Y[idx], data.mask[idx], kind)
            if not (np.isfinite(value) and np.all(np.isfinite(g))):
                raise TrainingDivergence(f"{phase}: non-finite {kind} loss at epoch {ep}, batch starting {lo} (value={value})")
            norm = float(np.linalg.norm(g))
            if norm > cfg.clip:
                g = g * (cfg.clip / norm)
            theta = theta - lr * g
            model.set_params(theta)
            total += value * len(idx)
        losses.append(total / n)
        log.debug("%s epoch %d: %s=%.5f", phase, ep, kind, losses[-1])
    return losses


def train_two_phase(
    data: TrainingData, model_cfg: ModelConfig, cfg: TrainConfig = TrainConfig(), seed: int | None = None, return_history: bool = False
):
    """Phase 1 minimises wMSE, phase 2 minimises wNLL; all parameters stay trainable.

    The same ``seed`` drives initialisation and minibatch order, so repeated
    calls return bit-identical parameters.
    """
    if len(data) == 0:
        raise ValueError("empty training data")
    seed = cfg.seed if seed is None else seed
    ss = np.random.SeedSequence(seed)
    init_seed, order_seed = ss.spawn(2)
    model = init_model(model_cfg, data.X, data.Y, data.mask, int(init_seed.generate_state(1)[0]))
    rng = np.random.default_rng(order_seed)
    h1 = _sgd(model, data, "wmse", cfg.epochs_phase1, cfg.lr, cfg, rng, "phase 1")
    h2 = _sgd(model, data, "wnll", cfg.epochs_phase2, cfg.lr_phase2, cfg, rng, "phase 2")
    if return_history:
        return model, {"wmse": h1, "wnll": h2}
    return model


def bootstrap_split(n: int, M: int, seed: int) -> list[np.ndarray]:
    """M index sets of size n drawn uniformly with replacement."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    return [rng.integers(0, n, size=n) for _ in range(M)]


def member_seeds(seed: int, M: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(M)]


def train_ensemble(data: TrainingData, model_cfg: ModelConfig, cfg: TrainConfig = TrainConfig()) -> list[GmmRegressor]:
    """M submodels, each on its own bootstrap resample with its own initialisation seed."""
    seeds = member_seeds(cfg.seed, cfg.M)
    if cfg.bootstrap:
        subsets = [data.subset(idx) for idx in bootstrap_split(len(data), cfg.M, cfg.seed)]
    else:
        subsets = [data] * cfg.M
    return [train_two_phase(sub, model_cfg, cfg, seed=s) for sub, s in zip(subsets, seeds)]


def predict_ensemble(models: Sequence[GmmRegressor], history: Sequence[AgentState], agent_id: str = "") -> EnsemblePrediction:
    return EnsemblePrediction(tuple(m.predict(history, agent_id) for m in models))


def evaluate_models(models: Sequence[GmmRegressor], data: TrainingData, limit: int | None = None) -> dict[str, float]:
    """Mean metrics of a single model (len 1) or an ensemble over ``data``."""
    from .gmm import TrajectoryDistribution
    from .metrics import evaluate

    n = len(data) if limit is None else min(limit, len(data))
    hist = data.hist[:n]
    outs = [m.predict_arrays(hist) for m in models]
    preds = []
    for i in range(n):
        dists = tuple(
            TrajectoryDistribution(w[i] / w[i].sum(), np.transpose(mu[i], (1, 0, 2)), np.transpose(cov[i], (1, 0, 2, 3)))
            for w, mu, cov in outs
        )
        preds.append(dists[0] if len(dists) == 1 else EnsemblePrediction(dists))
    return evaluate(preds, list(data.Y_world[:n]), list(data.mask[:n]))
