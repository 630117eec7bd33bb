"""Constant-velocity baseline predictor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..scenario import AgentState
from .gmm import TrajectoryDistribution


@dataclass(frozen=True)
class CVConfig:
    sigma0: float = 0.2
    growth: float = 0.15

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.growth >= 0):
            raise ValueError("need sigma0 > 0 and growth >= 0")


def cv_variance(t, cfg: CVConfig = CVConfig()) -> np.ndarray:
    """Per-axis variance sigma0^2 + (growth * t)^2 at times t [s]."""
    t = np.asarray(t, dtype=float)
    return cfg.sigma0**2 + (cfg.growth * t) ** 2


def predict_cv(
    history: Sequence[AgentState], t_f: int, dt: float, cfg: CVConfig = CVConfig(), agent_id: str = ""
) -> TrajectoryDistribution:
    """Propagate the last position with the last velocity vector."""
    if len(history) == 0:
        raise ValueError("empty history")
    last = history[-1]
    t = dt * np.arange(1, t_f + 1)
    means = last.position[None, :] + t[:, None] * last.velocity[None, :]
    var = cv_variance(t, cfg)
    covs = np.zeros((t_f, 1, 2, 2))
    covs[:, 0, 0, 0] = covs[:, 0, 1, 1] = var
    return TrajectoryDistribution(np.ones(1), means[:, None, :], covs, agent_id, last.position, last.heading)
