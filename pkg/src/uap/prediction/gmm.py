"""Gaussian-mixture containers for predicted agent futures.

A :class:`TrajectoryDistribution` stores a K-mode mixture per future step as
dense arrays; mode weights are shared across steps. ``K == 1`` is the
short-term aleatoric (unimodal) case, ``K > 1`` adds long-term (multimodal)
uncertainty. An :class:`EnsemblePrediction` holds one distribution per
ensemble member.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GaussianMode:
    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (2, 2) or not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be a symmetric 2x2 matrix")
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError("covariance must be positive definite")
        if not np.isfinite(self.weight):
            raise ValueError("weight must be finite")


@dataclass(frozen=True)
class GmmStep:
    modes: tuple[GaussianMode, ...]

    def __post_init__(self):
        if len(self.modes) < 1:
            raise ValueError("a mixture needs at least one mode")
        total = sum(m.weight for m in self.modes)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mode weights sum to {total}, expected 1")

    @property
    def K(self) -> int:
        return len(self.modes)


@dataclass(frozen=True, eq=False)
class TrajectoryDistribution:
    """Per-step K-mode mixture over future positions.

    weights: (K,) shared across steps
    means:   (T, K, 2)
    covs:    (T, K, 2, 2)
    origin / heading0: the agent's observed position and heading at prediction time.
    """

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    agent_id: str = ""
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    heading0: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covs, dtype=float)
        if mu.ndim != 3 or mu.shape[-1] != 2:
            raise ValueError(f"means must have shape (T, K, 2), got {mu.shape}")
        T, K = mu.shape[:2]
        if w.shape != (K,):
            raise ValueError(f"weights must have shape ({K},), got {w.shape}")
        if cov.shape != (T, K, 2, 2):
            raise ValueError(f"covs must have shape ({T}, {K}, 2, 2), got {cov.shape}")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covs", cov)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def T(self) -> int:
        return self.means.shape[0]

    @property
    def K(self) -> int:
        return self.means.shape[1]

    @property
    def steps(self) -> list[GmmStep]:
        return [
            GmmStep(tuple(GaussianMode(float(self.weights[k]), self.means[t, k], self.covs[t, k]) for k in range(self.K)))
            for t in range(self.T)
        ]

    def most_likely_mode(self) -> int:
        """Index of the largest weight; ties go to the lowest index."""
        return int(np.argmax(self.weights))

    def mean_trajectory(self, k: int | None = None) -> np.ndarray:
        """Mean positions (T, 2) of mode ``k`` (default: most likely mode)."""
        if k is None:
            k = self.most_likely_mode()
        if not 0 <= k < self.K:
            raise IndexError(f"mode {k} out of range for K={self.K}")
        return self.means[:, k, :].copy()

    def mode(self, k: int) -> "TrajectoryDistribution":
        """Single-mode (K=1) distribution of mode ``k``."""
        if not 0 <= k < self.K:
            raise IndexError(f"mode {k} out of range for K={self.K}")
        return TrajectoryDistribution(
            np.ones(1), self.means[:, k : k + 1], self.covs[:, k : k + 1], self.agent_id, self.origin, self.heading0
        )

    def with_covariance(self, cov: np.ndarray) -> "TrajectoryDistribution":
        cov = np.broadcast_to(np.asarray(cov, dtype=float), self.covs.shape).copy()
        return TrajectoryDistribution(self.weights, self.means, cov, self.agent_id, self.origin, self.heading0)


def mean_trajectory(dist: TrajectoryDistribution, k: int) -> np.ndarray:
    return dist.mean_trajectory(k)


@dataclass(frozen=True, eq=False)
class EnsemblePrediction:
    members: tuple[TrajectoryDistribution, ...]

    def __post_init__(self):
        members = tuple(self.members)
        if len(members) < 1:
            raise ValueError("an ensemble needs at least one member")
        T, K = members[0].T, members[0].K
        if any(m.T != T or m.K != K for m in members):
            raise ValueError("ensemble members must share T and K")
        object.__setattr__(self, "members", members)

    @property
    def M(self) -> int:
        return len(self.members)

    @property
    def T(self) -> int:
        return self.members[0].T

    @property
    def K(self) -> int:
        return self.members[0].K

    @property
    def agent_id(self) -> str:
        return self.members[0].agent_id

    def integrated_trajectory(self) -> np.ndarray:
        """Average of the members' most-likely-mode mean trajectories, (T, 2)."""
        return np.mean([m.mean_trajectory() for m in self.members], axis=0)


def integrated_trajectory(ep: EnsemblePrediction) -> np.ndarray:
    return ep.integrated_trajectory()


def nominal_headings(means: np.ndarray, origin: np.ndarray, heading0: float, min_step: float = 1e-3) -> np.ndarray:
    """Heading of each step's displacement along a (T, K, 2) mean trajectory.

    Steps shorter than ``min_step`` keep the previous heading, starting from
    ``heading0``.
    """
    T, K = means.shape[:2]
    prev = np.concatenate([np.broadcast_to(origin, (1, K, 2)), means[:-1]], axis=0)
    disp = means - prev
    norm = np.hypot(disp[..., 0], disp[..., 1])
    raw = np.arctan2(disp[..., 1], disp[..., 0])
    out = np.empty((T, K))
    last = np.full(K, float(heading0))
    for t in range(T):
        last = np.where(norm[t] > min_step, raw[t], last)
        out[t] = last
    return out


def mean_velocities(means: np.ndarray, origin: np.ndarray, dt: float) -> np.ndarray:
    """Finite-difference velocities (T, K, 2) along mean trajectories."""
    K = means.shape[1]
    prev = np.concatenate([np.broadcast_to(origin, (1, K, 2)), means[:-1]], axis=0)
    return (means - prev) / dt
