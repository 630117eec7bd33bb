"""Synthetic straight and turning agent tracks for predictor sanity checks."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..scenario import AgentState
from .train import TrainingData, make_samples


@dataclass(frozen=True)
class TrackSpec:
    n: int = 1000
    history: int = 8
    horizon: int = 15
    dt: float = 0.2
    speed: tuple[float, float] = (2.0, 12.0)
    accel: tuple[float, float] = (-1.0, 1.0)
    turn_prob: float = 0.5
    yaw_rate: tuple[float, float] = (0.15, 0.5)
    pos_noise: float = 0.0

    def __post_init__(self):
        if self.n < 1 or self.history < 1 or self.horizon < 1 or self.dt <= 0:
            raise ValueError("n, history, horizon and dt must be positive")
        if not 0.0 <= self.turn_prob <= 1.0:
            raise ValueError("turn_prob must lie in [0, 1]")
        if self.speed[0] < 0 or self.speed[0] > self.speed[1]:
            raise ValueError("speed range must be non-negative and ordered")
        if self.pos_noise < 0:
            raise ValueError("pos_noise must be >= 0")


def _wrap(a: np.ndarray) -> np.ndarray:
    return np.pi - np.mod(np.pi - a, 2 * np.pi)


def track(rng: np.random.Generator, spec: TrackSpec) -> np.ndarray:
    """One track of shape (history + horizon, 5) with columns x, y, v, heading, a.

    Straight tracks keep a constant acceleration; turning tracks additionally
    keep a constant yaw rate of random sign.
    """
    n = spec.history + spec.horizon
    v0 = rng.uniform(*spec.speed)
    acc = rng.uniform(*spec.accel)
    yaw = 0.0
    if rng.random() < spec.turn_prob:
        yaw = rng.uniform(*spec.yaw_rate) * rng.choice((-1.0, 1.0))
    psi0 = rng.uniform(-math.pi, math.pi)
    x, y, v, psi = rng.normal(0.0, 20.0), rng.normal(0.0, 20.0), v0, psi0
    out = np.empty((n, 5))
    for i in range(n):
        a = acc if v > 0 or acc > 0 else 0.0
        out[i] = (x, y, v, psi, a)
        v_next = max(v + acc * spec.dt, 0.0)
        v_mid = 0.5 * (v + v_next)
        psi_mid = psi + 0.5 * yaw * spec.dt
        x += v_mid * math.cos(psi_mid) * spec.dt
        y += v_mid * math.sin(psi_mid) * spec.dt
        psi, v = psi + yaw * spec.dt, v_next
    out[:, 3] = _wrap(out[:, 3])
    return out


def synthetic_tracks(spec: TrackSpec, seed: int) -> TrainingData:
    """``spec.n`` supervised samples, one per independent track."""
    rng = np.random.default_rng(seed)
    hs, fs, ms = [], [], []
    for _ in range(spec.n):
        tr = track(rng, spec)
        obs = tr[: spec.history].copy()
        if spec.pos_noise > 0:
            obs[:, :2] += rng.normal(0.0, spec.pos_noise, size=(spec.history, 2))
        hs.append([AgentState(*map(float, row)) for row in obs])
        fs.append(tr[spec.history :, :2])
        ms.append(np.ones(spec.horizon))
    return make_samples(hs, fs, ms, spec.history)
