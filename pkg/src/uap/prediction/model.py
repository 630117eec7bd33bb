"""Affine Gaussian-mixture trajectory regressor.

Standardised history features feed a single affine map whose output is split
into per-mode heads:

    z    (K)        weight logits, w = softmax(z), shared over the horizon
    dlt  (K, T, 2)  per-step displacements in the agent frame, mu = cumsum(dlt)
    ls   (K, T, 2)  log standard deviations, sigma = exp(ls)
    r    (K, T)     pre-correlations, rho = rho_max * tanh(r)

so every output covariance is positive definite by construction. Predictions
are produced in the agent-centric frame and rotated back to world coordinates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..scenario import AgentState
from . import losses
from .features import feature_groups, feature_names, feature_size, features_from_array, history_array, to_global
from .gmm import TrajectoryDistribution

FORMAT = "uap-gmm-regressor"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    K: int = 1
    horizon: int = 15
    history: int = 8
    dt: float = 0.2
    rho_max: float = 0.99
    init_scale: float = 0.01
    init_sigma: float = 1.0
    normalization: str = "valid-steps"
    feature_scaling: str = "group"

    def __post_init__(self):
        if self.K < 1 or self.horizon < 1 or self.history < 1:
            raise ValueError("K, horizon and history must be >= 1")
        if self.feature_scaling not in ("group", "per-feature"):
            raise ValueError("feature_scaling must be 'group' or 'per-feature'")
        if not 0 < self.rho_max < 1:
            raise ValueError("rho_max must lie in (0, 1)")

    @property
    def n_features(self) -> int:
        return feature_size(self.history)

    @property
    def n_outputs(self) -> int:
        return self.K * (1 + 5 * self.horizon)


@dataclass
class Outputs:
    """Decoded network outputs for a batch (agent frame)."""

    w: np.ndarray
    mu: np.ndarray
    ls: np.ndarray
    rho: np.ndarray
    tanh_r: np.ndarray


class GmmRegressor:
    def __init__(self, config: ModelConfig, W, b, feat_mean, feat_std, disp_scale: float):
        self.config = config
        F, P = config.n_features, config.n_outputs
        self.W = np.asarray(W, dtype=float).reshape(F, P)
        self.b = np.asarray(b, dtype=float).reshape(P)
        self.feat_mean = np.asarray(feat_mean, dtype=float).reshape(F)
        self.feat_std = np.asarray(feat_std, dtype=float).reshape(F)
        self.disp_scale = float(disp_scale)
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("non-finite model parameters")

    # -- parameter vector ---------------------------------------------------

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b])

    def set_params(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=float)
        nW = self.W.size
        self.W = theta[:nW].reshape(self.W.shape).copy()
        self.b = theta[nW:].copy()

    def copy(self) -> "GmmRegressor":
        return GmmRegressor(self.config, self.W.copy(), self.b.copy(), self.feat_mean, self.feat_std, self.disp_scale)

    # -- forward --------------------------------------------------------------

    def _slices(self):
        K, T = self.config.K, self.config.horizon
        i0, i1, i2 = K, K + 2 * K * T, K + 4 * K * T
        return slice(0, i0), slice(i0, i1), slice(i1, i2), slice(i2, i2 + K * T)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[-1] != self.config.n_features:
            raise ValueError(f"expected {self.config.n_features} features, got {X.shape[-1]}")
        return (X - self.feat_mean) / self.feat_std

    def decode(self, O: np.ndarray) -> Outputs:
        K, T = self.config.K, self.config.horizon
        N = O.shape[0]
        sz, sd, sl, sr = self._slices()
        z = O[:, sz]
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        w = e / e.sum(axis=1, keepdims=True)
        dlt = O[:, sd].reshape(N, K, T, 2) * self.disp_scale
        mu = np.cumsum(dlt, axis=2)
        ls = O[:, sl].reshape(N, K, T, 2)
        th = np.tanh(O[:, sr].reshape(N, K, T))
        return Outputs(w, mu, ls, self.config.rho_max * th, th)

    def forward_local(self, X: np.ndarray) -> Outputs:
        """Outputs in the agent frame for raw feature rows X (N, F)."""
        Xs = self.standardize(X)
        return self.decode(Xs @ self.W + self.b)

    def backprop(self, out: Outputs, g: dict, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Chain loss gradients w.r.t. decoded outputs back to (dW, db)."""
        K, T = self.config.K, self.config.horizon
        N = Xs.shape[0]
        G = np.zeros((N, self.config.n_outputs))
        sz, sd, sl, sr = self._slices()
        gw = g["w"]
        G[:, sz] = out.w * (gw - (out.w * gw).sum(axis=1, keepdims=True))
        g_dlt = np.flip(np.cumsum(np.flip(g["mu"], axis=2), axis=2), axis=2)
        G[:, sd] = (g_dlt * self.disp_scale).reshape(N, -1)
        if "ls" in g:
            G[:, sl] = g["ls"].reshape(N, -1)
            G[:, sr] = (g["rho"] * self.config.rho_max * (1.0 - out.tanh_r**2)).reshape(N, -1)
        return Xs.T @ G, G.sum(axis=0)

    def loss_and_grad(self, X, Y, mask, kind: str, grad: bool = True):
        """Batch loss ('wmse' or 'wnll') and its gradient w.r.t. the parameter vector."""
        Xs = self.standardize(X)
        out = self.decode(Xs @ self.W + self.b)
        if kind == "wmse":
            value, _, g = losses.wmse_batch(out.w, out.mu, Y, mask, grad=grad)
        elif kind == "wnll":
            value, _, g = losses.wnll_batch(out.w, out.mu, out.ls, out.rho, Y, mask, grad=grad)
        else:
            raise ValueError(f"unknown loss {kind!r}")
        if not grad:
            return value, None
        dW, db = self.backprop(out, g, Xs)
        return value, np.concatenate([dW.ravel(), db])

    # -- prediction -------------------------------------------------------------

    def predict_arrays(self, hist: np.ndarray):
        """World-frame (w, mu, cov) for padded histories of shape (N, h, 4)."""
        out = self.forward_local(features_from_array(hist))
        origin = hist[:, -1, :2]
        psi = hist[:, -1, 3]
        N, K, T = out.mu.shape[:3]
        mu = to_global(out.mu.reshape(N, K * T, 2), origin, psi).reshape(N, K, T, 2)
        sx, sy = np.exp(out.ls[..., 0]), np.exp(out.ls[..., 1])
        cxy = out.rho * sx * sy
        local = np.empty((N, K, T, 2, 2))
        local[..., 0, 0] = sx * sx
        local[..., 1, 1] = sy * sy
        local[..., 0, 1] = local[..., 1, 0] = cxy
        c, s = np.cos(psi), np.sin(psi)
        R = np.empty((N, 2, 2))
        R[:, 0, 0], R[:, 0, 1], R[:, 1, 0], R[:, 1, 1] = c, -s, s, c
        cov = np.einsum("nij,nktjl,nml->nktim", R, local, R)
        cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
        return out.w, mu, cov

    def predict(self, history: Sequence[AgentState], agent_id: str = "") -> TrajectoryDistribution:
        hist = history_array(history, self.config.history)
        w, mu, cov = self.predict_arrays(hist[None])
        return TrajectoryDistribution(
            w[0] / w[0].sum(),
            np.transpose(mu[0], (1, 0, 2)),
            np.transpose(cov[0], (1, 0, 2, 3)),
            agent_id,
            hist[-1, :2],
            float(hist[-1, 3]),
        )

    # -- serialisation ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "config": asdict(self.config),
            "feature_layout": feature_names(self.config.history),
            "disp_scale": self.disp_scale,
            "feat_mean": self.feat_mean.tolist(),
            "feat_std": self.feat_std.tolist(),
            "W": self.W.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GmmRegressor":
        if d.get("format") != FORMAT:
            raise ValueError(f"not a {FORMAT} document")
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        cfg = ModelConfig(**d["config"])
        return cls(cfg, d["W"], d["b"], d["feat_mean"], d["feat_std"], d["disp_scale"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "GmmRegressor":
        return cls.from_dict(json.loads(Path(path).read_text()))


def forward(model: GmmRegressor, f: np.ndarray, origin=(0.0, 0.0), heading: float = 0.0, agent_id: str = "") -> TrajectoryDistribution:
    """Single feature vector to a world-frame distribution anchored at ``origin``/``heading``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (model.config.n_features,):
        raise ValueError(f"expected feature vector of size {model.config.n_features}, got {f.shape}")
    out = model.forward_local(f[None])
    K, T = model.config.K, model.config.horizon
    origin = np.asarray(origin, dtype=float)
    mu = to_global(out.mu[0].reshape(1, K * T, 2), origin[None], np.array([heading]))[0].reshape(K, T, 2)
    sx, sy = np.exp(out.ls[0, ..., 0]), np.exp(out.ls[0, ..., 1])
    local = np.empty((K, T, 2, 2))
    local[..., 0, 0], local[..., 1, 1] = sx * sx, sy * sy
    local[..., 0, 1] = local[..., 1, 0] = out.rho[0] * sx * sy
    c, s = np.cos(heading), np.sin(heading)
    R = np.array([[c, -s], [s, c]])
    cov = R @ local @ R.T
    return TrajectoryDistribution(
        out.w[0] / out.w[0].sum(),
        np.transpose(mu, (1, 0, 2)),
        np.transpose(0.5 * (cov + np.swapaxes(cov, -1, -2)), (1, 0, 2, 3)),
        agent_id,
        origin,
        heading,
    )


def init_model(config: ModelConfig, X: np.ndarray, Y_local: np.ndarray, mask: np.ndarray, seed: int) -> GmmRegressor:
    """Randomly initialised regressor with data-derived scalings.

    Feature standardisation and the displacement scale come from the training
    data. With ``feature_scaling="group"`` each feature block (displacements,
    speeds, heading changes) shares one scale, so a block component with
    almost no training variance (the lateral offsets of straight driving) is
    not blown up into a noise amplifier. Mode displacement biases start at
    k-means anchors of the fully observed training futures so that modes
    begin from distinct motion patterns; all weights are drawn from
    N(0, init_scale^2).
    """
    from scipy.cluster.vq import kmeans2

    rng = np.random.default_rng(seed)
    F, P = config.n_features, config.n_outputs
    K, T = config.K, config.horizon
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if config.feature_scaling == "group":
        for g in feature_groups(config.history):
            if g.stop > g.start:
                std[g] = np.sqrt(np.mean(std[g] ** 2))
    std = np.where(std > 1e-8, std, 1.0)
    prev = np.concatenate([np.zeros_like(Y_local[:, :1]), Y_local[:, :-1]], axis=1)
    steps = (Y_local - prev)
    valid = mask > 0
    # a step displacement is valid when both ends are observed
    step_valid = valid & np.concatenate([np.ones_like(valid[:, :1]), valid[:, :-1]], axis=1)
    disp_scale = float(np.sqrt(np.mean(steps[step_valid] ** 2))) if step_valid.any() else 1.0
    disp_scale = max(disp_scale, 1e-3)
    full = valid.all(axis=1)
    flat = steps[full].reshape(int(full.sum()), -1) if full.any() else steps.reshape(len(steps), -1) * 0
    if K == 1 or len(flat) < K:
        anchors = np.repeat(flat.mean(axis=0, keepdims=True) if len(flat) else np.zeros((1, 2 * T)), K, axis=0)
    else:
        anchors, _ = kmeans2(flat, K, seed=rng, minit="++")
        # order anchors by travelled distance for a stable mode layout
        order = np.argsort(np.linalg.norm(anchors.reshape(K, T, 2).sum(axis=1), axis=1), kind="stable")
        anchors = anchors[order]
    W = rng.normal(0.0, config.init_scale, size=(F, P))
    b = np.zeros(P)
    model = GmmRegressor(config, W, b, mean, std, disp_scale)
    sz, sd, sl, sr = model._slices()
    b[sd] = (anchors / disp_scale).ravel()
    b[sl] = np.log(config.init_sigma)
    model.b = b
    return model
