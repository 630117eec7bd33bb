"""Uncertainty-aware risk models.

Risk of a candidate against one agent hypothesis is max_t (P_c^t * H^t), where
P_c is a shape-aware collision probability and H a bounded harm. The agent is
represented by three Gaussians (rear, centre and front of its footprint, all
sharing the predicted covariance) and the ego by three axis-aligned
rectangles centred on the thirds of its footprint:

    P_c = clamp( (1/3) sum_{gaussian g} sum_{rect r} integral_r N_g )

Multimodal and ensemble predictions are reduced per agent with the LAU
aggregators (wR, mlR, maxR) over modes and the EU aggregators (avgR, maxR)
over members; per-agent results are summed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bvn import gaussian_rect_integral
from .frenet import CandidateSet, CandidateTrajectory
from .kernels import collision_prob_tensor
from .prediction.gmm import EnsemblePrediction, GmmStep, TrajectoryDistribution, mean_velocities, nominal_headings
from .scenario import AgentProperties, AgentState, OrientedRectangle

LAU_MODES = ("wR", "mlR", "maxR")
EU_MODES = ("avgR", "maxR", "calibrated-total", "calibrated-sau", "eu-only")
FAR = 1e9


@dataclass(frozen=True)
class HarmParams:
    v_ref: float = 15.0

    def __post_init__(self):
        if not self.v_ref > 0:
            raise ValueError("v_ref must be > 0")


@dataclass(frozen=True)
class RiskConfig:
    lau_mode: str = "maxR"
    eu_mode: str = "avgR"
    harm: HarmParams = field(default_factory=HarmParams)
    sigma_gt: float = 0.5
    eu_floor: float = 1e-4

    def __post_init__(self):
        if self.lau_mode not in LAU_MODES:
            raise ValueError(f"lau_mode must be one of {LAU_MODES}, got {self.lau_mode!r}")
        if self.eu_mode not in EU_MODES:
            raise ValueError(f"eu_mode must be one of {EU_MODES}, got {self.eu_mode!r}")
        if not self.sigma_gt > 0:
            raise ValueError("sigma_gt must be > 0")


@dataclass(frozen=True)
class StepDistribution:
    step: GmmStep
    props: AgentProperties
    heading: float


# ---------------------------------------------------------------------------
# single-step building blocks


def shape_aware_mixture(sd: StepDistribution, k: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Equal weights (3,), centres (3, 2) at rear/middle/front of the footprint, shared covariance."""
    mode = sd.step.modes[k]
    u = np.array([math.cos(sd.heading), math.sin(sd.heading)])
    half = 0.5 * sd.props.length
    centres = np.asarray(mode.mean, dtype=float)[None, :] + np.array([-half, 0.0, half])[:, None] * u[None, :]
    return np.full(3, 1.0 / 3.0), centres, np.asarray(mode.cov, dtype=float)


def _rect_bounds(rects: Sequence[OrientedRectangle]) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = [], []
    for r in rects:
        if abs(math.sin(2.0 * r.heading)) > 1e-12:
            raise ValueError("ego sub-rectangles must be axis-aligned")
        swap = abs(math.sin(r.heading)) > 0.5
        hx, hy = (r.width / 2, r.length / 2) if swap else (r.length / 2, r.width / 2)
        lo.append([r.x - hx, r.y - hy])
        hi.append([r.x + hx, r.y + hy])
    return np.array(lo), np.array(hi)


def collision_probability(ego_rects: Sequence[OrientedRectangle], sd: StepDistribution, k: int = 0) -> float:
    """Average over the three shape Gaussians of their mass on the three ego rectangles."""
    _, centres, cov = shape_aware_mixture(sd, k)
    lo, hi = _rect_bounds(ego_rects)
    mass = gaussian_rect_integral(centres[:, None, :], cov, lo[None], hi[None])
    return float(np.clip(np.sum(mass) / 3.0, 0.0, 1.0))


def harm(ego: AgentState, ego_props: AgentProperties, agent: AgentState, agent_props: AgentProperties, hp: HarmParams = HarmParams()) -> float:
    """min(1, m_o / (m_e + m_o) * (|dv| / v_ref)^2)."""
    dv = ego.velocity - agent.velocity
    ratio = agent_props.mass / (ego_props.mass + agent_props.mass)
    return float(min(1.0, ratio * float(dv @ dv) / hp.v_ref**2))


# ---------------------------------------------------------------------------
# batched forecasts


@dataclass(frozen=True, eq=False)
class AgentForecast:
    """M x K hypotheses for one agent: weights (M, K), means (M, K, T, 2),
    covs (M, K, T, 2, 2), headings (M, K, T), velocities (M, K, T, 2)."""

    agent_id: str
    props: AgentProperties
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    headings: np.ndarray
    velocities: np.ndarray
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    heading0: float = 0.0

    @property
    def M(self) -> int:
        return self.means.shape[0]

    @property
    def K(self) -> int:
        return self.means.shape[1]

    @property
    def T(self) -> int:
        return self.means.shape[2]

    @classmethod
    def from_distributions(cls, dists: Sequence[TrajectoryDistribution], props: AgentProperties, dt: float) -> "AgentForecast":
        w = np.stack([d.weights for d in dists])
        mu = np.stack([np.transpose(d.means, (1, 0, 2)) for d in dists])
        cov = np.stack([np.transpose(d.covs, (1, 0, 2, 3)) for d in dists])
        hd = np.stack([nominal_headings(d.means, d.origin, d.heading0).T for d in dists])
        vel = np.stack([np.transpose(mean_velocities(d.means, d.origin, dt), (1, 0, 2)) for d in dists])
        return cls(dists[0].agent_id, props, w, mu, cov, hd, vel, dists[0].origin, dists[0].heading0)

    @classmethod
    def from_distribution(cls, dist: TrajectoryDistribution, props: AgentProperties, dt: float) -> "AgentForecast":
        return cls.from_distributions([dist], props, dt)

    @classmethod
    def from_ensemble(cls, ep: EnsemblePrediction, props: AgentProperties, dt: float) -> "AgentForecast":
        return cls.from_distributions(ep.members, props, dt)

    @classmethod
    def from_truth(cls, states: Sequence[AgentState | None], props: AgentProperties, sigma: float, agent_id: str = "") -> "AgentForecast":
        """Single Gaussian per step on the true positions; missing steps are moved out of reach."""
        T = len(states)
        mu = np.full((T, 2), FAR)
        hd = np.zeros(T)
        vel = np.zeros((T, 2))
        for t, s in enumerate(states):
            if s is not None:
                mu[t] = (s.x, s.y)
                hd[t] = s.heading
                vel[t] = s.velocity
        cov = np.broadcast_to(sigma**2 * np.eye(2), (1, 1, T, 2, 2)).copy()
        return cls(agent_id or props.id, props, np.ones((1, 1)), mu[None, None], cov, hd[None, None], vel[None, None])

    def with_covariance(self, cov) -> "AgentForecast":
        cov = np.broadcast_to(np.asarray(cov, dtype=float), self.covs.shape).copy()
        return AgentForecast(self.agent_id, self.props, self.weights, self.means, cov, self.headings, self.velocities, self.origin, self.heading0)

    def member(self, m: int) -> "AgentForecast":
        s = slice(m, m + 1)
        return AgentForecast(
            self.agent_id, self.props, self.weights[s], self.means[s], self.covs[s], self.headings[s], self.velocities[s],
            self.origin, self.heading0,
        )


def candidate_arrays(cands: CandidateSet | CandidateTrajectory, props: AgentProperties) -> dict:
    x = np.atleast_2d(cands.x)
    h = np.atleast_2d(cands.heading)
    v = np.atleast_2d(cands.v)
    return {
        "x": x,
        "y": np.atleast_2d(cands.y),
        "heading": h,
        "vx": v * np.cos(h),
        "vy": v * np.sin(h),
        "length": props.length,
        "width": props.width,
    }


def hypothesis_arrays(forecasts: Sequence[AgentForecast], ego_mass: float) -> dict:
    """Flatten forecasts into (G, T) arrays with G = sum over agents of M * K."""
    if not forecasts:
        return {"mx": np.zeros((0, 0))}
    rows = {k: [] for k in ("mx", "my", "sx", "sy", "rho", "heading", "vx", "vy", "length", "width", "mass_ratio")}
    for f in forecasts:
        G = f.M * f.K
        mu = f.means.reshape(G, f.T, 2)
        cov = f.covs.reshape(G, f.T, 2, 2)
        sx = np.sqrt(cov[..., 0, 0])
        sy = np.sqrt(cov[..., 1, 1])
        rows["mx"].append(mu[..., 0])
        rows["my"].append(mu[..., 1])
        rows["sx"].append(sx)
        rows["sy"].append(sy)
        rows["rho"].append(np.clip(cov[..., 0, 1] / (sx * sy), -1.0, 1.0))
        rows["heading"].append(f.headings.reshape(G, f.T))
        vel = f.velocities.reshape(G, f.T, 2)
        rows["vx"].append(vel[..., 0])
        rows["vy"].append(vel[..., 1])
        rows["length"].append(np.full(G, f.props.length))
        rows["width"].append(np.full(G, f.props.width))
        rows["mass_ratio"].append(np.full(G, f.props.mass / (f.props.mass + ego_mass)))
    return {k: np.concatenate(v) for k, v in rows.items()}


def risk_traces(cands, forecasts: Sequence[AgentForecast], ego_props: AgentProperties, hp: HarmParams = HarmParams()) -> list[np.ndarray]:
    """Per agent, the per-step risk P_c * H with shape (C, M, K, T)."""
    ego = candidate_arrays(cands, ego_props)
    T = ego["x"].shape[1]
    for f in forecasts:
        if f.T != T:
            raise ValueError(f"prediction horizon {f.T} does not match candidate horizon {T}")
    if not forecasts:
        return []
    P, H = collision_prob_tensor(ego, hypothesis_arrays(forecasts, ego_props.mass), hp.v_ref)
    R = P * H
    out, g = [], 0
    C = R.shape[0]
    for f in forecasts:
        G = f.M * f.K
        out.append(R[:, g : g + G].reshape(C, f.M, f.K, T))
        g += G
    return out


def mode_risks(cands, forecasts: Sequence[AgentForecast], ego_props: AgentProperties, hp: HarmParams = HarmParams()) -> list[np.ndarray]:
    """Per agent, tier-1 risks max_t (P_c * H) with shape (C, M, K)."""
    return [r.max(axis=-1) for r in risk_traces(cands, forecasts, ego_props, hp)]


# ---------------------------------------------------------------------------
# aggregation


def aggregate_lau(mode_risks: np.ndarray, weights: np.ndarray, mode: str) -> np.ndarray:
    """Reduce the trailing mode axis with wR, mlR (ties: lowest index) or maxR."""
    r = np.asarray(mode_risks, dtype=float)
    w = np.broadcast_to(np.asarray(weights, dtype=float), r.shape)
    if np.any(np.abs(w.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("mode weights must sum to 1")
    if mode == "wR":
        return (w * r).sum(axis=-1)
    if mode == "mlR":
        k = np.argmax(w, axis=-1)
        return np.take_along_axis(r, k[..., None], axis=-1)[..., 0]
    if mode == "maxR":
        return r.max(axis=-1)
    raise ValueError(f"unknown LAU mode {mode!r}")


def aggregate_eu(member_risks: np.ndarray, mode: str) -> np.ndarray:
    """Reduce the trailing member axis with avgR or maxR."""
    r = np.asarray(member_risks, dtype=float)
    if r.shape[-1] < 1:
        raise ValueError("need at least one member")
    if mode == "avgR":
        return r.mean(axis=-1)
    if mode == "maxR":
        return r.max(axis=-1)
    raise ValueError(f"unknown EU aggregation {mode!r}")


def risk_sau(cands, forecasts: Sequence[AgentForecast], ego_props: AgentProperties, hp: HarmParams = HarmParams()) -> np.ndarray:
    """sum_i max_t P_c * H for single-Gaussian forecasts; shape (C,)."""
    C = np.atleast_2d(cands.x).shape[0]
    total = np.zeros(C)
    for f, r in zip(forecasts, mode_risks(cands, forecasts, ego_props, hp)):
        if f.M != 1 or f.K != 1:
            raise ValueError("risk_sau expects single-member, single-mode forecasts")
        total += r[:, 0, 0]
    return total


def comprehensive_risk(cands, forecasts: Sequence[AgentForecast], ego_props: AgentProperties, cfg: RiskConfig = RiskConfig()) -> np.ndarray:
    """Tier 1 per member and mode, tier 2 LAU over modes, tier 3 EU over members, summed over agents."""
    if cfg.eu_mode not in ("avgR", "maxR"):
        raise ValueError("comprehensive risk needs eu_mode avgR or maxR")
    C = np.atleast_2d(cands.x).shape[0]
    total = np.zeros(C)
    for f, r in zip(forecasts, mode_risks(cands, forecasts, ego_props, cfg.harm)):
        per_member = aggregate_lau(r, f.weights[None], cfg.lau_mode)
        total += aggregate_eu(per_member, cfg.eu_mode)
    return total


# ---------------------------------------------------------------------------
# ensemble calibration


@dataclass(frozen=True, eq=False)
class CalibratedGaussian:
    """Moment-matched ensemble Gaussian per step: mean (T, 2) and three covariances (T, 2, 2)."""

    mean: np.ndarray
    total: np.ndarray
    sau: np.ndarray
    eu: np.ndarray


def _member_moments(ep: EnsemblePrediction | AgentForecast):
    if isinstance(ep, AgentForecast):
        k = np.argmax(ep.weights, axis=1)
        idx = np.arange(ep.M)
        return ep.means[idx, k], ep.covs[idx, k]
    if ep.M < 1:
        raise ValueError("empty ensemble")
    mus = np.stack([m.mean_trajectory() for m in ep.members])
    covs = np.stack([m.covs[:, m.most_likely_mode()] for m in ep.members])
    return mus, covs


def calibrate_ensemble(ep: EnsemblePrediction | AgentForecast) -> CalibratedGaussian:
    """mu = E[mu_m]; total = E[S_m + mu_m mu_m^T] - mu mu^T; sau = E[S_m]; eu = diag Var[mu_m].

    Multimodal members contribute their most likely mode.
    """
    mus, covs = _member_moments(ep)
    mu = mus.mean(axis=0)
    second = (covs + np.einsum("mti,mtj->mtij", mus, mus)).mean(axis=0)
    total = second - np.einsum("ti,tj->tij", mu, mu)
    total = 0.5 * (total + np.swapaxes(total, -1, -2))
    sau = covs.mean(axis=0)
    var = ((mus - mu) ** 2).mean(axis=0)
    eu = np.zeros_like(sau)
    eu[:, 0, 0] = var[:, 0]
    eu[:, 1, 1] = var[:, 1]
    return CalibratedGaussian(mu, total, sau, eu)


def calibrated_forecast(f: AgentForecast, variant: str, dt: float, floor: float = 1e-4) -> AgentForecast:
    """Collapse an ensemble forecast to one Gaussian per step (variant: total, sau or eu)."""
    cal = calibrate_ensemble(f)
    cov = {"total": cal.total, "sau": cal.sau, "eu": cal.eu}[variant]
    if variant == "eu":
        cov = cov + floor * np.eye(2)
    hd = nominal_headings(cal.mean[:, None], f.origin, f.heading0)[:, 0]
    vel = mean_velocities(cal.mean[:, None], f.origin, dt)[:, 0]
    return AgentForecast(
        f.agent_id, f.props, np.ones((1, 1)), cal.mean[None, None], cov[None, None], hd[None, None], vel[None, None],
        f.origin, f.heading0,
    )


# ---------------------------------------------------------------------------
# ground truth


def ground_truth_risk(cands, truths: Sequence[AgentForecast], ego_props: AgentProperties, cfg: RiskConfig = RiskConfig()):
    """Per-step risk trace (C, T) against true agent futures and its scalar sum_i max_t (C,)."""
    traces = risk_traces(cands, truths, ego_props, cfg.harm)
    ego = np.atleast_2d(cands.x)
    step = np.zeros(ego.shape)
    scalar = np.zeros(ego.shape[0])
    for r in traces:
        step += r[:, 0, 0]
        scalar += r[:, 0, 0].max(axis=-1)
    return step, scalar
