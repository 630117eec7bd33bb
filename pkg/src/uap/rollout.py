"""Closed-loop rolling-horizon simulation of the ego against scripted agents.

Every step the ego observes (optionally occluded and noised) agent histories,
predicts their futures, samples candidates, selects one and executes its
first step. Agents replay their recorded trajectories without reacting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .frenet import (
    ReferencePath,
    generate_candidates,
    generate_emergency,
    feasible_mask,
    project_to_frenet,
)
from .geometry import rects_overlap
from .planner import PlannerConfig, TIGHT_MODES, plan_step
from .prediction.cv import CVConfig, predict_cv
from .prediction.features import history_array
from .prediction.gmm import TrajectoryDistribution
from .prediction.model import GmmRegressor
from .risk import AgentForecast, ground_truth_risk
from .scenario import (
    AgentState,
    ObservationFrame,
    Scenario,
    apply_noise,
    apply_occlusion,
    footprint,
    goal_reached,
    observe,
)

SUCCESS, COLLISION, TIMEOUT = "success", "collision", "timeout"


@dataclass(frozen=True)
class Injectors:
    occlusion: bool = False
    noise: float = 0.0

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError("noise sigma must be >= 0")

    @property
    def label(self) -> str:
        parts = []
        if self.occlusion:
            parts.append("occlusion")
        if self.noise > 0:
            parts.append(f"noise{self.noise:g}")
        return "+".join(parts) or "clean"


@dataclass
class PredictorBank:
    """Trained predictors used by the different uncertainty modes.

    single: K=1 regressor; multi: K>1 regressor; ensemble / ensemble_multi: lists
    of K=1 / K>1 submodels.
    """

    single: GmmRegressor | None = None
    multi: GmmRegressor | None = None
    ensemble: Sequence[GmmRegressor] = ()
    ensemble_multi: Sequence[GmmRegressor] = ()
    cv: CVConfig = field(default_factory=CVConfig)
    history: int = 8

    def models_for(self, mode: str) -> Sequence[GmmRegressor]:
        table = {
            "nonUAP": [self.single],
            "SAU": [self.single],
            "LAU-only": [self.multi],
            "SAU&LAU": [self.multi],
            "EU-only": list(self.ensemble),
            "SAU&EU": list(self.ensemble),
            "SAU&LAU&EU": list(self.ensemble_multi),
        }
        models = table[mode]
        if not models or any(m is None for m in models):
            raise ValueError(f"no trained predictor available for mode {mode!r}")
        return models

    def forecasts(self, mode: str, frame: ObservationFrame, scenario: Scenario, cfg: PlannerConfig) -> list[AgentForecast]:
        out = []
        ids = sorted(frame.visible_ids())
        if not ids:
            return out
        dt, T = scenario.dt, scenario.horizon
        if mode == "CV":
            for aid in ids:
                d = predict_cv(frame.histories[aid], T, dt, self.cv, aid)
                out.append(AgentForecast.from_distribution(d, scenario.agent(aid).properties, dt))
        else:
            models = self.models_for(mode)
            hist = np.stack([history_array(frame.histories[aid], models[0].config.history) for aid in ids])
            per_member = [m.predict_arrays(hist) for m in models]
            for n, aid in enumerate(ids):
                dists = [
                    TrajectoryDistribution(
                        w[n] / w[n].sum(),
                        np.transpose(mu[n], (1, 0, 2)),
                        np.transpose(cov[n], (1, 0, 2, 3)),
                        aid,
                        hist[n, -1, :2],
                        float(hist[n, -1, 3]),
                    )
                    for w, mu, cov in per_member
                ]
                out.append(AgentForecast.from_distributions(dists, scenario.agent(aid).properties, dt))
        if mode in TIGHT_MODES:
            out = [f.with_covariance(cfg.tight_sigma**2 * np.eye(2)) for f in out]
        return out


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    scenario: str
    config: str
    injector: str
    seed: int
    outcome: str
    steps: int
    speeds: tuple[float, ...]
    predicted_risk: tuple[float, ...]
    gt_risk: tuple[float, ...]
    fallbacks: int = 0
    collided_with: str = ""

    @property
    def mean_speed(self) -> float:
        return float(np.mean(self.speeds)) if self.speeds else 0.0


def _collision(scenario: Scenario, ego: AgentState, step: int) -> str:
    fe = footprint(ego, scenario.ego)
    for a in scenario.agents:
        s = a.state_at(step)
        if s is None:
            continue
        fa = footprint(s, a.properties)
        if bool(rects_overlap((fe.x, fe.y, fe.heading, fe.length, fe.width), (fa.x, fa.y, fa.heading, fa.length, fa.width))):
            return a.id
    return ""


def _truth_forecasts(scenario: Scenario, step: int, sigma: float) -> list[AgentForecast]:
    out = []
    for a in scenario.agents:
        fut = [a.state_at(step + t) for t in range(1, scenario.horizon + 1)]
        if all(s is None for s in fut):
            continue
        out.append(AgentForecast.from_truth(fut, a.properties, sigma, a.id))
    return out


def _observe(scenario: Scenario, step: int, ego: AgentState, history: int, inj: Injectors, seed: int) -> ObservationFrame:
    frame = observe(scenario, step, history)
    if inj.occlusion:
        occluders, exclude = [], {}
        for a in scenario.agents:
            s = a.state_at(step)
            if s is None:
                continue
            exclude[a.id] = [len(occluders)]
            occluders.append(footprint(s, a.properties))
        frame = apply_occlusion(frame, ego, occluders, scenario.boundaries, exclude)
    if inj.noise > 0:
        step_seed = int(np.random.SeedSequence([seed, step]).generate_state(1)[0])
        frame = apply_noise(frame, inj.noise, step_seed)
    return frame


def run_rollout(
    scenario: Scenario,
    bank: PredictorBank,
    cfg: PlannerConfig,
    seed: int = 0,
    injectors: Injectors = Injectors(),
) -> EpisodeResult:
    """Simulate one episode until goal, collision or deadline."""
    path = ReferencePath(scenario.reference_path)
    ego = scenario.ego_state
    fs = project_to_frenet(path, ego)
    dt, T = scenario.dt, scenario.horizon
    speeds, pred_risk, gt_risk = [], [], []
    fallbacks = 0
    outcome, hit = TIMEOUT, ""
    step = 0
    while True:
        hit = _collision(scenario, ego, step)
        if hit:
            outcome = COLLISION
            break
        if goal_reached(ego, scenario.goal, step):
            outcome = SUCCESS
            break
        if step >= scenario.goal.deadline:
            outcome = TIMEOUT
            break
        frame = _observe(scenario, step, ego, bank.history, injectors, seed)
        forecasts = bank.forecasts(cfg.uncertainty_mode, frame, scenario, cfg)
        cands = generate_candidates(path, fs, cfg.grid, dt, T, cfg.limits.v_max)
        cands = cands.concat(generate_emergency(path, fs, cfg.limits, dt, T))
        feasible = feasible_mask(cands, cfg.limits, dt)
        plan = plan_step(cands, forecasts, scenario.ego, scenario.goal, scenario.boundaries, cfg, feasible, dt)
        chosen = cands[plan.index]
        fallbacks += int(plan.fallback)
        pred_risk.append(float(plan.costs.C_r[plan.index]) if plan.costs is not None else float("nan"))
        _, gt = ground_truth_risk(chosen, _truth_forecasts(scenario, step, cfg.risk.sigma_gt), scenario.ego, cfg.risk)
        gt_risk.append(float(gt[0]))
        ego = chosen.states[0]
        fs = chosen.frenet_at(0)
        speeds.append(ego.v)
        step += 1
    return EpisodeResult(
        scenario.name, cfg.label, injectors.label, seed, outcome, step,
        tuple(speeds), tuple(pred_risk), tuple(gt_risk), fallbacks, hit,
    )
