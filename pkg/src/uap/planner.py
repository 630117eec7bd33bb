"""Candidate costs, layered collision checks and tiered trajectory selection.

Total cost per candidate:

    C = k_r C_r + k_b C_b + k_t C_t + k_g C_g

C_r comes from the risk model selected by the uncertainty mode. Candidates are
ranked first by check tier (0: passed all checks, 1: failed the agent check,
2: failed the boundary check), then by cost, then by index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .frenet import BRAKE, CandidateGrid, CandidateSet, DynamicLimits
from .geometry import polyline_segments
from .kernels import overlap_any
from .prediction.gmm import nominal_headings
from .risk import (
    AgentForecast,
    RiskConfig,
    aggregate_lau,
    calibrated_forecast,
    candidate_arrays,
    comprehensive_risk,
    mode_risks,
)
from .scenario import AgentProperties, GoalSpec

UNCERTAINTY_MODES = ("nonUAP", "CV", "SAU", "LAU-only", "SAU&LAU", "EU-only", "SAU&EU", "SAU&LAU&EU")
TIGHT_MODES = ("nonUAP", "CV", "LAU-only", "EU-only")
CHECK_MODES = ("ic", "mc")
PASS, AGENT_FAIL, BOUNDARY_FAIL = 0, 1, 2


@dataclass(frozen=True)
class PlannerConfig:
    name: str = ""
    uncertainty_mode: str = "SAU"
    k_r: float = 10.0
    k_b: float = 5.0
    k_t: float = 1.0
    k_g: float = 0.5
    limits: DynamicLimits = field(default_factory=DynamicLimits)
    cc_th1: float = 0.5
    cc_th2: float = 0.5
    check_mode: str = "mc"
    risk: RiskConfig = field(default_factory=RiskConfig)
    grid: CandidateGrid = field(default_factory=CandidateGrid)
    tight_sigma: float = 0.1
    corridor_half_width: float = 2.0
    checks: bool = True

    def __post_init__(self):
        if self.uncertainty_mode not in UNCERTAINTY_MODES:
            raise ValueError(f"uncertainty_mode must be one of {UNCERTAINTY_MODES}, got {self.uncertainty_mode!r}")
        if self.check_mode not in CHECK_MODES:
            raise ValueError(f"check_mode must be one of {CHECK_MODES}")
        if not (0 <= self.cc_th1 <= 1 and 0 <= self.cc_th2 <= 1):
            raise ValueError("collision-check thresholds must lie in [0, 1]")
        ws = (self.k_r, self.k_b, self.k_t, self.k_g)
        if not all(np.isfinite(w) and w >= 0 for w in ws):
            raise ValueError("cost weights must be finite and >= 0")
        if not (self.tight_sigma > 0 and self.corridor_half_width > 0):
            raise ValueError("tight_sigma and corridor_half_width must be > 0")

    @property
    def label(self) -> str:
        return self.name or self.uncertainty_mode


@dataclass(frozen=True, eq=False)
class CostBreakdown:
    """Per-candidate cost components (arrays of shape (C,))."""

    C_r: np.ndarray
    C_b: np.ndarray
    C_t: np.ndarray
    C_g: np.ndarray
    total: np.ndarray

    @classmethod
    def combine(cls, C_r, C_b, C_t, C_g, cfg: PlannerConfig) -> "CostBreakdown":
        C_r, C_b, C_t, C_g = (np.asarray(c, dtype=float) for c in (C_r, C_b, C_t, C_g))
        total = cfg.k_r * C_r + cfg.k_b * C_b + cfg.k_t * C_t + cfg.k_g * C_g
        return cls(C_r, C_b, C_t, C_g, total)

    def row(self, i: int) -> dict[str, float]:
        return {k: float(getattr(self, k)[i]) for k in ("C_r", "C_b", "C_t", "C_g", "total")}


# ---------------------------------------------------------------------------
# cost components


def boundary_contacts(cands: CandidateSet, boundaries, ego_props: AgentProperties) -> np.ndarray:
    """(C, T) booleans: ego footprint touches any boundary segment at that step."""
    from .geometry import rect_segments_intersect

    x = np.atleast_2d(cands.x)
    seg_a, seg_b = polyline_segments(boundaries)
    if len(seg_a) == 0:
        return np.zeros(x.shape, dtype=bool)
    h = np.atleast_2d(cands.heading)
    y = np.atleast_2d(cands.y)
    # cheap reject: segments far from every footprint sample
    reach = 0.5 * np.hypot(ego_props.length, ego_props.width)
    lo = np.minimum(seg_a, seg_b) - reach
    hi = np.maximum(seg_a, seg_b) + reach
    near = (
        (x[..., None] >= lo[:, 0]) & (x[..., None] <= hi[:, 0]) & (y[..., None] >= lo[:, 1]) & (y[..., None] <= hi[:, 1])
    )
    keep = near.any(axis=(0, 1))
    if not keep.any():
        return np.zeros(x.shape, dtype=bool)
    hit = rect_segments_intersect((x, y, h, ego_props.length, ego_props.width), seg_a[keep], seg_b[keep])
    return (hit & near[..., keep]).any(axis=-1)


def cost_boundary(cands: CandidateSet, boundaries, ego_props: AgentProperties, v_ref: float = 15.0) -> np.ndarray:
    """0 without contact; otherwise min(1, max(0.01, (v/v_ref)^2)) at the first contact step."""
    contact = boundary_contacts(cands, boundaries, ego_props)
    v = np.atleast_2d(cands.v)
    first = np.argmax(contact, axis=1)
    v_hit = v[np.arange(v.shape[0]), first]
    sev = np.clip((v_hit / v_ref) ** 2, 0.01, 1.0)
    return np.where(contact.any(axis=1), sev, 0.0)


def cost_target(cands: CandidateSet, goal: GoalSpec, v_max: float = 15.0) -> np.ndarray:
    """Mean squared relative speed error to the goal speed."""
    v = np.atleast_2d(cands.v)
    if goal.target_speed > 0:
        return np.mean(((v - goal.target_speed) / goal.target_speed) ** 2, axis=1)
    return np.mean(v**2, axis=1) / v_max**2


def cost_global_path(cands: CandidateSet, half_width: float = 2.0) -> np.ndarray:
    """Mean |d| over the horizon divided by the corridor half-width."""
    return np.mean(np.abs(np.atleast_2d(cands.d)), axis=1) / half_width


# ---------------------------------------------------------------------------
# risk dispatch


def risk_cost(cands, forecasts: Sequence[AgentForecast], ego_props: AgentProperties, cfg: PlannerConfig, dt: float) -> np.ndarray:
    """C_r per candidate for the configured uncertainty mode."""
    C = np.atleast_2d(cands.x).shape[0]
    if not forecasts:
        return np.zeros(C)
    rc = cfg.risk
    if any(f.M > 1 for f in forecasts) and rc.eu_mode in ("calibrated-total", "calibrated-sau", "eu-only"):
        variant = {"calibrated-total": "total", "calibrated-sau": "sau", "eu-only": "eu"}[rc.eu_mode]
        forecasts = [calibrated_forecast(f, variant, dt, rc.eu_floor) for f in forecasts]
    if all(f.M == 1 for f in forecasts):
        total = np.zeros(C)
        for f, r in zip(forecasts, mode_risks(cands, forecasts, ego_props, rc.harm)):
            total += aggregate_lau(r[:, 0, :], f.weights[0], rc.lau_mode)
        return total
    return comprehensive_risk(cands, forecasts, ego_props, rc)


def total_cost(
    cands: CandidateSet,
    forecasts: Sequence[AgentForecast],
    ego_props: AgentProperties,
    goal: GoalSpec,
    boundaries,
    cfg: PlannerConfig,
    dt: float,
) -> CostBreakdown:
    C_r = risk_cost(cands, forecasts, ego_props, cfg, dt) if cfg.k_r > 0 else np.zeros(len(cands))
    C_b = cost_boundary(cands, boundaries, ego_props, cfg.risk.harm.v_ref)
    C_t = cost_target(cands, goal, cfg.limits.v_max)
    C_g = cost_global_path(cands, cfg.corridor_half_width)
    return CostBreakdown.combine(C_r, C_b, C_t, C_g, cfg)


# ---------------------------------------------------------------------------
# collision checks


def _mean_hypotheses(means: np.ndarray, origin, heading0: float, props: AgentProperties) -> dict:
    """Footprint arrays (G, T) for mean trajectories of shape (G, T, 2)."""
    G = means.shape[0]
    hd = nominal_headings(np.transpose(means, (1, 0, 2)), np.asarray(origin), heading0).T
    return {
        "mx": means[..., 0],
        "my": means[..., 1],
        "heading": hd,
        "length": np.full(G, props.length),
        "width": np.full(G, props.width),
    }


def agent_check_failures(cands, forecasts: Sequence[AgentForecast], ego_props: AgentProperties, cfg: PlannerConfig) -> np.ndarray:
    """(C,) booleans: candidate fails the layered agent check.

    Per member, an agent fails when the weight of modes whose mean footprint
    overlaps the candidate exceeds cc_th1 (for K=1 this is a plain overlap
    test). With several members, 'ic' checks the integrated trajectory and
    'mc' fails when the fraction of failing members exceeds cc_th2.
    """
    ego = candidate_arrays(cands, ego_props)
    C = ego["x"].shape[0]
    fail = np.zeros(C, dtype=bool)
    for f in forecasts:
        if f.M > 1 and cfg.check_mode == "ic":
            k = np.argmax(f.weights, axis=1)
            integ = f.means[np.arange(f.M), k].mean(axis=0)
            hyp = _mean_hypotheses(integ[None], f.origin, f.heading0, f.props)
            fail |= overlap_any(ego, hyp)[:, 0]
            continue
        hyp = _mean_hypotheses(f.means.reshape(f.M * f.K, f.T, 2), f.origin, f.heading0, f.props)
        ind = overlap_any(ego, hyp).reshape(C, f.M, f.K)
        member_fail = (ind * f.weights[None]).sum(axis=-1) > cfg.cc_th1
        if f.M == 1:
            fail |= member_fail[:, 0]
        else:
            fail |= member_fail.mean(axis=1) > cfg.cc_th2
    return fail


def check_tiers(agent_fail: np.ndarray, boundary_fail: np.ndarray) -> np.ndarray:
    return np.where(boundary_fail, BOUNDARY_FAIL, np.where(agent_fail, AGENT_FAIL, PASS))


def select_optimal(costs: np.ndarray, tiers: np.ndarray, feasible: np.ndarray | None = None) -> int | None:
    """Index of the lowest-cost candidate in the best non-empty tier; ties by index."""
    costs = np.asarray(costs, dtype=float)
    tiers = np.asarray(tiers)
    ok = np.ones(len(costs), dtype=bool) if feasible is None else np.asarray(feasible, dtype=bool)
    if not ok.any():
        return None
    best_tier = tiers[ok].min()
    pool = ok & (tiers == best_tier)
    masked = np.where(pool, costs, np.inf)
    return int(np.argmin(masked))


@dataclass(frozen=True, eq=False)
class PlanResult:
    index: int | None
    tier: int
    costs: CostBreakdown | None
    tiers: np.ndarray
    feasible: np.ndarray
    fallback: bool = False


_RISK_CHUNK = 24


def plan_step(
    cands: CandidateSet,
    forecasts: Sequence[AgentForecast],
    ego_props: AgentProperties,
    goal: GoalSpec,
    boundaries,
    cfg: PlannerConfig,
    feasible: np.ndarray,
    dt: float,
) -> PlanResult:
    """Evaluate feasible candidates and pick one; falls back to maximal braking.

    Infeasible candidates, and candidates whose risk could not change the
    selection, carry NaN risk (and total) in the returned costs.
    """
    idx = np.flatnonzero(feasible)
    n = len(cands)
    tiers = np.full(n, BOUNDARY_FAIL + 1)
    if len(idx) == 0:
        brake = [i for i, k in enumerate(cands.kind) if k == BRAKE]
        return PlanResult(brake[0], BOUNDARY_FAIL + 1, None, tiers, feasible, fallback=True)
    sub = _subset(cands, idx)
    m = len(idx)
    C_b = cost_boundary(sub, boundaries, ego_props, cfg.risk.harm.v_ref)
    C_t = cost_target(sub, goal, cfg.limits.v_max)
    C_g = cost_global_path(sub, cfg.corridor_half_width)
    if cfg.checks:
        agent_fail = agent_check_failures(sub, forecasts, ego_props, cfg)
        boundary_fail = C_b > 0
    else:
        agent_fail = boundary_fail = np.zeros(m, dtype=bool)
    sub_tiers = check_tiers(agent_fail, boundary_fail)
    # Risk is only needed inside the best tier. Since C_r >= 0, candidates are
    # scored in order of their risk-free cost and the search stops once that
    # lower bound exceeds the best total found; the selection is unchanged.
    C_r = np.full(m, np.nan)
    base = cfg.k_b * C_b + cfg.k_t * C_t + cfg.k_g * C_g
    pool = np.flatnonzero(sub_tiers == sub_tiers.min())
    pool = pool[np.argsort(base[pool], kind="stable")]
    best = np.inf
    for start in range(0, len(pool), _RISK_CHUNK):
        chunk = pool[start : start + _RISK_CHUNK]
        if base[chunk[0]] > best:
            break
        if cfg.k_r > 0:
            C_r[chunk] = risk_cost(_subset(sub, chunk), forecasts, ego_props, cfg, dt)
        else:
            C_r[chunk] = 0.0
        best = min(best, float(np.min(cfg.k_r * C_r[chunk] + base[chunk])))
    costs = CostBreakdown.combine(C_r, C_b, C_t, C_g, cfg)
    total = np.where(np.isnan(costs.total), np.inf, costs.total)
    j = select_optimal(total, sub_tiers)
    tiers[idx] = sub_tiers
    return PlanResult(int(idx[j]), int(sub_tiers[j]), _expand(costs, idx, n), tiers, feasible)


def _subset(cands: CandidateSet, idx: np.ndarray) -> CandidateSet:
    from .frenet import _FIELDS

    return CandidateSet(
        cands.t, *(getattr(cands, f)[idx] for f in _FIELDS), kind=tuple(cands.kind[i] for i in idx), target=cands.target[idx]
    )


def _expand(costs: CostBreakdown, idx: np.ndarray, n: int) -> CostBreakdown:
    def full(a):
        out = np.full(n, np.nan)
        out[idx] = a
        return out

    return CostBreakdown(full(costs.C_r), full(costs.C_b), full(costs.C_t), full(costs.C_g), full(costs.total))
