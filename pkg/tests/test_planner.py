import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uap.frenet import BRAKE, CandidateSet, FrenetState, ReferencePath, feasible_mask, generate_candidates, generate_emergency
from uap.geometry import OrientedRectangle
from uap.planner import (
    AGENT_FAIL,
    BOUNDARY_FAIL,
    PASS,
    CostBreakdown,
    PlannerConfig,
    agent_check_failures,
    check_tiers,
    cost_boundary,
    cost_global_path,
    cost_target,
    plan_step,
    select_optimal,
)
from uap.prediction.model import ModelConfig
from uap.prediction.synthetic import TrackSpec, synthetic_tracks
from uap.prediction.train import TrainConfig, train_two_phase
from uap.risk import AgentForecast, aggregate_lau
from uap.rollout import COLLISION, SUCCESS, PredictorBank, run_rollout
from uap.scenario import GoalSpec

from conftest import EGO, car, straight_agent, straight_scenario, unavoidable_scenario


def cand_set(x, y, v, heading, d=None) -> CandidateSet:
    """CandidateSet from (C, T) arrays."""
    x, y, v, heading = (np.atleast_2d(np.asarray(a, float)) for a in (x, y, v, heading))
    C, T = x.shape
    z = np.zeros((C, T))
    d = z if d is None else np.atleast_2d(np.asarray(d, float))
    return CandidateSet(0.2 * np.arange(1, T + 1), x, y, v, heading, z, z, z, z, d, z, z, ("primary",) * C, np.zeros((C, 3)))


def goal(speed=5.0):
    return GoalSpec(OrientedRectangle(50, 0, 0, 10, 4), speed, 50)


def forecast(means, weights):
    """AgentForecast from means (M, K, T, 2) and weights (M, K), heading 0."""
    means = np.asarray(means, float)
    M, K, T = means.shape[:3]
    cov = np.broadcast_to(0.01 * np.eye(2), (M, K, T, 2, 2)).copy()
    return AgentForecast("a0", car(), np.asarray(weights, float), means, cov, np.zeros((M, K, T)), np.zeros((M, K, T, 2)))


# -- cost components ----------------------------------------------------------------------


WALL = [((-50.0, 3.0), (100.0, 3.0))]


def test_boundary_cost_far_is_zero():
    c = cand_set(np.linspace(0, 10, 5), np.zeros(5), np.full(5, 10.0), np.zeros(5))
    assert cost_boundary(c, WALL, EGO)[0] == 0.0


def test_boundary_cost_crossing_at_v_ref_is_one():
    ys = np.linspace(0, 6, 7)
    c = cand_set(np.zeros(7), ys, np.full(7, 15.0), np.full(7, math.pi / 2))
    assert cost_boundary(c, WALL, EGO, v_ref=15.0)[0] == 1.0


def test_boundary_cost_touching_is_positive():
    # ego half-width 1, centre at y = 2: the footprint edge lies on the wall
    c = cand_set(np.linspace(0, 4, 5), np.full(5, 2.0), np.full(5, 4.0), np.zeros(5))
    assert cost_boundary(c, WALL, EGO)[0] > 0.0


def test_target_cost_examples():
    assert cost_target(cand_set(np.zeros(4), np.zeros(4), np.full(4, 5.0), np.zeros(4)), goal(5.0))[0] == 0.0
    assert cost_target(cand_set(np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4)), goal(5.0))[0] == pytest.approx(1.0)
    full = cost_target(cand_set(np.zeros(4), np.zeros(4), np.full(4, 3.0), np.zeros(4)), goal(5.0))[0]
    half = cost_target(cand_set(np.zeros(4), np.zeros(4), np.full(4, 4.0), np.zeros(4)), goal(5.0))[0]
    assert half == pytest.approx(full / 4)
    assert cost_target(cand_set(np.zeros(4), np.zeros(4), np.full(4, 15.0), np.zeros(4)), goal(0.0))[0] == pytest.approx(1.0)


def test_global_path_cost_examples():
    z = np.zeros(4)
    assert cost_global_path(cand_set(z, z, z, z, d=z))[0] == 0.0
    assert cost_global_path(cand_set(z, z, z, z, d=np.full(4, 2.0)), 2.0)[0] == pytest.approx(1.0)
    assert cost_global_path(cand_set(z, z, z, z, d=[0.0, -1.0, 2.0, 3.0]), 2.0)[0] == pytest.approx(0.75)


def test_total_cost_examples():
    ones = PlannerConfig(k_r=1, k_b=1, k_t=1, k_g=1)
    assert CostBreakdown.combine([0.0], [0.0], [0.0], [0.0], ones).total[0] == 0.0
    assert CostBreakdown.combine([0.2], [0.0], [0.5], [0.1], ones).total[0] == pytest.approx(0.8)
    cfg = PlannerConfig()
    b = CostBreakdown.combine([0.3], [0.1], [0.7], [0.2], cfg)
    assert abs(b.total[0] - (10 * 0.3 + 5 * 0.1 + 1 * 0.7 + 0.5 * 0.2)) < 1e-12


def test_planner_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(uncertainty_mode="bogus")
    with pytest.raises(ValueError):
        PlannerConfig(k_r=-1)
    with pytest.raises(ValueError):
        PlannerConfig(cc_th1=1.5)


# -- collision checks -----------------------------------------------------------------------


T = 5
EGO_C = cand_set(np.zeros(T), np.zeros(T), np.zeros(T), np.zeros(T))
HIT = np.zeros((T, 2))
MISS = np.tile([0.0, 30.0], (T, 1))


def test_far_predictions_pass():
    f = forecast([[MISS]], [[1.0]])
    assert not agent_check_failures(EGO_C, [f], EGO, PlannerConfig())[0]


def test_weighted_mode_check():
    f = forecast([[HIT, MISS]], [[0.6, 0.4]])
    assert agent_check_failures(EGO_C, [f], EGO, PlannerConfig(cc_th1=0.5))[0]
    f = forecast([[MISS, HIT]], [[0.6, 0.4]])
    assert not agent_check_failures(EGO_C, [f], EGO, PlannerConfig(cc_th1=0.5))[0]


def test_member_average_check():
    f = forecast([[HIT], [MISS]], [[1.0], [1.0]])
    assert not agent_check_failures(EGO_C, [f], EGO, PlannerConfig(cc_th2=0.6, check_mode="mc"))[0]
    assert agent_check_failures(EGO_C, [f], EGO, PlannerConfig(cc_th2=0.4, check_mode="mc"))[0]


def test_integrated_trajectory_check():
    # the members straddle the ego, so their mean lands on it
    up, down = np.tile([0.0, 6.0], (T, 1)), np.tile([0.0, -6.0], (T, 1))
    f = forecast([[up], [down]], [[1.0], [1.0]])
    assert agent_check_failures(EGO_C, [f], EGO, PlannerConfig(check_mode="ic"))[0]
    assert not agent_check_failures(EGO_C, [f], EGO, PlannerConfig(check_mode="mc"))[0]


# -- selection -------------------------------------------------------------------------------


def test_select_examples():
    assert select_optimal([0.7], [PASS]) == 0
    assert select_optimal([0.5, 0.3, 0.9], [PASS] * 3) == 1
    assert select_optimal([0.1, 0.4], [AGENT_FAIL, PASS]) == 1
    assert select_optimal([0.2, 0.2], [PASS, PASS]) == 0
    assert select_optimal([0.1, 0.2], [PASS, PASS], feasible=[False, False]) is None


def test_check_tier_order():
    tiers = check_tiers(np.array([False, True, False, True]), np.array([False, False, True, True]))
    assert tiers.tolist() == [PASS, AGENT_FAIL, BOUNDARY_FAIL, BOUNDARY_FAIL]


@given(st.lists(st.tuples(st.floats(0, 100), st.sampled_from([PASS, AGENT_FAIL, BOUNDARY_FAIL])), min_size=1, max_size=20))
def test_tier_dominance(items):
    costs, tiers = map(np.array, zip(*items))
    j = select_optimal(costs, tiers)
    assert tiers[j] == tiers.min()
    assert costs[j] == costs[tiers == tiers.min()].min()


@given(st.lists(st.lists(st.floats(0, 1), min_size=3, max_size=3), min_size=2, max_size=8), st.integers(0, 7), st.integers(0, 2), st.floats(0, 1))
def test_maxr_bump_never_improves_rank(risks, i, k, bump):
    r = np.array(risks)
    i = i % len(r)
    base = np.linspace(0, 1, len(r))
    w = np.full(3, 1 / 3)
    before = base + 10 * aggregate_lau(r, w, "maxR")
    r2 = r.copy()
    r2[i, k] = min(1.0, r2[i, k] + bump)
    after = base + 10 * aggregate_lau(r2, w, "maxR")
    assert after[i] >= before[i]
    assert np.sum(after < after[i]) >= np.sum(before < before[i])


PATH = ReferencePath([(-20.0, 0.0), (200.0, 0.0)])


def _cands(v0=8.0, d0=0.0):
    fs = FrenetState(20.0, v0, 0.0, d0, 0.0, 0.0)
    cfg = PlannerConfig()
    c = generate_candidates(PATH, fs, cfg.grid, 0.2, 15).concat(generate_emergency(PATH, fs, cfg.limits, 0.2, 15))
    return c, feasible_mask(c, cfg.limits, 0.2)


@pytest.mark.parametrize("v0, d0", [(8.0, 0.0), (3.0, 0.8), (12.0, -1.0)])
def test_no_risk_no_checks_is_brute_force_argmin(v0, d0):
    c, feas = _cands(v0, d0)
    cfg = PlannerConfig(k_r=0.0, checks=False)
    g = goal(8.0)
    res = plan_step(c, [], EGO, g, WALL, cfg, feas, 0.2)
    brute = cfg.k_b * cost_boundary(c, WALL, EGO) + cfg.k_t * cost_target(c, g) + cfg.k_g * cost_global_path(c)
    brute = np.where(feas, brute, np.inf)
    assert res.index == int(np.argmin(brute))


def test_plan_step_selects_feasible_and_avoids_agent():
    c, feas = _cands()
    block = np.column_stack([20.0 + 8 * 0.2 * np.arange(1, 16) + 12.0, np.zeros(15)])
    f = forecast([[block]], [[1.0]])
    res = plan_step(c, [f], EGO, goal(8.0), (), PlannerConfig(), feas, 0.2)
    assert feas[res.index]
    assert res.tier == PASS
    assert not agent_check_failures(c[res.index], [f], EGO, PlannerConfig())[0]


def test_plan_step_falls_back_to_braking_without_feasible():
    c, _ = _cands()
    res = plan_step(c, [], EGO, goal(8.0), (), PlannerConfig(), np.zeros(len(c), dtype=bool), 0.2)
    assert res.fallback and c.kind[res.index] == BRAKE


# -- rollout ------------------------------------------------------------------------------------------


CV = PlannerConfig(uncertainty_mode="CV")


def test_empty_road_succeeds():
    ep = run_rollout(straight_scenario(), PredictorBank(), CV, seed=0)
    assert ep.outcome == SUCCESS
    assert len(ep.speeds) == ep.steps


def test_unavoidable_head_on_collides():
    ep = run_rollout(unavoidable_scenario(), PredictorBank(), CV, seed=0)
    assert ep.outcome == COLLISION and ep.collided_with == "truck"


@pytest.fixture(scope="module")
def small_bank():
    data = synthetic_tracks(TrackSpec(n=300), 0)
    return PredictorBank(single=train_two_phase(data, ModelConfig(K=1), TrainConfig(epochs_phase1=2, epochs_phase2=1)))


def test_rollout_is_deterministic(small_bank):
    sc = straight_scenario([straight_agent("a0", 30.0, 3.5, math.pi, 4.0, 120, start_step=-8)])
    cfg = PlannerConfig(uncertainty_mode="SAU")
    a = run_rollout(sc, small_bank, cfg, seed=3)
    b = run_rollout(sc, small_bank, cfg, seed=3)
    assert (a.outcome, a.steps, a.speeds, a.predicted_risk, a.gt_risk) == (b.outcome, b.steps, b.speeds, b.predicted_risk, b.gt_risk)
