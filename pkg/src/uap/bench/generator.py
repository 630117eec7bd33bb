"""Synthetic conflict scenarios.

Four templates put the ego on a straight two-lane road (ego lane centred on
y = 0, oncoming lane on y = 3.5) and script one conflict agent whose behaviour
is drawn from a small set of modes:

    go        keeps its speed through the conflict zone
    yield     brakes to a stop before the conflict zone and stays there
    hesitate  brakes as if yielding, then accelerates through

The agent's timing is chosen so that it reaches the conflict zone close to the
moment a constant-speed ego would, which makes the scene conflict-bearing.
Optionally a second agent drives straight in the oncoming lane.

crossing    four-way junction, agent crosses from the south or the north
merging     agent merges from a right-hand on-ramp into the ego lane
t-junction  agent leaves a side road on the right, turning right (into the
            ego lane) or left (across it)
oncoming    oncoming agent turns left across the ego lane at a junction
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import wrap_angle
from ..scenario import Agent, AgentProperties, AgentState, GoalSpec, OrientedRectangle, Scenario, save_scenario

TEMPLATES = ("crossing", "merging", "t-junction", "oncoming")
BEHAVIOURS = ("go", "yield", "hesitate")
LANE = 3.5
RIGHT_EDGE = -2.25
LEFT_EDGE = 5.25
JUNCTION_HALF = 5.25


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameter ranges for generated scenarios (speeds in m/s, distances in m)."""

    templates: tuple[str, ...] = TEMPLATES
    dt: float = 0.2
    horizon: int = 15
    history: int = 8
    ego_speed: tuple[float, float] = (7.0, 10.0)
    conflict_x: tuple[float, float] = (35.0, 45.0)
    goal_after_conflict: float = 25.0
    agent_speed: tuple[float, float] = (5.0, 9.0)
    arrival_jitter: tuple[float, float] = (-1.2, 1.2)
    behaviour_probs: tuple[float, float, float] = (0.4, 0.3, 0.3)
    oncoming_prob: float = 0.3
    deadline_factor: float = 2.5

    def __post_init__(self):
        bad = [t for t in self.templates if t not in TEMPLATES]
        if bad or not self.templates:
            raise ValueError(f"unknown templates {bad}; choose from {TEMPLATES}")
        if abs(sum(self.behaviour_probs) - 1.0) > 1e-9:
            raise ValueError("behaviour probabilities must sum to 1")
        if self.dt <= 0 or self.horizon < 1 or self.history < 1:
            raise ValueError("dt, horizon and history must be positive")


# ---------------------------------------------------------------------------
# path and motion helpers

A_LAT = 3.0  # lateral acceleration bounding curve speeds [m/s^2]
A_CRUISE = 1.5  # acceleration back to cruise speed [m/s^2]
CURVE_BRAKE_ON = 1.0  # curve braking starts once this deceleration is required [m/s^2]
LOOKAHEAD = 45.0  # curve anticipation distance [m]


def _arc(center, radius, a0, a1, n=24):
    ang = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


class _Path:
    """Densely resampled polyline with arc-length lookup and curve speed limits."""

    def __init__(self, pts, step=0.25):
        pts = np.asarray(pts, dtype=float)
        keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-9])
        pts = pts[keep]
        seg = np.hypot(*np.diff(pts, axis=0).T)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        self.step = step
        self.length = float(s[-1])
        self.s = np.arange(0.0, self.length + step, step)
        self.xy = np.column_stack([np.interp(self.s, s, pts[:, 0]), np.interp(self.s, s, pts[:, 1])])
        d = np.gradient(self.xy, self.s, axis=0)
        self.heading = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
        kappa = np.abs(np.gradient(self.heading, self.s))
        # short moving maximum so polyline vertices on arcs do not create gaps
        kappa = np.maximum.reduce([np.roll(kappa, k) for k in (-2, -1, 0, 1, 2)])
        with np.errstate(divide="ignore"):
            self.v_lim = np.where(kappa > 1e-6, np.sqrt(A_LAT / kappa), np.inf)

    def locate(self, s):
        """Positions and headings at arc lengths s; linear extrapolation past the ends."""
        s = np.asarray(s, dtype=float)
        x = np.interp(s, self.s, self.xy[:, 0])
        y = np.interp(s, self.s, self.xy[:, 1])
        h = np.interp(s, self.s, self.heading)
        for end, mask in ((0, s < 0), (-1, s > self.length)):
            if np.any(mask):
                ref = self.s[end]
                x = np.where(mask, self.xy[end, 0] + (s - ref) * math.cos(self.heading[end]), x)
                y = np.where(mask, self.xy[end, 1] + (s - ref) * math.sin(self.heading[end]), y)
        return x, y, h

    def project(self, p):
        i = int(np.argmin(np.hypot(self.xy[:, 0] - p[0], self.xy[:, 1] - p[1])))
        return float(self.s[i])

    def curve_accel(self, s: float, v: float) -> float:
        """Constant acceleration that meets every curve speed limit within the lookahead."""
        i0 = int(np.searchsorted(self.s, s))
        i1 = int(np.searchsorted(self.s, s + LOOKAHEAD))
        if i0 >= len(self.s) or i1 <= i0:
            return math.inf
        lim = self.v_lim[i0:i1]
        finite = np.isfinite(lim)
        if not finite.any():
            return math.inf
        ds = np.maximum(self.s[i0:i1][finite] - s, 0.5)
        return float(np.min((lim[finite] ** 2 - v * v) / (2.0 * ds)))


def _simulate(path: _Path, behaviour, v0, s0, n, dt, s_stop=0.0, t_brake=math.inf, t_go=math.inf, v_cruise=None, a_go=2.5, crawl=1.5):
    """Arc length, speed and acceleration for n steps of a scripted speed controller.

    Every behaviour slows for curves; 'yield' additionally brakes to a standstill
    at s_stop from t_brake on, 'hesitate' brakes towards a crawl and accelerates
    again from t_go.
    """
    v_cruise = v0 if v_cruise is None else v_cruise
    s = np.empty(n)
    v = np.empty(n)
    a = np.zeros(n)
    s[0], v[0] = s0, v0
    stopped = False
    for k in range(n - 1):
        t = k * dt
        vk = v[k]
        acc = min(A_CRUISE, (v_cruise - vk) / dt) if vk < v_cruise else max((v_cruise - vk) / dt, -2.0)
        if behaviour == "hesitate" and t >= t_go:
            acc = min(a_go, (v_cruise - vk) / dt) if vk < v_cruise else acc
        ac = path.curve_accel(s[k], vk)
        if ac < -CURVE_BRAKE_ON:
            acc = min(acc, max(ac, -6.0))
        elif ac < 0.0:
            acc = min(acc, 0.0)
        braking = behaviour in ("yield", "hesitate") and t >= t_brake and not (behaviour == "hesitate" and t >= t_go)
        if braking:
            room = max(s_stop - s[k], 0.2)
            if behaviour == "yield":
                acc = min(acc, max(-vk * vk / (2.0 * room), -6.0))
            elif vk > crawl:
                acc = min(acc, max(-(vk * vk - crawl * crawl) / (2.0 * room), -6.0))
            else:
                acc = min(acc, 0.0)
        vn = vk + acc * dt
        if behaviour == "yield" and braking and (vn <= 0.05 or stopped):
            vn, stopped = 0.0, True
        if behaviour == "hesitate" and braking:
            vn = max(vn, min(crawl, vk))
        vn = max(vn, 0.0)
        a[k] = (vn - vk) / dt
        v[k + 1] = vn
        s[k + 1] = s[k] + 0.5 * (vk + vn) * dt
    a[-1] = a[-2] if n > 1 else 0.0
    return s, v, a


def _arrival(s, s_conf, t0, dt):
    k = int(np.searchsorted(s, s_conf))
    if k == 0 or k >= len(s):
        return None
    frac = (s_conf - s[k - 1]) / max(s[k] - s[k - 1], 1e-9)
    return t0 + (k - 1 + frac) * dt


def _states(path: _Path, s, v, a):
    x, y, h = path.locate(s)
    h = wrap_angle(h)
    return tuple(AgentState(float(xi), float(yi), float(vi), float(hi), float(ai)) for xi, yi, vi, hi, ai in zip(x, y, v, h, a))


def _car(aid, rng):
    length = float(rng.uniform(4.2, 4.8))
    return AgentProperties(aid, length, float(rng.uniform(1.8, 2.0)), float(rng.uniform(1300, 1800)), "car")


def _crossing_boundaries(xc, total, south=True, north=True):
    lo, hi = xc - JUNCTION_HALF, xc + JUNCTION_HALF
    far = 40.0
    out = []
    if south:
        out += [((-20.0, RIGHT_EDGE), (lo, RIGHT_EDGE), (lo, RIGHT_EDGE - far)), ((hi, RIGHT_EDGE - far), (hi, RIGHT_EDGE), (total, RIGHT_EDGE))]
    else:
        out += [((-20.0, RIGHT_EDGE), (total, RIGHT_EDGE))]
    if north:
        out += [((-20.0, LEFT_EDGE), (lo, LEFT_EDGE), (lo, LEFT_EDGE + far)), ((hi, LEFT_EDGE + far), (hi, LEFT_EDGE), (total, LEFT_EDGE))]
    else:
        out += [((-20.0, LEFT_EDGE), (total, LEFT_EDGE))]
    return out


# ---------------------------------------------------------------------------
# templates: each returns (agent path, conflict arc length, stop arc length, boundaries)


def _tpl_crossing(rng, xc, total):
    if rng.random() < 0.5:
        lane_x = xc + LANE / 2
        path = _Path([(lane_x, -80.0), (lane_x, 80.0)])
        s_conf = path.project((lane_x, 0.0))
        s_stop = path.project((lane_x, RIGHT_EDGE - 3.5))
    else:
        lane_x = xc - LANE / 2
        path = _Path([(lane_x, 80.0), (lane_x, -80.0)])
        s_conf = path.project((lane_x, 0.0))
        s_stop = path.project((lane_x, LEFT_EDGE + 3.5))
    return path, s_conf, s_stop, _crossing_boundaries(xc, total)


def _tpl_merging(rng, xc, total):
    ang = math.radians(rng.uniform(12.0, 20.0))
    radius = 40.0
    # straight ramp, then a clockwise arc ending tangent to the ego lane at (xc, 0)
    arc = _arc((xc, -radius), radius, math.pi / 2 + ang, math.pi / 2)
    x0, y0 = arc[0]
    ramp_len = 45.0
    start = (x0 - ramp_len * math.cos(ang), y0 - ramp_len * math.sin(ang))
    path = _Path([start, *arc, (xc + 120.0, 0.0)])
    s_conf = path.project((xc, 0.0)) - 4.0
    s_stop = path.project((x0 - 12.0 * math.cos(ang), y0 - 12.0 * math.sin(ang)))
    bounds = [
        ((-20.0, RIGHT_EDGE), (x0 - 30.0, RIGHT_EDGE)),
        ((xc + 4.0, RIGHT_EDGE), (total, RIGHT_EDGE)),
        ((-20.0, LEFT_EDGE), (total, LEFT_EDGE)),
    ]
    return path, s_conf, s_stop, bounds


def _tpl_tjunction(rng, xc, total):
    r_right, r_left = 4.0, 9.0
    if rng.random() < 0.5:
        # right turn from the southern side road into the ego lane
        lane_x = xc - LANE / 2 - 0.25
        pts = [(lane_x, -70.0), (lane_x, -r_right)]
        pts += list(_arc((lane_x + r_right, -r_right), r_right, math.pi, math.pi / 2)[1:])
        pts += [(xc + 120.0, 0.0)]
        path = _Path(pts)
        s_conf = path.project((lane_x + r_right, 0.0))
    else:
        # left turn across the ego lane into the oncoming lane
        lane_x = xc + LANE / 2
        pts = [(lane_x, -70.0), (lane_x, LANE - r_left)]
        pts += list(_arc((lane_x - r_left, LANE - r_left), r_left, 0.0, math.pi / 2)[1:])
        pts += [(xc - 120.0, LANE)]
        path = _Path(pts)
        s_conf = path.project((lane_x, 0.0))
    s_stop = path.project((lane_x, RIGHT_EDGE - 3.5))
    return path, s_conf, s_stop, _crossing_boundaries(xc, total, south=True, north=False)


def _tpl_oncoming(rng, xc, total):
    r = 5.25
    y0 = LANE
    turn_x = xc + LANE / 2 + 1.5
    pts = [(xc + 120.0, y0), (turn_x, y0)]
    pts += list(_arc((turn_x, y0 - r), r, math.pi / 2, math.pi)[1:])
    pts += [(turn_x - r, -80.0)]
    path = _Path(pts)
    s_conf = path.project((turn_x - r, 0.0))
    s_stop = path.project((turn_x + 4.0, y0))
    return path, s_conf, s_stop, _crossing_boundaries(xc, total)


_TEMPLATES = {"crossing": _tpl_crossing, "merging": _tpl_merging, "t-junction": _tpl_tjunction, "oncoming": _tpl_oncoming}


def _conflict_agent(rng, spec: GeneratorSpec, template: str, xc: float, total: float, t_ego: float, n_steps: int):
    path, s_conf, s_stop, bounds = _TEMPLATES[template](rng, xc, total)
    beh = BEHAVIOURS[int(rng.choice(3, p=spec.behaviour_probs))]
    dt, hist = spec.dt, spec.history
    v_a = float(rng.uniform(*spec.agent_speed))
    t_arrive = t_ego + float(rng.uniform(*spec.arrival_jitter))
    t0 = -hist * dt
    if beh == "go":
        # shift the start until the agent reaches the conflict point on time
        s0 = s_conf - v_a * (t_arrive - t0)
        for _ in range(8):
            prof = _simulate(path, "go", v_a, s0, n_steps, dt)
            t_hit = _arrival(prof[0], s_conf, t0, dt)
            if t_hit is None:
                break
            err = t_hit - t_arrive
            if abs(err) < 0.02:
                break
            s0 += err * v_a
    else:
        t_brake = float(rng.uniform(2.0, 3.5))
        s0 = s_stop - v_a * t_brake - v_a**2 / (2.0 * float(rng.uniform(1.5, 3.0)))
        if beh == "yield":
            prof = _simulate(path, "yield", v_a, s0, n_steps, dt, s_stop=s_stop, t_brake=t_brake)
        else:
            best = None
            for t_go in np.arange(t_brake + 0.4, t_brake + 6.0, dt):
                cand = _simulate(path, "hesitate", v_a, s0, n_steps, dt, s_stop=s_stop, t_brake=t_brake, t_go=t_go)
                t_hit = _arrival(cand[0], s_conf, t0, dt)
                if t_hit is None:
                    continue
                err = abs(t_hit - t_arrive)
                if best is None or err < best[0]:
                    best = (err, cand)
            prof = best[1] if best is not None else cand
    return path, beh, prof, bounds


def generate_scenario(spec: GeneratorSpec, template: str, seed: int, name: str = "") -> Scenario:
    rng = np.random.default_rng(seed)
    dt = spec.dt
    v_e = float(rng.uniform(*spec.ego_speed))
    xc = float(rng.uniform(*spec.conflict_x))
    x_goal = xc + spec.goal_after_conflict
    total = x_goal + 60.0
    t_ego = xc / v_e
    deadline = int(math.ceil(spec.deadline_factor * x_goal / v_e / dt))
    n_steps = spec.history + deadline + spec.horizon + 2
    ego_props = AgentProperties("ego", 4.5, 2.0, 1500.0, "car")
    agents = []
    path, beh, (s, v, a), bounds = _conflict_agent(rng, spec, template, xc, total, t_ego, n_steps)
    agents.append(Agent(_car("a0", rng), _states(path, s, v, a), start_step=-spec.history))
    if rng.random() < spec.oncoming_prob:
        vo = float(rng.uniform(6.0, 10.0))
        x0 = float(rng.uniform(x_goal, x_goal + 50.0))
        opath = _Path([(x0 + 200.0, LANE), (-200.0, LANE)])
        so = opath.project((x0, LANE)) - vo * spec.history * dt
        s2, v2, a2 = _simulate(opath, "go", vo, so, n_steps, dt)
        agents.append(Agent(_car("a1", rng), _states(opath, s2, v2, a2), start_step=-spec.history))
    goal = GoalSpec(OrientedRectangle(x_goal, 0.0, 0.0, 10.0, 4.0), v_e, deadline)
    ref = ((-20.0, 0.0), (total, 0.0))
    ego_state = AgentState(0.0, 0.0, v_e, 0.0, 0.0)
    name = name or f"{template}-{seed}"
    bnds = tuple(tuple((float(x), float(y)) for x, y in b) for b in bounds)
    return Scenario(dt, spec.horizon, ego_props, ego_state, goal, ref, tuple(agents), bnds, name)


def generate_scenarios(spec: GeneratorSpec, n: int, seed: int, template: str | None = None) -> list[Scenario]:
    """n scenarios; templates cycle through ``spec.templates`` unless one is given."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if template is not None and template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}")
    seeds = np.random.SeedSequence(seed).generate_state(n)
    out = []
    for i in range(n):
        tpl = template or spec.templates[i % len(spec.templates)]
        out.append(generate_scenario(spec, tpl, int(seeds[i]), name=f"{tpl}-{seed}-{i:04d}"))
    return out


def write_scenarios(scenarios, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for sc in scenarios:
        p = out / f"{sc.name}.json"
        save_scenario(sc, p)
        paths.append(p)
    return paths


def split_scenarios(scenarios, ratio=(3, 1, 1)):
    """Train / validation / test split in the given proportions (order preserved)."""
    n = len(scenarios)
    tot = sum(ratio)
    n_tr = n * ratio[0] // tot
    n_va = n * ratio[1] // tot
    return scenarios[:n_tr], scenarios[n_tr : n_tr + n_va], scenarios[n_tr + n_va :]
