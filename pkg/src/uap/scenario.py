"""Scenario data model, JSON ingestion, footprints and perception injectors."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .geometry import (
    OrientedRectangle,
    polyline_segments,
    rect_segments_intersect,
    segments_intersect,
)

SCHEMA_VERSION = 1
AGENT_KINDS = ("car", "truck", "pedestrian-like")


class ScenarioError(ValueError):
    """Raised for malformed or invalid scenario files."""


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    v: float
    heading: float
    a: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.v, self.heading, self.a)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite state {vals}")
        if self.v < 0:
            raise ValueError(f"speed must be >= 0, got {self.v}")
        if not (-math.pi < self.heading <= math.pi):
            raise ValueError(f"heading must lie in (-pi, pi], got {self.heading}")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return self.v * np.array([math.cos(self.heading), math.sin(self.heading)])


@dataclass(frozen=True)
class AgentProperties:
    id: str
    length: float
    width: float
    mass: float
    kind: str = "car"

    def __post_init__(self):
        if not (self.width > 0 and self.length >= self.width):
            raise ValueError(f"need length >= width > 0, got {self.length}x{self.width}")
        if not self.mass > 0:
            raise ValueError(f"mass must be > 0, got {self.mass}")
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Agent:
    """A scripted agent; ``states[j]`` holds its ground truth at step ``start_step + j``."""

    properties: AgentProperties
    states: tuple[AgentState, ...]
    start_step: int = 0

    def __post_init__(self):
        if len(self.states) < 1:
            raise ValueError("agent trajectory needs at least one state")

    @property
    def id(self) -> str:
        return self.properties.id

    @property
    def end_step(self) -> int:
        return self.start_step + len(self.states) - 1

    def state_at(self, step: int) -> AgentState | None:
        j = step - self.start_step
        if 0 <= j < len(self.states):
            return self.states[j]
        return None

    def history(self, step: int, length: int) -> list[AgentState]:
        """States at steps ``step-length+1 .. step`` that exist (oldest first)."""
        lo = max(step - length + 1, self.start_step)
        return [self.states[k - self.start_step] for k in range(lo, step + 1) if self.state_at(k)]

    def positions(self) -> np.ndarray:
        return np.array([[s.x, s.y] for s in self.states])


@dataclass(frozen=True)
class GoalSpec:
    target_region: OrientedRectangle
    target_speed: float
    deadline: int

    def __post_init__(self):
        if not self.target_speed >= 0:
            raise ValueError(f"target_speed must be >= 0, got {self.target_speed}")
        if not self.deadline > 0:
            raise ValueError(f"deadline must be > 0, got {self.deadline}")


@dataclass(frozen=True)
class Scenario:
    dt: float
    horizon: int
    ego: AgentProperties
    ego_state: AgentState
    goal: GoalSpec
    reference_path: tuple[tuple[float, float], ...]
    agents: tuple[Agent, ...] = ()
    boundaries: tuple[tuple[tuple[float, float], ...], ...] = ()
    name: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if not (isinstance(self.horizon, int) and self.horizon > 0):
            raise ValueError(f"horizon must be a positive integer, got {self.horizon}")
        pts = np.asarray(self.reference_path, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("reference_path needs >= 2 points")
        if np.any(np.hypot(*np.diff(pts, axis=0).T) <= 0):
            raise ValueError("reference_path has repeated consecutive points")
        ids = [a.id for a in self.agents] + [self.ego.id]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")

    @property
    def horizon_seconds(self) -> float:
        return self.dt * self.horizon

    def agent(self, agent_id: str) -> Agent:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)


# ---------------------------------------------------------------------------
# serialisation


def _state_dict(s: AgentState) -> dict:
    return {"x": s.x, "y": s.y, "v": s.v, "heading": s.heading, "a": s.a}


def _props_dict(p: AgentProperties) -> dict:
    return {"id": p.id, "length": p.length, "width": p.width, "mass": p.mass, "kind": p.kind}


def _rect_dict(r: OrientedRectangle) -> dict:
    return {"center": [r.x, r.y], "heading": r.heading, "length": r.length, "width": r.width}


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "dt": sc.dt,
        "horizon": sc.horizon,
        "ego": {"properties": _props_dict(sc.ego), "state": _state_dict(sc.ego_state)},
        "agents": [
            {
                "properties": _props_dict(a.properties),
                "start_step": a.start_step,
                "states": [_state_dict(s) for s in a.states],
            }
            for a in sc.agents
        ],
        "boundaries": [[list(p) for p in line] for line in sc.boundaries],
        "reference_path": [list(p) for p in sc.reference_path],
        "goal": {
            "target_region": _rect_dict(sc.goal.target_region),
            "target_speed": sc.goal.target_speed,
            "deadline": sc.goal.deadline,
        },
    }


def dumps_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=1) + "\n"


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dumps_scenario(sc))


class _Reader:
    """Pulls typed fields out of nested dicts, tracking the field path for errors."""

    def __init__(self, source: str):
        self.source = source

    def fail(self, where: str, msg: str):
        raise ScenarioError(f"{self.source}: field '{where}': {msg}")

    def get(self, d: Any, key: str, where: str):
        if not isinstance(d, dict):
            self.fail(where, "expected an object")
        if key not in d:
            self.fail(f"{where}.{key}".lstrip("."), "missing")
        return d[key]

    def num(self, d, key, where) -> float:
        v = self.get(d, key, where)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"{where}.{key}".lstrip("."), f"expected a number, got {v!r}")
        return float(v)

    def integer(self, d, key, where) -> int:
        v = self.get(d, key, where)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(f"{where}.{key}".lstrip("."), f"expected an integer, got {v!r}")
        return v

    def build(self, where: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValueError as e:
            self.fail(where, str(e))

    def points(self, v, where) -> tuple[tuple[float, float], ...]:
        if not isinstance(v, list):
            self.fail(where, "expected a list of [x, y] points")
        out = []
        for i, p in enumerate(v):
            if (
                not isinstance(p, list)
                or len(p) != 2
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in p)
            ):
                self.fail(f"{where}[{i}]", f"expected [x, y], got {p!r}")
            out.append((float(p[0]), float(p[1])))
        return tuple(out)

    def state(self, d, where) -> AgentState:
        vals = {k: self.num(d, k, where) for k in ("x", "y", "v", "heading")}
        vals["a"] = float(d.get("a", 0.0)) if isinstance(d, dict) else 0.0
        return self.build(where, AgentState, **vals)

    def props(self, d, where) -> AgentProperties:
        ident = self.get(d, "id", where)
        kind = d.get("kind", "car")
        return self.build(
            where,
            AgentProperties,
            id=str(ident),
            length=self.num(d, "length", where),
            width=self.num(d, "width", where),
            mass=self.num(d, "mass", where),
            kind=kind,
        )

    def rect(self, d, where) -> OrientedRectangle:
        c = self.points([self.get(d, "center", where)], f"{where}.center")[0]
        return self.build(
            where,
            OrientedRectangle,
            c[0],
            c[1],
            self.num(d, "heading", where),
            self.num(d, "length", where),
            self.num(d, "width", where),
        )


def scenario_from_dict(d: dict, source: str = "<dict>") -> Scenario:
    r = _Reader(source)
    version = r.get(d, "schema_version", "")
    if version != SCHEMA_VERSION:
        r.fail("schema_version", f"unsupported version {version!r}")
    dt = r.num(d, "dt", "")
    if not (math.isfinite(dt) and dt > 0):
        r.fail("dt", f"must be > 0, got {dt}")
    horizon = r.integer(d, "horizon", "")
    if horizon <= 0:
        r.fail("horizon", f"must be > 0, got {horizon}")

    ego_d = r.get(d, "ego", "")
    ego = r.props(r.get(ego_d, "properties", "ego"), "ego.properties")
    ego_state = r.state(r.get(ego_d, "state", "ego"), "ego.state")

    agents = []
    raw_agents = r.get(d, "agents", "")
    if not isinstance(raw_agents, list):
        r.fail("agents", "expected a list")
    for i, ad in enumerate(raw_agents):
        w = f"agents[{i}]"
        props = r.props(r.get(ad, "properties", w), f"{w}.properties")
        start = ad.get("start_step", 0) if isinstance(ad, dict) else 0
        if isinstance(start, bool) or not isinstance(start, int):
            r.fail(f"{w}.start_step", f"expected an integer, got {start!r}")
        raw_states = r.get(ad, "states", w)
        if not isinstance(raw_states, list) or not raw_states:
            r.fail(f"{w}.states", "expected a non-empty list")
        states = tuple(r.state(s, f"{w}.states[{j}]") for j, s in enumerate(raw_states))
        agents.append(Agent(props, states, start))

    raw_bounds = r.get(d, "boundaries", "")
    if not isinstance(raw_bounds, list):
        r.fail("boundaries", "expected a list of polylines")
    boundaries = tuple(r.points(b, f"boundaries[{i}]") for i, b in enumerate(raw_bounds))
    path = r.points(r.get(d, "reference_path", ""), "reference_path")

    gd = r.get(d, "goal", "")
    goal = r.build(
        "goal",
        GoalSpec,
        r.rect(r.get(gd, "target_region", "goal"), "goal.target_region"),
        r.num(gd, "target_speed", "goal"),
        r.integer(gd, "deadline", "goal"),
    )
    return r.build(
        "reference_path" if len(path) < 2 else "",
        Scenario,
        dt=dt,
        horizon=horizon,
        ego=ego,
        ego_state=ego_state,
        goal=goal,
        reference_path=path,
        agents=tuple(agents),
        boundaries=boundaries,
        name=str(d.get("name", "")),
    )


def loads_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    return scenario_from_dict(d, source)


def load_scenario(path) -> Scenario:
    path = Path(path)
    return loads_scenario(path.read_text(), str(path))


# ---------------------------------------------------------------------------
# footprints


def footprint(state: AgentState, props: AgentProperties) -> OrientedRectangle:
    return OrientedRectangle(state.x, state.y, state.heading, props.length, props.width)


def ego_sub_rectangles(fp: OrientedRectangle) -> tuple[OrientedRectangle, ...]:
    """Split a footprint into rear/middle/front thirds and axis-align each piece.

    Each piece keeps size ``length/3 x width`` but is laid along the x-axis,
    which lets rectangle probabilities be computed from bivariate normal CDFs.
    """
    c, s = math.cos(fp.heading), math.sin(fp.heading)
    third = fp.length / 3.0
    return tuple(
        OrientedRectangle(fp.x + k * third * c, fp.y + k * third * s, 0.0, third, fp.width)
        for k in (-1, 0, 1)
    )


# ---------------------------------------------------------------------------
# observations and perception limits


@dataclass(frozen=True)
class ObservationFrame:
    """Observed agent histories (oldest first) and visibility flags, keyed by agent id."""

    histories: dict[str, tuple[AgentState, ...]] = field(default_factory=dict)
    visible: dict[str, bool] = field(default_factory=dict)

    def visible_ids(self) -> list[str]:
        return [k for k, v in self.visible.items() if v]


def observe(scenario: Scenario, step: int, history_len: int) -> ObservationFrame:
    """Ground-truth observation frame of all agents present at ``step``."""
    hist, vis = {}, {}
    for a in scenario.agents:
        if a.state_at(step) is None:
            continue
        hist[a.id] = tuple(a.history(step, history_len))
        vis[a.id] = True
    return ObservationFrame(hist, vis)


def _noisy(s: AgentState, dx: float, dy: float) -> AgentState:
    return replace(s, x=s.x + dx, y=s.y + dy)


def apply_noise(frame: ObservationFrame, sigma: float, seed: int) -> ObservationFrame:
    """Add i.i.d. N(0, sigma^2) noise to every observed x and y."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return frame
    rng = np.random.default_rng(seed)
    out = {}
    for aid, hist in frame.histories.items():
        eps = rng.normal(0.0, sigma, size=(len(hist), 2))
        out[aid] = tuple(_noisy(s, e[0], e[1]) for s, e in zip(hist, eps))
    return ObservationFrame(out, dict(frame.visible))


def apply_occlusion(
    frame: ObservationFrame,
    ego: AgentState,
    occluders: Sequence[OrientedRectangle] = (),
    boundaries: Sequence[Sequence[Sequence[float]]] = (),
    exclude: dict[str, Sequence[int]] | None = None,
) -> ObservationFrame:
    """Hide agents whose centre is not in line of sight from the ego centre.

    ``occluders`` are footprints (typically other agents), ``boundaries`` are
    polylines. ``exclude`` maps an agent id to indices into ``occluders`` that
    belong to that agent itself and must not block its own line of sight.
    """
    exclude = exclude or {}
    seg_a, seg_b = polyline_segments(boundaries)
    hist, vis = {}, {}
    for aid, states in frame.histories.items():
        if not frame.visible.get(aid, False) or not states:
            hist[aid], vis[aid] = (), False
            continue
        target = states[-1]
        p, q = (ego.x, ego.y), (target.x, target.y)
        blocked = any(segments_intersect(p, q, a, b) for a, b in zip(seg_a, seg_b))
        if not blocked and occluders:
            skip = set(exclude.get(aid, ()))
            for j, r in enumerate(occluders):
                if j in skip:
                    continue
                hit = rect_segments_intersect(
                    (r.x, r.y, r.heading, r.length, r.width),
                    np.array([p]),
                    np.array([q]),
                )
                if bool(np.asarray(hit).ravel()[0]):
                    blocked = True
                    break
        hist[aid] = () if blocked else states
        vis[aid] = not blocked
    return ObservationFrame(hist, vis)


def goal_reached(state: AgentState, goal: GoalSpec, step: int) -> bool:
    if step > goal.deadline:
        return False
    return goal.target_region.contains(state.x, state.y, tol=1e-12)
