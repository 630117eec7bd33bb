"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uap.geometry import OrientedRectangle
from uap.scenario import Agent, AgentProperties, AgentState, GoalSpec, Scenario

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected by tests/test_acceptance.py and echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


EGO = AgentProperties("ego", 4.5, 2.0, 1500.0)


def car(aid: str = "a0", length: float = 4.5, width: float = 2.0, mass: float = 1500.0, kind: str = "car") -> AgentProperties:
    return AgentProperties(aid, length, width, mass, kind)


def straight_agent(aid, x0, y0, heading, v, n, start_step=0, props=None) -> Agent:
    """Constant-velocity agent with ``n`` states starting at ``start_step``."""
    c, s = math.cos(heading), math.sin(heading)
    states = tuple(AgentState(x0 + c * v * 0.2 * k, y0 + s * v * 0.2 * k, v, heading) for k in range(n))
    return Agent(props or car(aid), states, start_step)


def straight_scenario(agents=(), v0: float = 8.0, goal_x: float = 60.0, deadline: int = 80, boundaries=(), name: str = "fixture") -> Scenario:
    goal = GoalSpec(OrientedRectangle(goal_x, 0.0, 0.0, 10.0, 4.0), v0, deadline)
    return Scenario(
        0.2, 15, EGO, AgentState(0.0, 0.0, v0, 0.0), goal, ((-20.0, 0.0), (goal_x + 80.0, 0.0)),
        tuple(agents), tuple(boundaries), name,
    )


def unavoidable_scenario() -> Scenario:
    """A road-wide truck drives head-on into the ego lane between two walls."""
    truck = car("truck", length=10.0, width=6.0, mass=20000.0, kind="truck")
    agent = straight_agent("truck", 40.0, 0.0, math.pi, 12.0, 120, start_step=-8, props=truck)
    walls = (((-20.0, -3.2), (200.0, -3.2)), ((-20.0, 3.2), (200.0, 3.2)))
    return straight_scenario([agent], v0=8.0, goal_x=80.0, deadline=60, boundaries=walls, name="unavoidable")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
