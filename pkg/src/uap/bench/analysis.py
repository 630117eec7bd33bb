"""Directional comparisons of collision rates between planner configurations.

Both checks work on integer collision counts so that equalities such as a
gap of exactly 0.05 are not lost to float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..rollout import COLLISION

ORDERING = ("SAU&LAU&EU", "SAU&EU", "SAU", "nonUAP")
EU_CONFIGS = ("SAU&EU", "SAU&LAU&EU")


def collision_rates(episodes) -> dict[tuple[str, str], Fraction]:
    """Exact CR per (config, injector)."""
    hits: dict[tuple[str, str], list[int]] = {}
    for e in episodes:
        h = hits.setdefault((e.config, e.injector), [0, 0])
        h[0] += e.outcome == COLLISION
        h[1] += 1
    return {k: Fraction(c, n) for k, (c, n) in hits.items()}


@dataclass(frozen=True)
class OrderingResult:
    passed: bool
    rates: dict[str, float]
    gap: float

    def line(self) -> str:
        chain = " <= ".join(f"{c} {self.rates[c]:.3f}" for c in self.rates)
        return f"{chain}; gap {self.gap:.3f}"


def ordering_check(episodes, injector: str = "clean", order=ORDERING, min_gap: float = 0.05) -> OrderingResult:
    """CR must be non-decreasing along ``order`` and the last exceed the first by ``min_gap``."""
    cr = collision_rates(episodes)
    rates = [cr[(c, injector)] for c in order]
    monotone = all(a <= b for a, b in zip(rates, rates[1:]))
    gap = rates[-1] - rates[0]
    passed = monotone and gap >= Fraction(min_gap).limit_denominator(10**6)
    return OrderingResult(passed, {c: float(r) for c, r in zip(order, rates)}, float(gap))


@dataclass(frozen=True)
class RobustnessResult:
    passed: bool
    degradation: dict[str, float]
    reference: str

    def line(self) -> str:
        parts = ", ".join(f"{c} {d:+.3f}" for c, d in self.degradation.items())
        return f"CR degradation: {parts} (each EU config must be <= {self.reference})"


def robustness_check(
    episodes, perturbed: str, clean: str = "clean", reference: str = "SAU", configs=EU_CONFIGS
) -> RobustnessResult:
    """Each EU-bearing config's CR increase under ``perturbed`` is at most the reference config's."""
    cr = collision_rates(episodes)
    deg = {c: cr[(c, perturbed)] - cr[(c, clean)] for c in (reference, *configs)}
    passed = all(deg[c] <= deg[reference] for c in configs)
    return RobustnessResult(passed, {c: float(d) for c, d in deg.items()}, reference)
