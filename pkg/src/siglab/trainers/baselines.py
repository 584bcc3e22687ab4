"""Conventional controllers: actuated, fixed-time, and pure precedence."""

from __future__ import annotations

import numpy as np

from ..intersection import PERMISSIVE_LEFT, PROTECTED_LEFT, THROUGH, IntersectionLayout
from ..regulatable import PrecedenceParams, combo_values_from_vec
from ..simulator import TrafficSim
from .dqn import EpisodeResult


def default_actuated_order(layout: IntersectionLayout) -> list[int]:
    """Fixed cycling order: protected lefts first, through traffic last.

    Only combos whose member phases share a turn kind enter the cycle when
    they cover every phase; otherwise all combos cycle in index order.
    """
    rank = {PROTECTED_LEFT: 0, PERMISSIVE_LEFT: 1, THROUGH: 2}
    uniform = []
    for combo in layout.combos:
        turns = {layout.phase_by_id(pid).turn for pid in combo.phases}
        if len(turns) == 1:
            uniform.append((rank[turns.pop()], combo.combo_index))
    covered = {pid for _, idx in uniform for pid in layout.combos[idx].phases}
    if covered == {p.id for p in layout.phases}:
        return [idx for _, idx in sorted(uniform)]
    return [c.combo_index for c in layout.combos]


class ActuatedController:
    """Gap-out / max-out actuation over a fixed combo order.

    Green extends in minimum-phase increments while any served lane of the
    active combo has a queued vehicle or one arriving within the gap window,
    up to the maximum green time; it then advances to the next combo.
    """

    def __init__(self, layout: IntersectionLayout, max_green: float = 300.0,
                 gap: float = 3.0, order: list[int] | None = None):
        self.layout = layout
        self.max_green = max_green
        self.gap = gap
        self.order = order if order is not None else default_actuated_order(layout)
        if not self.order:
            raise ValueError("actuated order is empty")
        self.reset()

    def reset(self) -> None:
        self._pos = 0
        self._green = 0.0

    def action(self, env: TrafficSim, obs=None) -> int:
        combo_idx = self.order[self._pos]
        combo = self.layout.combos[combo_idx]
        min_phase = env.constants.min_phase
        if self._green >= min_phase:
            maxed = self._green + min_phase > self.max_green
            demand = any(env.arrival_within(pid, self.gap)
                         for pid in combo.phases)
            if maxed or not demand:
                self._pos = (self._pos + 1) % len(self.order)
                self._green = min_phase
                return self.order[self._pos]
        self._green += min_phase
        return combo_idx


class FixedTimeController:
    """Cycles combos with configured green splits; fully pretimed."""

    def __init__(self, layout: IntersectionLayout,
                 plan: list[tuple[int, float]], min_phase: float):
        if not plan:
            raise ValueError("fixed-time plan is empty")
        for combo_idx, green_s in plan:
            if combo_idx < 0 or combo_idx >= len(layout.combos):
                raise ValueError(f"plan references unknown combo {combo_idx}")
            if green_s < min_phase:
                raise ValueError(
                    f"plan split {green_s}s shorter than minimum phase")
            if abs(green_s / min_phase - round(green_s / min_phase)) > 1e-9:
                raise ValueError(
                    f"plan split {green_s}s is not a multiple of the "
                    f"minimum phase length {min_phase}s")
        self.layout = layout
        self.plan = [(int(c), float(g)) for c, g in plan]
        self.min_phase = min_phase
        self.cycle_length = sum(g for _, g in self.plan)
        self.reset()

    def reset(self) -> None:
        self._stage = 0
        self._remaining = self.plan[0][1]

    def action(self, env: TrafficSim | None = None, obs=None) -> int:
        if self._remaining < self.min_phase:
            self._stage = (self._stage + 1) % len(self.plan)
            self._remaining = self.plan[self._stage][1]
        combo_idx = self.plan[self._stage][0]
        self._remaining -= self.min_phase
        return combo_idx


class PrecedenceController:
    """Greedy argmax over a fixed precedence parameter set."""

    def __init__(self, codec, params: PrecedenceParams):
        self.codec = codec
        self.params = params

    def reset(self) -> None:
        pass

    def action(self, env: TrafficSim, obs) -> int:
        vec = self.codec.flatten(obs)
        vals = combo_values_from_vec(vec, self.codec, self.params)
        return int(np.argmax(vals))


def run_controller_episode(env: TrafficSim, controller, seed: int,
                           gamma: float = 0.8,
                           max_steps: int = 20_000) -> EpisodeResult:
    """Roll one episode under a baseline controller."""
    obs = env.reset(seed)
    controller.reset()
    discounted = 0.0
    t = 0
    while not env.done and t < max_steps:
        a = controller.action(env, obs)
        obs, reward, done = env.step(a)
        discounted += (gamma ** t) * reward
        t += 1
    m = env.episode_metrics()
    return EpisodeResult(m.avg_delay, m.total_delay, m.vehicles, discounted, t)
