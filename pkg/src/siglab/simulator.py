"""Deterministic seeded point-queue intersection simulator.

Vehicles traverse their approach link at free-flow speed, stack in a vertical
queue at the stop line, and discharge one per saturation headway per lane
while a serving phase holds green. Delay therefore equals queued seconds
exactly, and the step reward is the negative of the delay accrued during the
step's wall-clock span, so an episode's return is the negative total delay.

Signal execution: switching combos first shows yellow on every phase losing
right-of-way, then dwells through the classified clearance interval, then
holds the new combo green for the minimum phase length. Decision points fall
only on those boundaries. Safety (no conflicting greens, yellow always
interposed on green-to-red) is auditable via counters checked every sub-step.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .intersection import (
    ClearanceCase,
    ClearanceFlags,
    IntersectionLayout,
    PhaseCombo,
    classify_clearance,
)

STOPPED, APPROACHING, CUM_STOP_TIME, AVG_STOP_TIME, AVG_QUEUE_LEN, AVG_SPEED = range(6)

STATE_VAR_NAMES = (
    "stopped",
    "approaching",
    "cum_stopped_time",
    "avg_stopped_time",
    "avg_queue_len",
    "avg_approach_speed",
)


@dataclass(frozen=True)
class SimConstants:
    """Physical and signal-timing constants of the point-queue model."""

    link_length: float = 300.0       # m
    free_flow_speed: float = 15.0    # m/s
    saturation_headway: float = 2.0  # s per vehicle per lane under green
    yellow: float = 3.0              # s shown to phases losing right-of-way
    min_phase: float = 3.0           # s of green per decision
    detection_range: float | None = None  # m upstream of stop line; None = whole link
    bin_seconds: float = 300.0
    overtime: float = 1800.0         # hard cutoff past the demand horizon

    @property
    def free_flow_time(self) -> float:
        return self.link_length / self.free_flow_speed


class DemandError(ValueError):
    pass


@dataclass(frozen=True)
class DemandProfile:
    """Aggregated arrival counts: (bin_index, movement) -> vehicles."""

    bins: tuple[tuple[int, str, int], ...]

    @property
    def n_bins(self) -> int:
        return max((b for b, _, _ in self.bins), default=-1) + 1

    @property
    def total(self) -> int:
        return sum(c for _, _, c in self.bins)

    def count(self, bin_index: int, movement: str) -> int:
        return sum(c for b, m, c in self.bins
                   if b == bin_index and m == movement)

    def movements(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(m for _, m, _ in self.bins))

    def scaled(self, factor: float) -> "DemandProfile":
        return DemandProfile(tuple((b, m, int(round(c * factor)))
                                   for b, m, c in self.bins))


def load_demand(path, layout: IntersectionLayout | None = None) -> DemandProfile:
    """Parse a `bin,movement,count` CSV; movements must resolve to the layout."""
    known = set(layout.movements()) if layout is not None else None
    rows: list[tuple[int, str, int]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if lineno == 1 and row[0].strip().lower() == "bin":
                continue
            if len(row) != 3:
                raise DemandError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                b = int(row[0])
                movement = row[1].strip()
                count = int(row[2])
            except ValueError as exc:
                raise DemandError(f"{path}:{lineno}: {exc}") from exc
            if b < 0:
                raise DemandError(f"{path}:{lineno}: negative bin index {b}")
            if count < 0:
                raise DemandError(f"{path}:{lineno}: negative count {count}")
            if known is not None and movement not in known:
                raise DemandError(
                    f"{path}:{lineno}: movement {movement!r} not in layout")
            rows.append((b, movement, count))
    return DemandProfile(tuple(rows))


@dataclass
class Vehicle:
    """One vehicle's lifecycle through the point-queue network."""

    id: int
    movement: str
    lane: str
    spawn_time: float
    free_flow_time: float
    exit_time: float | None = None

    @property
    def stop_line_arrival(self) -> float:
        return self.spawn_time + self.free_flow_time

    @property
    def delay(self) -> float | None:
        if self.exit_time is None:
            return None
        return self.exit_time - self.spawn_time - self.free_flow_time


def _movement_stream(seed: int, bin_index: int, movement: str) -> np.random.Generator:
    # bytes of the movement token keep the stream independent of str hashing
    entropy = [seed, bin_index, *movement.encode()]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def spawn_arrivals(
    profile: DemandProfile,
    bin_index: int,
    seed: int,
    bin_seconds: float = 300.0,
) -> list[tuple[str, float]]:
    """Draw (movement, spawn_time) pairs for one bin, uniform over the bin.

    Each (bin, movement) cell draws from its own seeded substream, so
    enlarging a count extends the same sequence instead of reshuffling every
    other cell; the monotone-load sanity property relies on this nesting.
    """
    merged: dict[str, int] = {}
    for b, m, c in profile.bins:
        if b == bin_index:
            merged[m] = merged.get(m, 0) + c
    t0 = bin_index * bin_seconds
    out: list[tuple[str, float]] = []
    for movement in sorted(merged):
        count = merged[movement]
        if count <= 0:
            continue
        rng = _movement_stream(seed, bin_index, movement)
        times = t0 + rng.uniform(0.0, bin_seconds, size=count)
        out.extend((movement, float(t)) for t in times)
    return out


def draw_all_arrivals(
    profile: DemandProfile,
    seed: int,
    bin_seconds: float = 300.0,
) -> list[tuple[str, float]]:
    """All (movement, spawn_time) pairs for an episode, deterministic in seed."""
    out: list[tuple[str, float]] = []
    for b in range(profile.n_bins):
        out.extend(spawn_arrivals(profile, b, seed, bin_seconds))
    return out


@dataclass(frozen=True)
class SignalState:
    """Green/yellow/red partition plus timing context."""

    green: frozenset[int]
    yellow: frozenset[int]
    red: frozenset[int]
    phase_timer: float
    in_clearance: bool
    clearance_remaining: float = 0.0


@dataclass
class Observation:
    """Sensor snapshot at a decision point.

    ``phase_states`` is an (n_phases, 6) matrix over the layout's phases in
    id order: stopped count, approaching count, cumulative stopped time,
    average stopped time, average queue length, average approach speed.
    ``clearance_flags[c]`` classifies the transition from the current combo
    to candidate combo c.
    """

    layout: IntersectionLayout
    clock: float
    phase_states: np.ndarray
    clearance_flags: list[ClearanceFlags]
    signal: SignalState
    current_combo: int

    def phase_state(self, phase_id: int) -> np.ndarray:
        return self.phase_states[self._phase_row(phase_id)]

    def _phase_row(self, phase_id: int) -> int:
        for row, p in enumerate(self.layout.phases):
            if p.id == phase_id:
                return row
        raise KeyError(phase_id)


class ObservationCodec:
    """Fixed flattening of Observations into feature vectors.

    Layout: per-phase state variables (6 each, phases in id order), then
    per-combo clearance flags (4 each), then per-phase signal one-hots
    (green/yellow/red). Raw values, no standardization; networks apply their
    own fixed input scales.
    """

    def __init__(self, layout: IntersectionLayout):
        self.layout = layout
        self.n_phases = len(layout.phases)
        self.n_combos = len(layout.combos)
        self.n_features = 6 * self.n_phases + 4 * self.n_combos + 3 * self.n_phases
        self._phase_row = {p.id: i for i, p in enumerate(layout.phases)}

    def phase_slice(self, phase_id: int) -> slice:
        row = self._phase_row[phase_id]
        return slice(6 * row, 6 * row + 6)

    def flags_slice(self, combo_index: int) -> slice:
        base = 6 * self.n_phases
        return slice(base + 4 * combo_index, base + 4 * combo_index + 4)

    def signal_slice(self, phase_id: int) -> slice:
        base = 6 * self.n_phases + 4 * self.n_combos
        row = self._phase_row[phase_id]
        return slice(base + 3 * row, base + 3 * row + 3)

    def flatten(self, obs: Observation) -> np.ndarray:
        vec = np.zeros(self.n_features)
        vec[:6 * self.n_phases] = obs.phase_states.ravel()
        for c in range(self.n_combos):
            vec[self.flags_slice(c)] = obs.clearance_flags[c].as_array()
        for p in self.layout.phases:
            sl = self.signal_slice(p.id)
            if p.id in obs.signal.green:
                vec[sl.start] = 1.0
            elif p.id in obs.signal.yellow:
                vec[sl.start + 1] = 1.0
            else:
                vec[sl.start + 2] = 1.0
        return vec

    def combo_state_matrix(self, vec: np.ndarray, combo: PhaseCombo) -> np.ndarray:
        return np.stack([vec[self.phase_slice(pid)] for pid in combo.phases])

    def combo_flags(self, vec: np.ndarray, combo_index: int) -> np.ndarray:
        return vec[self.flags_slice(combo_index)]

    def default_scales(self, constants: SimConstants) -> np.ndarray:
        """Fixed per-feature input scales for network standardization."""
        scales = np.ones(self.n_features)
        per_phase = np.array([10.0, 10.0, 300.0, 60.0, 5.0,
                              constants.free_flow_speed])
        for row in range(self.n_phases):
            scales[6 * row:6 * row + 6] = per_phase
        return scales


@dataclass
class LaneState:
    arrivals: list[Vehicle] = field(default_factory=list)
    arrival_times: list[float] = field(default_factory=list)
    ptr: int = 0
    queue: list[Vehicle] = field(default_factory=list)
    last_departure: float = -np.inf
    serving: tuple[int, ...] = ()


@dataclass
class EpisodeMetrics:
    total_delay: float
    vehicles: int
    avg_delay: float
    spawned: int
    zero_departures: bool = False


class TrafficSim:
    """The MDP environment: seeded episodes over a layout and demand profile."""

    def __init__(
        self,
        layout: IntersectionLayout,
        constants: SimConstants,
        demand: DemandProfile,
        initial_combo: int = 0,
    ):
        self.layout = layout
        self.constants = constants
        self.demand = demand
        self.initial_combo = initial_combo
        self.codec = ObservationCodec(layout)
        self.horizon = demand.n_bins * constants.bin_seconds
        self.reset(seed=0)

    # -- episode lifecycle ------------------------------------------------

    def reset(self, seed: int = 0, arrivals: list[tuple[str, float]] | None = None):
        """Start a fresh episode; identical seeds give identical arrivals."""
        if arrivals is None:
            arrivals = draw_all_arrivals(self.demand, seed,
                                         self.constants.bin_seconds)
        self.clock = 0.0
        self._combo = self.layout.combos[self.initial_combo]
        self._phase_timer = 0.0
        self._colors = {p.id: ("green" if p.id in self._combo.phases else "red")
                        for p in self.layout.phases}
        self.cum_delay = 0.0
        self.departed = 0
        self.conflict_green_instants = 0
        self.missing_yellow_count = 0
        self.negative_observation_count = 0
        self._lanes: dict[str, LaneState] = {
            ln: LaneState() for ln in self.layout.lanes}
        for p in self.layout.phases:
            for ln in p.served_lanes:
                self._lanes[ln].serving = tuple(
                    sorted(set(self._lanes[ln].serving) | {p.id}))
        fft = self.constants.free_flow_time
        per_movement: dict[str, list[float]] = {}
        for movement, t in arrivals:
            per_movement.setdefault(movement, []).append(t)
        vid = 0
        for movement in sorted(per_movement):
            lanes = self.layout.lanes_of_movement(movement)
            times = sorted(per_movement[movement])
            for i, t in enumerate(times):
                lane = lanes[i % len(lanes)]
                veh = Vehicle(id=vid, movement=movement, lane=lane,
                              spawn_time=t, free_flow_time=fft)
                self._lanes[lane].arrivals.append(veh)
                vid += 1
        self.spawned_total = vid
        for lane in self._lanes.values():
            lane.arrivals.sort(key=lambda v: (v.stop_line_arrival, v.id))
            lane.arrival_times = [v.stop_line_arrival for v in lane.arrivals]
        self._vehicles = [v for lane in self._lanes.values() for v in lane.arrivals]
        return self.observe()

    @property
    def done(self) -> bool:
        if self.clock >= self.horizon + self.constants.overtime:
            return True
        return self.clock >= self.horizon and self.departed == self.spawned_total

    @property
    def truncated(self) -> bool:
        """Episode ended by the hard cutoff with vehicles still in network."""
        return self.done and self.departed < self.spawned_total

    # -- dynamics ----------------------------------------------------------

    def step(self, action: PhaseCombo | int):
        """Execute one decision; returns (observation, reward, done)."""
        if isinstance(action, int):
            action = self.layout.combos[action]
        if self.done:
            return self.observe(), 0.0, True
        cur, nxt = self._combo, action
        intervals: list[tuple[frozenset[int], frozenset[int], float]] = []
        if nxt.combo_index != cur.combo_index:
            flags, clear_s = classify_clearance(cur, nxt, self.layout.clearance)
            case = flags.case
            cur_set, nxt_set = set(cur.phases), set(nxt.phases)
            if case is ClearanceCase.FULL:
                yellow = frozenset(cur_set)
            else:
                yellow = frozenset(cur_set - nxt_set)
            if yellow:
                intervals.append((frozenset(cur_set - yellow), yellow,
                                  self.constants.yellow))
            if clear_s > 0:
                hold = frozenset() if case is ClearanceCase.FULL \
                    else frozenset(cur_set & nxt_set)
                intervals.append((hold, frozenset(), clear_s))
            self._phase_timer = 0.0
        intervals.append((frozenset(nxt.phases), frozenset(),
                          self.constants.min_phase))
        step_delay = 0.0
        for green, yellow, duration in intervals:
            step_delay += self._advance(green, yellow, duration)
        self._combo = nxt
        self._phase_timer += self.constants.min_phase
        self.cum_delay += step_delay
        return self.observe(), -step_delay, self.done

    def _set_colors(self, green: frozenset[int], yellow: frozenset[int]) -> None:
        for p in self.layout.phases:
            new = "green" if p.id in green else (
                "yellow" if p.id in yellow else "red")
            old = self._colors[p.id]
            if old == "green" and new == "red":
                self.missing_yellow_count += 1
            self._colors[p.id] = new

    def _advance(self, green: frozenset[int], yellow: frozenset[int],
                 duration: float) -> float:
        """Run one constant-signal interval; returns delay accrued in it."""
        t0 = self.clock
        t1 = t0 + duration
        self._set_colors(green, yellow)
        g = sorted(green)
        for i, a in enumerate(g):
            for b in g[i + 1:]:
                if self.layout.conflict.conflicts(a, b):
                    self.conflict_green_instants += 1
        h = self.constants.saturation_headway
        delay = 0.0
        for lane in self._lanes.values():
            lane_green = any(pid in green for pid in lane.serving)
            if lane_green:
                ready = max(lane.last_departure + h, t0)
                while True:
                    if lane.queue:
                        veh = lane.queue[0]
                        depart_at = ready
                        from_queue = True
                    elif (lane.ptr < len(lane.arrivals)
                          and lane.arrival_times[lane.ptr] < t1):
                        veh = lane.arrivals[lane.ptr]
                        depart_at = max(ready, veh.stop_line_arrival)
                        from_queue = False
                    else:
                        break
                    if depart_at >= t1:
                        break
                    if from_queue:
                        lane.queue.pop(0)
                    else:
                        lane.ptr += 1
                    veh.exit_time = depart_at
                    self.departed += 1
                    delay += depart_at - max(veh.stop_line_arrival, t0)
                    ready = depart_at + h
                    lane.last_departure = depart_at
            while (lane.ptr < len(lane.arrivals)
                   and lane.arrival_times[lane.ptr] < t1):
                lane.queue.append(lane.arrivals[lane.ptr])
                lane.ptr += 1
            for veh in lane.queue:
                delay += t1 - max(veh.stop_line_arrival, t0)
        self.clock = t1
        return delay

    # -- sensing and accounting --------------------------------------------

    def observe(self) -> Observation:
        clock = self.clock
        fft = self.constants.free_flow_time
        dr = self.constants.detection_range
        horizon_ahead = fft if dr is None else min(dr, self.constants.link_length) \
            / self.constants.free_flow_speed
        n = len(self.layout.phases)
        states = np.zeros((n, 6))
        for row, phase in enumerate(self.layout.phases):
            stopped = 0
            cum_stop = 0.0
            approaching = 0
            for ln in phase.served_lanes:
                lane = self._lanes[ln]
                stopped += len(lane.queue)
                cum_stop += sum(clock - v.stop_line_arrival for v in lane.queue)
                hi = bisect_right(lane.arrival_times, clock + horizon_ahead,
                                  lo=lane.ptr)
                approaching += hi - lane.ptr
            states[row, STOPPED] = stopped
            states[row, APPROACHING] = approaching
            states[row, CUM_STOP_TIME] = cum_stop
            states[row, AVG_STOP_TIME] = cum_stop / stopped if stopped else 0.0
            states[row, AVG_QUEUE_LEN] = stopped / len(phase.served_lanes)
            states[row, AVG_SPEED] = (self.constants.free_flow_speed
                                      if approaching else 0.0)
        if (states < 0).any():
            self.negative_observation_count += 1
        flags = [classify_clearance(self._combo, combo, self.layout.clearance)[0]
                 for combo in self.layout.combos]
        green = frozenset(self._combo.phases)
        signal = SignalState(
            green=green,
            yellow=frozenset(),
            red=frozenset(p.id for p in self.layout.phases) - green,
            phase_timer=self._phase_timer,
            in_clearance=False,
        )
        return Observation(
            layout=self.layout,
            clock=clock,
            phase_states=states,
            clearance_flags=flags,
            signal=signal,
            current_combo=self._combo.combo_index,
        )

    def in_network(self) -> int:
        # on-link: past the consume pointer but already spawned; spawn <= t
        # is stop_line_arrival <= t + free-flow time on the sorted times
        bound = self.clock + self.constants.free_flow_time
        queued = 0
        on_link = 0
        for lane in self._lanes.values():
            queued += len(lane.queue)
            on_link += bisect_right(lane.arrival_times, bound,
                                    lo=lane.ptr) - lane.ptr
        return queued + on_link

    def spawned_so_far(self) -> int:
        bound = self.clock + self.constants.free_flow_time
        return sum(bisect_right(lane.arrival_times, bound)
                   for lane in self._lanes.values())

    def conservation_ok(self) -> bool:
        """Spawned vehicles are always departed + in-network, exactly.

        Every departed vehicle spawned in the past, so the departed counter
        needs no spawn filtering.
        """
        return self.spawned_so_far() == self.departed + self.in_network()

    def episode_metrics(self) -> EpisodeMetrics:
        zero = self.departed == 0
        avg = 0.0 if zero else self.cum_delay / self.departed
        return EpisodeMetrics(
            total_delay=self.cum_delay,
            vehicles=self.departed,
            avg_delay=avg,
            spawned=self.spawned_total,
            zero_departures=zero,
        )

    # -- helpers for tests and controllers ----------------------------------

    def queued_on(self, lane_id: str) -> int:
        return len(self._lanes[lane_id].queue)

    def arrival_within(self, phase_id: int, seconds: float) -> bool:
        """Any vehicle queued or reaching the stop line within `seconds`."""
        phase = self.layout.phase_by_id(phase_id)
        for ln in phase.served_lanes:
            lane = self._lanes[ln]
            if lane.queue:
                return True
            if (lane.ptr < len(lane.arrivals)
                    and lane.arrival_times[lane.ptr] <= self.clock + seconds):
                return True
        return False
