"""Static intersection modeling: phases, conflicts, phase combinations, clearance.

A layout is immutable after construction and safe to share across parallel
episode workers. Phase combinations (the action space) are restricted to
non-conflicting pairs, plus singletons for phases that pair with nothing
(singletons can be disabled via ``allow_singletons``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

THROUGH = "through"
PROTECTED_LEFT = "protected-left"
PERMISSIVE_LEFT = "permissive-left"
TURN_KINDS = (THROUGH, PROTECTED_LEFT, PERMISSIVE_LEFT)

TURN_SUFFIX = {THROUGH: "T", PROTECTED_LEFT: "L", PERMISSIVE_LEFT: "P"}


class ClearanceCase(IntEnum):
    """Clearance interval taxonomy, ordered by flag index (lowest wins)."""

    FULL = 1        # no phase active (all red)
    PARTIAL = 2     # part of the entering phases held inactive
    PERMISSIVE = 3  # short partial hold, typically leaving a permissive left
    NONE = 4        # no clearance required

    @property
    def flag_index(self) -> int:
        """0-based position of this case in a ClearanceFlags vector."""
        return int(self) - 1


@dataclass(frozen=True)
class ClearanceFlags:
    """One-hot indicator over the four clearance cases."""

    f: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        if sum(self.f) != 1 or any(v not in (0, 1) for v in self.f):
            raise ValueError(f"clearance flags must be one-hot, got {self.f}")

    @classmethod
    def for_case(cls, case: ClearanceCase) -> "ClearanceFlags":
        f = [0, 0, 0, 0]
        f[case.flag_index] = 1
        return cls(tuple(f))

    @property
    def case(self) -> ClearanceCase:
        return ClearanceCase(self.f.index(1) + 1)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.f, dtype=float)


@dataclass(frozen=True)
class Phase:
    """A permitted traffic movement (e.g. eastbound protected left).

    ``approach`` names the incoming road (NB/SB/EB/WB or any token), ``turn``
    is one of the TURN_KINDS, and ``served_lanes`` lists the lane ids the
    phase grants right-of-way to.
    """

    id: int
    approach: str
    turn: str
    served_lanes: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.turn not in TURN_KINDS:
            raise ValueError(f"unknown turn kind {self.turn!r}")
        if not self.served_lanes:
            raise ValueError(f"phase {self.id} serves no lanes")

    @property
    def movement(self) -> str:
        """Demand-file token for this phase's movement, e.g. ``EB_T``."""
        return f"{self.approach}_{TURN_SUFFIX[self.turn]}"


@dataclass(frozen=True)
class PhaseCombo:
    """An ordered set of mutually non-conflicting phases actuated together."""

    phases: tuple[int, ...]
    combo_index: int

    def __contains__(self, phase_id: int) -> bool:
        return phase_id in self.phases

    def __len__(self) -> int:
        return len(self.phases)


class ConflictMatrix:
    """Symmetric boolean conflict relation over phase ids."""

    def __init__(self, phase_ids: Sequence[int], pairs: Iterable[tuple[int, int]]):
        self._index = {pid: k for k, pid in enumerate(phase_ids)}
        n = len(self._index)
        self._m = np.zeros((n, n), dtype=bool)
        for a, b in pairs:
            ia, ib = self._index[a], self._index[b]
            self._m[ia, ib] = True
            self._m[ib, ia] = True

    @classmethod
    def from_matrix(cls, phase_ids: Sequence[int], matrix: np.ndarray) -> "ConflictMatrix":
        cm = cls(phase_ids, [])
        cm._m = np.asarray(matrix, dtype=bool).copy()
        return cm

    def conflicts(self, a: int, b: int) -> bool:
        return bool(self._m[self._index[a], self._index[b]])

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self._m, self._m.T))

    def diagonal_clear(self) -> bool:
        return not bool(self._m.diagonal().any())


# Clearance table entries: (current combo_index, next combo_index) ->
# list of (case, duration) candidates; classify picks the lowest flag index.
ClearanceTable = dict[tuple[int, int], list[tuple[ClearanceCase, float]]]


class ClearanceSpecError(KeyError):
    """Raised when a combo transition is missing from the clearance table."""


@dataclass(frozen=True)
class ClearanceSpec:
    """Per ordered combo pair: active clearance cases with durations."""

    table: ClearanceTable

    def validate(self) -> list[str]:
        problems: list[str] = []
        permissive = [d for cases in self.table.values()
                      for c, d in cases if c is ClearanceCase.PERMISSIVE]
        partial = [d for cases in self.table.values()
                   for c, d in cases if c is ClearanceCase.PARTIAL]
        for key, cases in self.table.items():
            for case, duration in cases:
                if duration < 0:
                    problems.append(f"negative clearance duration for pair {key}")
                if case is ClearanceCase.NONE and duration != 0:
                    problems.append(f"case none with nonzero duration for pair {key}")
        if permissive and partial and max(permissive) >= min(partial):
            problems.append("permissive clearance not shorter than partial clearance")
        return problems


@dataclass(frozen=True)
class IntersectionLayout:
    """Roads, lanes, phases, conflicts, combos, and the clearance table."""

    name: str
    phases: tuple[Phase, ...]
    conflict: ConflictMatrix
    clearance: ClearanceSpec
    combos: tuple[PhaseCombo, ...]
    allow_singletons: bool = True
    lanes: tuple[str, ...] = field(default=())

    def phase_by_id(self, pid: int) -> Phase:
        return self._phase_map[pid]

    @property
    def _phase_map(self) -> dict[int, Phase]:
        return {p.id: p for p in self.phases}

    @property
    def n_combos(self) -> int:
        return len(self.combos)

    def combo_phases(self, combo: PhaseCombo) -> tuple[Phase, ...]:
        return tuple(self.phase_by_id(pid) for pid in combo.phases)

    def movements(self) -> tuple[str, ...]:
        return tuple(p.movement for p in self.phases)

    def lanes_of_movement(self, movement: str) -> tuple[str, ...]:
        for p in self.phases:
            if p.movement == movement:
                return p.served_lanes
        raise KeyError(f"unknown movement {movement!r}")


def enumerate_combos(
    phases: Sequence[Phase],
    conflict: ConflictMatrix,
    allow_singletons: bool = True,
) -> tuple[PhaseCombo, ...]:
    """All non-conflicting phase pairs, plus singletons for unpairable phases.

    Ordering is lexicographic over member phase ids, which fixes combo_index
    and therefore every downstream tie-break.
    """
    ids = sorted(p.id for p in phases)
    pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1:]
             if not conflict.conflicts(a, b)]
    paired = {pid for pair in pairs for pid in pair}
    members: list[tuple[int, ...]] = [tuple(p) for p in pairs]
    if allow_singletons:
        members.extend((pid,) for pid in ids if pid not in paired)
    members.sort()
    return tuple(PhaseCombo(phases=m, combo_index=k) for k, m in enumerate(members))


def validate_layout(layout: IntersectionLayout) -> list[str]:
    """Check structural invariants; returns violations (empty list = valid)."""
    problems: list[str] = []
    if not layout.conflict.is_symmetric():
        problems.append("conflict matrix not symmetric")
    if not layout.conflict.diagonal_clear():
        problems.append("conflict matrix diagonal not false")
    ids = [p.id for p in layout.phases]
    if len(set(ids)) != len(ids):
        problems.append("duplicate phase ids")
    known_lanes = set(layout.lanes) if layout.lanes else None
    for p in layout.phases:
        if known_lanes is not None:
            missing = [ln for ln in p.served_lanes if ln not in known_lanes]
            if missing:
                problems.append(f"phase {p.id} references unknown lanes {missing}")
    seen_idx: set[int] = set()
    for combo in layout.combos:
        if combo.combo_index in seen_idx:
            problems.append(f"duplicate combo_index {combo.combo_index}")
        seen_idx.add(combo.combo_index)
        if len(combo.phases) > 2:
            problems.append(f"combo {combo.combo_index} larger than a pair")
        if not layout.allow_singletons and len(combo.phases) == 1:
            problems.append(f"singleton combo {combo.combo_index} not permitted")
        for pid in combo.phases:
            if pid not in layout._phase_map:
                problems.append(f"combo {combo.combo_index} references unknown phase {pid}")
        for i, a in enumerate(combo.phases):
            for b in combo.phases[i + 1:]:
                if layout.conflict.conflicts(a, b):
                    problems.append(
                        f"conflicting pair in combo {combo.combo_index}: ({a},{b})")
    problems.extend(layout.clearance.validate())
    return problems


def classify_clearance(
    current: PhaseCombo,
    nxt: PhaseCombo,
    spec: ClearanceSpec,
) -> tuple[ClearanceFlags, float]:
    """Resolve the clearance case and duration for a combo transition.

    A self-transition never requires clearance. When the table marks several
    cases active for one pair, the case with the lowest flag index wins.
    """
    if current.combo_index == nxt.combo_index:
        return ClearanceFlags.for_case(ClearanceCase.NONE), 0.0
    key = (current.combo_index, nxt.combo_index)
    cases = spec.table.get(key)
    if not cases:
        raise ClearanceSpecError(
            f"clearance spec incomplete: no entry for combo pair {key}")
    case, duration = min(cases, key=lambda cd: int(cd[0]))
    if case is ClearanceCase.NONE:
        duration = 0.0
    return ClearanceFlags.for_case(case), float(duration)


def param_count(layout: IntersectionLayout) -> int:
    """Scalar parameter budget of the designed precedence function.

    Each phase inside a combo carries 6 weights and 6 exponents; each combo
    carries 4 flag weights and 4 flag exponents.
    """
    return sum(12 * len(combo.phases) + 8 for combo in layout.combos)


def generate_clearance_table(
    combos: Sequence[PhaseCombo],
    phases: Sequence[Phase],
    full_s: float = 2.0,
    partial_s: float = 2.0,
    permissive_s: float = 1.0,
) -> ClearanceTable:
    """Default clearance taxonomy for every ordered combo pair.

    Disjoint combos take a full (all-red) clearance; leaving an active
    permissive left takes the short permissive hold; transitions that keep
    some phases but introduce new ones take a partial hold; pure subsets
    need none. Scenario files may override any pair explicitly.
    """
    turn_of = {p.id: p.turn for p in phases}
    table: ClearanceTable = {}
    for cur in combos:
        for nxt in combos:
            if cur.combo_index == nxt.combo_index:
                table[(cur.combo_index, nxt.combo_index)] = [(ClearanceCase.NONE, 0.0)]
                continue
            cur_set, nxt_set = set(cur.phases), set(nxt.phases)
            leaving = cur_set - nxt_set
            entering = nxt_set - cur_set
            if not (cur_set & nxt_set):
                entry = (ClearanceCase.FULL, full_s)
            elif any(turn_of[pid] == PERMISSIVE_LEFT for pid in leaving):
                entry = (ClearanceCase.PERMISSIVE, permissive_s)
            elif entering:
                entry = (ClearanceCase.PARTIAL, partial_s)
            else:
                entry = (ClearanceCase.NONE, 0.0)
            table[(cur.combo_index, nxt.combo_index)] = [entry]
    return table


def _lane_ids(movement: str, n: int) -> tuple[str, ...]:
    return tuple(f"{movement}_{k}" for k in range(n))


def build_layout(
    name: str,
    phase_specs: Sequence[dict],
    conflict_pairs: Iterable[tuple[int, int]],
    clearance_table: ClearanceTable | None = None,
    allow_singletons: bool = True,
    clearance_durations: tuple[float, float, float] = (2.0, 2.0, 1.0),
) -> IntersectionLayout:
    """Assemble a layout from plain dict phase specs.

    Each phase spec needs ``id``, ``approach``, ``turn`` and either
    ``lanes`` (a count) or ``served_lanes`` (explicit ids).
    """
    phases = []
    for ps in phase_specs:
        movement = f"{ps['approach']}_{TURN_SUFFIX[ps['turn']]}"
        served = tuple(ps["served_lanes"]) if "served_lanes" in ps else _lane_ids(
            movement, int(ps.get("lanes", 1)))
        phases.append(Phase(id=int(ps["id"]), approach=ps["approach"],
                            turn=ps["turn"], served_lanes=served))
    phases_t = tuple(sorted(phases, key=lambda p: p.id))
    conflict = ConflictMatrix([p.id for p in phases_t], conflict_pairs)
    combos = enumerate_combos(phases_t, conflict, allow_singletons)
    if clearance_table is None:
        full_s, partial_s, permissive_s = clearance_durations
        clearance_table = generate_clearance_table(
            combos, phases_t, full_s, partial_s, permissive_s)
    lanes = tuple(dict.fromkeys(ln for p in phases_t for ln in p.served_lanes))
    return IntersectionLayout(
        name=name,
        phases=phases_t,
        conflict=conflict,
        clearance=ClearanceSpec(table=clearance_table),
        combos=combos,
        allow_singletons=allow_singletons,
        lanes=lanes,
    )


def standard_eight_phase(lanes_through: int = 2, lanes_left: int = 1) -> IntersectionLayout:
    """Common 4-way dual-ring allocation: 8 phases, 8 non-conflicting pairs.

    Phases 1/2/5/6 cover the east-west street (protected lefts and throughs),
    3/4/7/8 the north-south street; pairs form across the two rings within
    each street group.
    """
    specs = [
        {"id": 1, "approach": "EB", "turn": PROTECTED_LEFT, "lanes": lanes_left},
        {"id": 2, "approach": "WB", "turn": THROUGH, "lanes": lanes_through},
        {"id": 3, "approach": "SB", "turn": PROTECTED_LEFT, "lanes": lanes_left},
        {"id": 4, "approach": "NB", "turn": THROUGH, "lanes": lanes_through},
        {"id": 5, "approach": "WB", "turn": PROTECTED_LEFT, "lanes": lanes_left},
        {"id": 6, "approach": "EB", "turn": THROUGH, "lanes": lanes_through},
        {"id": 7, "approach": "NB", "turn": PROTECTED_LEFT, "lanes": lanes_left},
        {"id": 8, "approach": "SB", "turn": THROUGH, "lanes": lanes_through},
    ]
    group_ew = {1, 2, 5, 6}
    group_ns = {3, 4, 7, 8}
    ring_a = {1, 2, 3, 4}
    ring_b = {5, 6, 7, 8}
    conflicts = []
    for a in range(1, 9):
        for b in range(a + 1, 9):
            same_group = ({a, b} <= group_ew) or ({a, b} <= group_ns)
            cross_ring = (a in ring_a) != (b in ring_a)
            if not (same_group and cross_ring):
                conflicts.append((a, b))
    return build_layout("standard8", specs, conflicts)


def utah_ten_phase() -> IntersectionLayout:
    """The 8-phase diagram plus north/south permissive lefts: 11 combos.

    Each permissive left is compatible with its own-approach through and the
    opposing permissive left, adding three pairs to the standard eight.
    """
    base = standard_eight_phase()
    specs = [
        {"id": p.id, "approach": p.approach, "turn": p.turn,
         "served_lanes": p.served_lanes}
        for p in base.phases
    ]
    specs.append({"id": 9, "approach": "NB", "turn": PERMISSIVE_LEFT, "lanes": 1})
    specs.append({"id": 10, "approach": "SB", "turn": PERMISSIVE_LEFT, "lanes": 1})
    compatible = {(1, 5), (1, 6), (2, 5), (2, 6), (3, 7), (3, 8), (4, 7), (4, 8),
                  (4, 9), (8, 10), (9, 10)}
    conflicts = []
    for a in range(1, 11):
        for b in range(a + 1, 11):
            if (a, b) not in compatible:
                conflicts.append((a, b))
    return build_layout("utah10", specs, conflicts, allow_singletons=False)


def toy_two_phase(lanes: int = 1) -> IntersectionLayout:
    """Two one-way streets crossing: 2 phases, 2 singleton combos."""
    specs = [
        {"id": 1, "approach": "EB", "turn": THROUGH, "lanes": lanes},
        {"id": 2, "approach": "NB", "turn": THROUGH, "lanes": lanes},
    ]
    return build_layout("toy2", specs, [(1, 2)])
