"""Signal-phase state machines: legal phase sets, the mandatory yellow
interlock, and the fixed-time baseline controllers.

Movement naming: the corridor runs west-east ("main"); the cross street at
the intersection runs north-south ("cross"). Intersection phases:

  1: cross-street vehicles + crosswalks over the main corridor
  2: main-corridor vehicles + crosswalks over the cross street
  3: dedicated left turns (no modeled through movement; all pedestrians red)
  4: all-pedestrian (every crosswalk walks, all vehicles red)

Mid-block phases: 1 = vehicle flow, 2 = pedestrian crossing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import RangeError
from .network import INTERSECTION, CorridorNetwork

GREEN = "G"
YELLOW = "Y"
RED = "R"

YELLOW_STEPS = 4

VEH_MAIN = "veh_main"
VEH_CROSS = "veh_cross"
PED_MAIN = "ped_main"
PED_CROSS = "ped_cross"
VEH = "veh"
PED = "ped"

INT_MOVEMENTS = (VEH_MAIN, VEH_CROSS, PED_MAIN, PED_CROSS)
MB_MOVEMENTS = (VEH, PED)

INT_GREEN_SETS = {
    1: frozenset({VEH_CROSS, PED_MAIN}),
    2: frozenset({VEH_MAIN, PED_CROSS}),
    3: frozenset(),
    4: frozenset({PED_MAIN, PED_CROSS}),
}
MB_GREEN_SETS = {
    1: frozenset({VEH}),
    2: frozenset({PED}),
}

# pairs that must never be simultaneously green
INT_CONFLICTS = ((VEH_MAIN, PED_MAIN), (VEH_CROSS, PED_CROSS), (VEH_MAIN, VEH_CROSS))
MB_CONFLICTS = ((VEH, PED),)


@dataclass(frozen=True)
class ActionVector:
    """One joint control decision: an intersection phase choice in {1..4}
    plus one boolean per mid-block (True = vehicle flow, phase 1)."""

    intersection: int
    midblock: tuple[bool, ...]

    def validate(self, n_midblocks: int) -> None:
        if self.intersection not in (1, 2, 3, 4):
            raise RangeError(f"intersection choice must be 1..4, got {self.intersection}")
        if len(self.midblock) != n_midblocks:
            raise RangeError(
                f"expected {n_midblocks} mid-block components, got {len(self.midblock)}")


class SignalUnit:
    """Interlock state machine for one signal.

    A request that turns any green movement red starts a mandatory
    YELLOW_STEPS yellow for exactly those movements; the target engages once
    every running yellow has elapsed. Requests arriving mid-transition
    replace the pending target without restarting running yellows; movements
    newly losing green get their own full yellow.
    """

    __slots__ = ("movements", "green_sets", "engaged", "pending", "yellow", "effective_green")

    def __init__(self, movements: Sequence[str], green_sets: dict, initial_phase: int):
        self.movements = tuple(movements)
        self.green_sets = green_sets
        self.engaged = initial_phase
        self.pending: int | None = None
        self.yellow = {m: 0 for m in self.movements}
        self.effective_green = set(green_sets[initial_phase])

    @property
    def target(self) -> int:
        return self.pending if self.pending is not None else self.engaged

    def request(self, phase: int) -> None:
        if phase not in self.green_sets:
            raise RangeError(f"illegal phase {phase}")
        if phase == self.target:
            return
        losing = {m for m in self.effective_green if m not in self.green_sets[phase]}
        if self.pending is None and not losing:
            self.engaged = phase
            self.effective_green = set(self.green_sets[phase])
            return
        for m in losing:
            self.yellow[m] = YELLOW_STEPS
        self.effective_green -= losing
        self.pending = phase

    def tick(self) -> dict[str, str]:
        """Advance one simulation step; returns this step's displayed states.

        A pending target engages on the first tick after every yellow has
        run its full length, so a transition occupies exactly 4 yellow steps
        followed by the newly engaged phase.
        """
        if self.pending is not None and not any(self.yellow.values()):
            self.engaged = self.pending
            self.pending = None
            self.effective_green = set(self.green_sets[self.engaged])
        display = {}
        for m in self.movements:
            if self.yellow[m] > 0:
                display[m] = YELLOW
                self.yellow[m] -= 1
            elif m in self.effective_green:
                display[m] = GREEN
            else:
                display[m] = RED
        return display


class InterlockBank:
    """All signal interlocks of a network, driven by ActionVectors."""

    def __init__(self, network: CorridorNetwork,
                 initial_phases: dict[int, int] | None = None):
        self.units: dict[int, SignalUnit] = {}
        self.mb_ids: list[int] = []
        self.int_id = network.intersection.id
        initial_phases = initial_phases or {}
        for site in network.signals:
            if site.kind == INTERSECTION:
                phase = initial_phases.get(site.id, 2)
                self.units[site.id] = SignalUnit(INT_MOVEMENTS, INT_GREEN_SETS, phase)
            else:
                phase = initial_phases.get(site.id, 1)
                self.units[site.id] = SignalUnit(MB_MOVEMENTS, MB_GREEN_SETS, phase)
                self.mb_ids.append(site.id)

    def apply(self, action: ActionVector) -> None:
        action.validate(len(self.mb_ids))
        self.units[self.int_id].request(action.intersection)
        for mb_id, veh_green in zip(self.mb_ids, action.midblock):
            self.units[mb_id].request(1 if veh_green else 2)

    def tick(self) -> dict[int, dict[str, str]]:
        return {sid: unit.tick() for sid, unit in self.units.items()}

    def targets(self) -> dict[int, int]:
        return {sid: unit.target for sid, unit in self.units.items()}

    def engaged_action(self) -> ActionVector:
        """Current targets encoded as an ActionVector (the phase context fed
        back into the observation)."""
        return ActionVector(
            intersection=self.units[self.int_id].target,
            midblock=tuple(self.units[i].target == 1 for i in self.mb_ids),
        )


def apply_action(bank: InterlockBank, action: ActionVector) -> InterlockBank:
    """Functional-style wrapper: route an ActionVector through the interlocks."""
    bank.apply(action)
    return bank


def conflicting_greens(kind: str, states: dict[str, str]) -> bool:
    pairs = INT_CONFLICTS if kind == INTERSECTION else MB_CONFLICTS
    return any(states.get(a) == GREEN and states.get(b) == GREEN for a, b in pairs)


@dataclass(frozen=True)
class FixedPhaseState:
    target: int          # current or most recent green phase
    interval: str        # "green" | "yellow" | "all_red" | "walk" | "clearance"
    states: dict


# intersection cycle: 90 green / 4 yellow / 2 all-red, each direction; 192 s total
INT_CYCLE_S = 192
# mid-block cycle: 40 vehicle green / 4 yellow / 2 red clearance / 7 walk / 9 ped clearance
MB_CYCLE_S = 62
MB_INTERVALS = (40, 4, 2, 7, 9)


def ped_clearance_s(crosswalk_length_ft: float = 32.0, walking_speed_fps: float = 3.5) -> int:
    """MUTCD-style pedestrian clearance: crosswalk length over walking speed."""
    return round(crosswalk_length_ft / walking_speed_fps)


def fixed_time_intersection(t: float) -> FixedPhaseState:
    """Fixed-time intersection schedule (period 192 s).

    Cross-street (N-S) vehicles and the main-corridor crosswalks go first;
    no dedicated left-turn phase.
    """
    c = t % INT_CYCLE_S
    if c < 90:
        return FixedPhaseState(1, "green", {
            VEH_MAIN: RED, VEH_CROSS: GREEN, PED_MAIN: GREEN, PED_CROSS: RED})
    if c < 94:
        return FixedPhaseState(1, "yellow", {
            VEH_MAIN: RED, VEH_CROSS: YELLOW, PED_MAIN: YELLOW, PED_CROSS: RED})
    if c < 96:
        return FixedPhaseState(1, "all_red", {
            VEH_MAIN: RED, VEH_CROSS: RED, PED_MAIN: RED, PED_CROSS: RED})
    if c < 186:
        return FixedPhaseState(2, "green", {
            VEH_MAIN: GREEN, VEH_CROSS: RED, PED_MAIN: RED, PED_CROSS: GREEN})
    if c < 190:
        return FixedPhaseState(2, "yellow", {
            VEH_MAIN: YELLOW, VEH_CROSS: RED, PED_MAIN: RED, PED_CROSS: YELLOW})
    return FixedPhaseState(2, "all_red", {
        VEH_MAIN: RED, VEH_CROSS: RED, PED_MAIN: RED, PED_CROSS: RED})


def fixed_time_midblock(t: float) -> FixedPhaseState:
    """Fixed-time mid-block schedule (period 62 s), vehicle phase first."""
    c = t % MB_CYCLE_S
    if c < 40:
        return FixedPhaseState(1, "green", {VEH: GREEN, PED: RED})
    if c < 44:
        return FixedPhaseState(1, "yellow", {VEH: YELLOW, PED: RED})
    if c < 46:
        return FixedPhaseState(1, "all_red", {VEH: RED, PED: RED})
    if c < 53:
        return FixedPhaseState(2, "walk", {VEH: RED, PED: GREEN})
    return FixedPhaseState(2, "clearance", {VEH: RED, PED: YELLOW})


def count_switches(phase_trace: Sequence[Sequence[int]]) -> int:
    """Count green-target changes across all signals in a per-step trace.

    `phase_trace[t]` holds the per-signal target phases at step t; yellow
    insertions are part of a single switch, not counted separately.
    """
    count = 0
    prev = None
    for row in phase_trace:
        row = tuple(row)
        if prev is not None:
            count += sum(1 for a, b in zip(prev, row) if a != b)
        prev = row
    return count


def fixed_time_states(network: CorridorNetwork, t: float) -> dict[int, dict[str, str]]:
    """Movement states for every signal under the Signalized baseline."""
    out = {}
    for site in network.signals:
        fps = fixed_time_intersection(t) if site.kind == INTERSECTION else fixed_time_midblock(t)
        out[site.id] = fps.states
    return out


def fixed_time_targets(network: CorridorNetwork, t: float) -> dict[int, int]:
    out = {}
    for site in network.signals:
        fps = fixed_time_intersection(t) if site.kind == INTERSECTION else fixed_time_midblock(t)
        out[site.id] = fps.target
    return out
