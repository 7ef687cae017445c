"""Discrete-time (1 s) microscopic dynamics for the corridor.

Vehicles follow the intelligent-driver car-following model on four lanes:
eastbound/westbound along the corridor and the two cross-street approaches
through the intersection. Red signals, yielding, and clearing pedestrians
are all modeled as a virtual stopped leader at the stop line. Pedestrians
are point masses walking the sidewalks, queueing at red crosswalks, and
claiming right-of-way at unsignalized ones.

Controls passed to `step` map signal id -> movement-state dict (values
"G"/"Y"/"R"), or None for an unsignalized crosswalk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DomainError
from .network import INTERSECTION, CorridorNetwork
from .signals import GREEN, PED, PED_CROSS, PED_MAIN, RED, VEH, VEH_CROSS, VEH_MAIN, YELLOW

DT = 1.0
VEH_WAIT_SPEED = 0.2    # m/s; below this a vehicle counts as waiting
PED_WAIT_SPEED = 0.5    # m/s; below this a pedestrian counts as waiting
EMERGENCY_DECEL = 9.0   # physical braking floor, m/s^2
MIN_GAP = 0.01
# drivers react to pedestrians on a crosswalk within this sight distance;
# signals are visible from any range
YIELD_HORIZON_M = 30.0

LANE_EB = "EB"
LANE_WB = "WB"
LANE_NB = "NB"
LANE_SB = "SB"
MAIN_LANES = (LANE_EB, LANE_WB)
CROSS_LANES = (LANE_NB, LANE_SB)

APPROACHING = "approaching"
QUEUED = "queued"
CROSSING = "crossing"
DONE = "done"

# pedestrian crossing groups -> controlling movement name
_GROUP_MOVEMENT = {"mb": PED, "main": PED_MAIN, "cross": PED_CROSS}


@dataclass(frozen=True)
class IdmParams:
    v0: float = 13.89       # desired speed, m/s
    a_max: float = 0.73     # max acceleration, m/s^2
    b: float = 1.67         # comfortable deceleration, m/s^2
    T: float = 1.6          # desired time headway, s
    s0: float = 2.0         # jam gap, m
    delta: float = 4.0
    length_m: float = 5.0


def idm_accel(v: float, v_lead: float | None, gap: float, p: IdmParams) -> float:
    """Car-following acceleration; v_lead=None means a free road ahead."""
    free = p.a_max * (1.0 - (v / p.v0) ** p.delta)
    if v_lead is None:
        return free
    if gap <= 0:
        raise DomainError(f"gap must be > 0 with a leader present, got {gap}")
    s_star = p.s0 + v * p.T + v * (v - v_lead) / (2.0 * math.sqrt(p.a_max * p.b))
    if s_star < p.s0:
        s_star = p.s0
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / gap) ** 2)


@dataclass
class VehicleTrip:
    spawn_time_s: float
    lane: str


@dataclass
class PedTrip:
    spawn_time_s: float
    origin_x: float
    origin_side: str            # "N" or "S" sidewalk
    dest_x: float
    crossing_site: int | None   # corridor-crossing signal id, if any


@dataclass(frozen=True)
class LaneStop:
    stop: float      # stop-line coordinate in lane frame
    exit: float      # downstream edge of the crosswalk band / junction box
    signal_id: int
    movement: str


class Vehicle:
    __slots__ = ("id", "lane", "coord", "speed", "cum_wait", "cur_wait",
                 "spawn_time", "next_stop")

    def __init__(self, vid: int, lane: str, spawn_time: float, speed: float):
        self.id = vid
        self.lane = lane
        self.coord = 0.0
        self.speed = speed
        self.cum_wait = 0.0
        self.cur_wait = 0.0
        self.spawn_time = spawn_time
        self.next_stop = 0


@dataclass(frozen=True)
class Waypoint:
    x: float
    signal_id: int
    group: str       # "mb" | "main" | "cross"
    length_m: float
    flips_side: bool


class Pedestrian:
    __slots__ = ("id", "x", "side", "dirn", "speed", "state", "waypoints", "wp_idx",
                 "crossing_left", "cum_wait", "cur_wait", "spawn_time", "dest_x")

    def __init__(self, pid: int, trip: PedTrip, waypoints: tuple[Waypoint, ...], walk: float):
        self.id = pid
        self.x = trip.origin_x
        self.side = trip.origin_side
        self.waypoints = waypoints
        self.wp_idx = 0
        first_target = waypoints[0].x if waypoints else trip.dest_x
        self.dirn = 1.0 if first_target >= trip.origin_x else -1.0
        self.speed = walk
        self.state = APPROACHING
        self.crossing_left = 0.0
        self.cum_wait = 0.0
        self.cur_wait = 0.0
        self.spawn_time = trip.spawn_time_s
        self.dest_x = trip.dest_x

    def current_waypoint(self) -> Waypoint | None:
        if self.wp_idx < len(self.waypoints):
            return self.waypoints[self.wp_idx]
        return None


@dataclass(frozen=True)
class ConflictEvent:
    time_s: float
    signal_id: int
    vehicle_id: int
    pedestrian_id: int


@dataclass
class WaitSnapshot:
    """Per-signal waiting counts and maximum continuous waits (seconds)."""

    n_wait_veh: list[int]
    max_wait_veh_s: list[float]
    n_wait_ped: list[int]
    max_wait_ped_s: list[float]


@dataclass
class SimStats:
    veh_spawned: int = 0
    ped_spawned: int = 0
    veh_arrived: int = 0
    ped_arrived: int = 0
    veh_wait_steps: float = 0.0
    ped_wait_steps: float = 0.0
    conflicts: list = field(default_factory=list)


def build_ped_waypoints(network: CorridorNetwork, trip: PedTrip) -> tuple[Waypoint, ...]:
    """Expand a pedestrian trip into ordered crossing waypoints.

    Any walking segment that passes the intersection adds a cross-street
    crossing; a corridor-crossing trip inserts its crosswalk between the
    approach and departure segments.
    """
    inter = network.intersection
    int_x = inter.position_m
    cross_len = next(c.length_m for c in inter.crosswalks if c.group == "cross")
    wps: list[Waypoint] = []

    def add_cross_street(x0: float, x1: float) -> None:
        if min(x0, x1) < int_x < max(x0, x1):
            wps.append(Waypoint(int_x, inter.id, "cross", cross_len, False))

    if trip.crossing_site is None:
        add_cross_street(trip.origin_x, trip.dest_x)
    else:
        site = network.signals[trip.crossing_site]
        if site.kind == INTERSECTION:
            group, length = "main", next(
                c.length_m for c in site.crosswalks if c.group == "main")
        else:
            group, length = "mb", site.crosswalks[0].length_m
        add_cross_street(trip.origin_x, site.position_m)
        wps.append(Waypoint(site.position_m, site.id, group, length, True))
        add_cross_street(site.position_m, trip.dest_x)
    return tuple(wps)


def _lane_stops(network: CorridorNetwork) -> dict[str, tuple[LaneStop, ...]]:
    length = network.length_m
    inter = network.intersection
    eb, wb = [], []
    for site in network.signals:
        movement = VEH_MAIN if site.kind == INTERSECTION else VEH
        eb.append(LaneStop(site.position_m, site.position_m + site.box_len_m,
                           site.id, movement))
        wb.append(LaneStop(length - (site.position_m + site.box_len_m),
                           length - site.position_m, site.id, movement))
    eb.sort(key=lambda s: s.stop)
    wb.sort(key=lambda s: s.stop)
    stub = network.cross_stub_m
    cross = (LaneStop(stub, stub + inter.box_len_m, inter.id, VEH_CROSS),)
    return {LANE_EB: tuple(eb), LANE_WB: tuple(wb), LANE_NB: cross, LANE_SB: cross}


class SimState:
    """Mutable world state for one simulation instance."""

    def __init__(self, network: CorridorNetwork, veh_trips: list[VehicleTrip],
                 ped_trips: list[PedTrip], idm: IdmParams | None = None,
                 trace=None):
        self.network = network
        self.idm = idm if idm is not None else IdmParams(v0=network.speed_limit_mps)
        self.time = 0.0
        self.stops = _lane_stops(network)
        cross_total = 2 * network.cross_stub_m + network.intersection.box_len_m
        self.lane_length = {
            LANE_EB: network.length_m, LANE_WB: network.length_m,
            LANE_NB: cross_total, LANE_SB: cross_total,
        }
        self.lanes: dict[str, list[Vehicle]] = {ln: [] for ln in self.lane_length}
        self.peds: list[Pedestrian] = []
        self.veh_queue: dict[str, list[VehicleTrip]] = {ln: [] for ln in self.lane_length}
        for t in sorted(veh_trips, key=lambda tr: tr.spawn_time_s):
            self.veh_queue[t.lane].append(t)
        self.ped_queue: list[PedTrip] = sorted(
            ped_trips, key=lambda tr: tr.spawn_time_s, reverse=True)
        self.stats = SimStats()
        self._seen_conflicts: set[tuple[int, int, int]] = set()
        self._next_veh_id = 0
        self._next_ped_id = 0
        self.trace = trace
        self._stop_at: dict[tuple[str, int], LaneStop] = {}
        for lane, stops in self.stops.items():
            for s in stops:
                self._stop_at[(lane, s.signal_id)] = s
        # rebuilt every step: pedestrians currently on each crosswalk
        self._crossers_mb: dict[int, list[Pedestrian]] = {}
        self._crossing_main = False
        self._crossing_cross = False
        self._block_memo: dict[int, bool] = {}

    # -- spawning ---------------------------------------------------------

    def _spawn_vehicles(self) -> None:
        p = self.idm
        for lane, queue in self.veh_queue.items():
            while queue and queue[0].spawn_time_s <= self.time:
                vehicles = self.lanes[lane]
                if vehicles:
                    tail = vehicles[-1]
                    gap = tail.coord - p.length_m
                    if gap < p.s0 + 1.0:
                        break  # no room; retry next step
                    speed = min(p.v0, max(0.0, (gap - p.s0) / p.T), tail.speed + 2.0)
                else:
                    speed = p.v0
                trip = queue.pop(0)
                veh = Vehicle(self._next_veh_id, lane, self.time, speed)
                self._next_veh_id += 1
                vehicles.append(veh)
                self.stats.veh_spawned += 1

    def _spawn_pedestrians(self) -> None:
        walk = self.network.ped_speed_mps
        while self.ped_queue and self.ped_queue[-1].spawn_time_s <= self.time:
            trip = self.ped_queue.pop()
            wps = build_ped_waypoints(self.network, trip)
            ped = Pedestrian(self._next_ped_id, trip, wps, walk)
            self._next_ped_id += 1
            self.peds.append(ped)
            self.stats.ped_spawned += 1

    # -- pedestrian dynamics ----------------------------------------------

    def _veh_blocks_crosswalk(self, site_id: int) -> bool:
        """True when a vehicle is on or within stopping distance of the
        mid-block crosswalk at `site_id` (the pedestrian commitment check)."""
        memo = self._block_memo.get(site_id)
        if memo is not None:
            return memo
        blocked = False
        two_b = 2.0 * self.idm.b
        for lane in MAIN_LANES:
            stop = self._stop_at[(lane, site_id)]
            for veh in self.lanes[lane]:
                if veh.coord > stop.exit:
                    continue
                if veh.coord >= stop.stop:
                    blocked = True  # vehicle on the crosswalk
                    break
                dist = stop.stop - veh.coord
                if dist <= veh.speed * veh.speed / two_b + veh.speed * DT:
                    blocked = True
                    break
            if blocked:
                break
        self._block_memo[site_id] = blocked
        return blocked

    def _veh_on_crosswalk(self, site_id: int) -> bool:
        for lane in MAIN_LANES:
            stop = self._stop_at[(lane, site_id)]
            for veh in self.lanes[lane]:
                if stop.stop <= veh.coord <= stop.exit:
                    return True
        return False

    def _ped_can_enter(self, wp: Waypoint, controls, queued: bool) -> bool:
        states = controls.get(wp.signal_id)
        if states is None:
            # unsignalized: wait at most one step, then claim right-of-way
            # (unless a vehicle is physically on the crosswalk)
            if queued:
                return not self._veh_on_crosswalk(wp.signal_id)
            return not self._veh_blocks_crosswalk(wp.signal_id)
        return states[_GROUP_MOVEMENT[wp.group]] == GREEN

    def _finish_crossing(self, ped: Pedestrian) -> None:
        wp = ped.waypoints[ped.wp_idx]
        if wp.flips_side:
            ped.side = "S" if ped.side == "N" else "N"
        ped.wp_idx += 1
        nxt = ped.current_waypoint()
        target = nxt.x if nxt is not None else ped.dest_x
        ped.dirn = 1.0 if target >= ped.x else -1.0
        ped.state = APPROACHING

    def _step_peds(self, controls) -> None:
        walk = self.network.ped_speed_mps
        arrived: list[int] = []
        for idx, ped in enumerate(self.peds):
            if ped.state == CROSSING:
                ped.speed = walk
                ped.crossing_left -= DT
                if ped.crossing_left <= 0.0:
                    self._finish_crossing(ped)
                continue
            if ped.state == QUEUED:
                wp = ped.waypoints[ped.wp_idx]
                if self._ped_can_enter(wp, controls, queued=True):
                    ped.state = CROSSING
                    ped.crossing_left = wp.length_m / walk
                    ped.speed = walk
                else:
                    ped.speed = 0.0
                continue
            # walking
            ped.speed = walk
            wp = ped.current_waypoint()
            target = wp.x if wp is not None else ped.dest_x
            dist = (target - ped.x) * ped.dirn
            if dist > walk * DT:
                ped.x += ped.dirn * walk * DT
                continue
            ped.x = target
            if wp is None:
                ped.state = DONE
                arrived.append(idx)
                continue
            if self._ped_can_enter(wp, controls, queued=False):
                ped.state = CROSSING
                ped.crossing_left = wp.length_m / walk
            else:
                ped.state = QUEUED
                ped.speed = 0.0
        for idx in reversed(arrived):
            ped = self.peds.pop(idx)
            self.stats.ped_arrived += 1

    def _rebuild_crossing_flags(self) -> None:
        self._crossers_mb = {}
        self._crossing_main = False
        self._crossing_cross = False
        for ped in self.peds:
            if ped.state != CROSSING:
                continue
            wp = ped.waypoints[ped.wp_idx]
            if wp.group == "mb":
                self._crossers_mb.setdefault(wp.signal_id, []).append(ped)
            elif wp.group == "main":
                self._crossing_main = True
            else:
                self._crossing_cross = True

    # -- vehicle dynamics ---------------------------------------------------

    def _signal_blocks(self, veh: Vehicle, stop: LaneStop, controls) -> bool:
        states = controls.get(stop.signal_id)
        if states is None:
            # unsignalized mid-block: yield to a claimed crosswalk once it
            # is within sight distance
            return (stop.signal_id in self._crossers_mb
                    and stop.stop - veh.coord <= YIELD_HORIZON_M)
        state = states[stop.movement]
        if state == RED:
            return True
        if state == YELLOW:  # stop if a comfortable stop is possible
            dist = stop.stop - veh.coord
            return dist > 0 and veh.speed * veh.speed / (2.0 * dist) <= self.idm.b
        # green, but clearing pedestrians keep the box blocked
        if stop.stop - veh.coord > YIELD_HORIZON_M:
            return False
        if stop.movement == VEH_CROSS:
            return self._crossing_cross
        if stop.movement == VEH_MAIN:
            return self._crossing_main
        return stop.signal_id in self._crossers_mb

    def _step_vehicles(self, controls) -> None:
        p = self.idm
        for lane, vehicles in self.lanes.items():
            stops = self.stops[lane]
            n_stops = len(stops)
            lane_len = self.lane_length[lane]
            leader: Vehicle | None = None
            leader_new: float = 0.0
            for veh in vehicles:
                v = veh.speed
                while veh.next_stop < n_stops and veh.coord >= stops[veh.next_stop].stop:
                    veh.next_stop += 1
                accel = idm_accel(v, None, 1.0, p)
                if leader is not None:
                    gap = leader.coord - p.length_m - veh.coord
                    accel = min(accel, idm_accel(v, leader.speed, max(gap, MIN_GAP), p))
                blocked_at = None
                if veh.next_stop < n_stops:
                    stop = stops[veh.next_stop]
                    if self._signal_blocks(veh, stop, controls):
                        blocked_at = stop.stop
                        gap = blocked_at - veh.coord - p.s0
                        accel = min(accel, idm_accel(v, 0.0, max(gap, MIN_GAP), p))
                if accel < -EMERGENCY_DECEL:
                    accel = -EMERGENCY_DECEL
                new_speed = v + accel * DT
                if new_speed < 0.0:
                    new_speed = 0.0
                elif new_speed > p.v0:
                    new_speed = p.v0
                new_coord = veh.coord + (v + new_speed) * 0.5 * DT
                # never overlap the (already updated) leader
                if leader is not None:
                    limit = leader_new - p.length_m - 0.1
                    if new_coord > limit:
                        new_coord = max(veh.coord, limit)
                        new_speed = max(0.0, 2.0 * (new_coord - veh.coord) / DT - v)
                # never roll past a stop line we are held at
                if blocked_at is not None and veh.coord < blocked_at - 0.05:
                    limit = blocked_at - 0.05
                    if new_coord > limit:
                        new_coord = limit
                        new_speed = max(0.0, 2.0 * (new_coord - veh.coord) / DT - v)
                veh.coord = new_coord
                veh.speed = new_speed
                leader = veh
                leader_new = new_coord
            while vehicles and vehicles[0].coord >= lane_len:
                vehicles.pop(0)
                self.stats.veh_arrived += 1

    # -- conflicts, waits, tracing ------------------------------------------

    def _detect_conflicts(self, controls) -> list[ConflictEvent]:
        events: list[ConflictEvent] = []
        b = self.idm.b
        for sid, crossers in self._crossers_mb.items():
            if controls.get(sid) is not None:
                continue
            for lane in MAIN_LANES:
                stop = self._stop_at[(lane, sid)]
                for veh in self.lanes[lane]:
                    if veh.coord > stop.stop or veh.speed <= 0.0:
                        continue
                    dist = max(stop.stop - veh.coord, 0.1)
                    if veh.speed * veh.speed / (2.0 * dist) <= b:
                        continue
                    for ped in crossers:
                        key = (sid, veh.id, ped.id)
                        if key not in self._seen_conflicts:
                            self._seen_conflicts.add(key)
                            events.append(ConflictEvent(self.time, sid, veh.id, ped.id))
        return events

    def _account_waits(self) -> None:
        stats = self.stats
        for vehicles in self.lanes.values():
            for veh in vehicles:
                if veh.speed < VEH_WAIT_SPEED:
                    veh.cum_wait += DT
                    veh.cur_wait += DT
                    stats.veh_wait_steps += DT
                else:
                    veh.cur_wait = 0.0
        for ped in self.peds:
            if ped.speed < PED_WAIT_SPEED:
                ped.cum_wait += DT
                ped.cur_wait += DT
                stats.ped_wait_steps += DT
            else:
                ped.cur_wait = 0.0

    def _emit_trace(self, controls) -> None:
        w = self.trace
        t = int(self.time)
        for sid in sorted(controls):
            states = controls[sid]
            if states is None:
                w.write(f"t={t} sig id={sid} unsignalized\n")
            else:
                parts = " ".join(f"{m}={s}" for m, s in sorted(states.items()))
                w.write(f"t={t} sig id={sid} {parts}\n")
        for lane in (LANE_EB, LANE_WB, LANE_NB, LANE_SB):
            for veh in self.lanes[lane]:
                w.write(f"t={t} veh id={veh.id} lane={lane} "
                        f"pos={veh.coord:.4f} speed={veh.speed:.4f}\n")
        for ped in self.peds:
            w.write(f"t={t} ped id={ped.id} side={ped.side} pos={ped.x:.4f} "
                    f"speed={ped.speed:.4f} state={ped.state}\n")

    # -- public stepping ------------------------------------------------------

    def step(self, controls: dict[int, dict | None]) -> list[ConflictEvent]:
        """Advance the world by one second under the given movement states.

        Returns the conflict events recorded this step (also appended to
        stats.conflicts).
        """
        self._block_memo = {}
        self._spawn_vehicles()
        self._spawn_pedestrians()
        self._step_peds(controls)
        self._rebuild_crossing_flags()
        self._step_vehicles(controls)
        events = self._detect_conflicts(controls)
        self.stats.conflicts.extend(events)
        self._account_waits()
        if self.trace is not None:
            self._emit_trace(controls)
        self.time += DT
        return events

    def n_vehicles(self) -> int:
        return sum(len(v) for v in self.lanes.values())

    def n_pedestrians(self) -> int:
        return len(self.peds)


def step(state: SimState, controls: dict[int, dict | None],
         network: CorridorNetwork | None = None) -> SimState:
    """Functional wrapper over SimState.step (mutates and returns the state)."""
    state.step(controls)
    return state


def detect_conflicts(state: SimState, controls: dict[int, dict | None]) -> list[ConflictEvent]:
    """Evaluate the conflict rule against the current world state."""
    state._rebuild_crossing_flags()
    return state._detect_conflicts(controls)


def wait_snapshot(state: SimState, network: CorridorNetwork | None = None) -> WaitSnapshot:
    """Per-signal waiting counts and maximum continuous waits.

    Vehicles count toward the next signal ahead when inside its upstream
    detection zone and below the waiting-speed threshold; a signal's
    pedestrian count covers every crosswalk it controls.
    """
    net = network if network is not None else state.network
    n = net.n_signals
    snap = WaitSnapshot([0] * n, [0.0] * n, [0] * n, [0.0] * n)
    for lane, vehicles in state.lanes.items():
        stops = state.stops[lane]
        n_stops = len(stops)
        for veh in vehicles:
            if veh.speed >= VEH_WAIT_SPEED:
                continue
            idx = veh.next_stop
            while idx < n_stops and veh.coord >= stops[idx].stop:
                idx += 1
            if idx >= n_stops:
                continue
            stop = stops[idx]
            dist = stop.stop - veh.coord
            if 0.0 <= dist <= net.signals[stop.signal_id].veh_zone.upstream_m:
                sid = stop.signal_id
                snap.n_wait_veh[sid] += 1
                if veh.cur_wait > snap.max_wait_veh_s[sid]:
                    snap.max_wait_veh_s[sid] = veh.cur_wait
    for ped in state.peds:
        if ped.speed >= PED_WAIT_SPEED:
            continue
        wp = ped.current_waypoint()
        if wp is None:
            continue
        sid = wp.signal_id
        snap.n_wait_ped[sid] += 1
        if ped.cur_wait > snap.max_wait_ped_s[sid]:
            snap.max_wait_ped_s[sid] = ped.cur_wait
    return snap


def occupancy_features(state: SimState) -> list[float]:
    """Per-signal occupancy counts for one simulation step.

    Layout: for each signal, vehicle (incoming, inside, outgoing); then for
    each signal, pedestrian (incoming, outgoing). Raw counts; normalization
    happens downstream.
    """
    net = state.network
    n = net.n_signals
    veh_in = [0.0] * n
    veh_inside = [0.0] * n
    veh_out = [0.0] * n
    ped_in = [0.0] * n
    ped_out = [0.0] * n
    for lane, vehicles in state.lanes.items():
        stops = state.stops[lane]
        n_stops = len(stops)
        for veh in vehicles:
            idx = veh.next_stop
            while idx < n_stops and veh.coord >= stops[idx].stop:
                idx += 1
            if idx < n_stops:
                stop = stops[idx]
                dist = stop.stop - veh.coord
                if 0.0 <= dist <= net.signals[stop.signal_id].veh_zone.upstream_m:
                    veh_in[stop.signal_id] += 1.0
            if idx > 0:
                prev = stops[idx - 1]
                if veh.coord <= prev.exit:
                    veh_inside[prev.signal_id] += 1.0
                elif veh.coord - prev.exit <= net.signals[prev.signal_id].veh_zone.downstream_m:
                    veh_out[prev.signal_id] += 1.0
    for ped in state.peds:
        wp = ped.current_waypoint()
        if wp is not None:
            if ped.state == CROSSING:
                ped_out[wp.signal_id] += 1.0
            elif abs(ped.x - wp.x) <= net.signals[wp.signal_id].ped_zone.upstream_m:
                ped_in[wp.signal_id] += 1.0
        if ped.state != CROSSING and ped.wp_idx > 0:
            prev = ped.waypoints[ped.wp_idx - 1]
            if abs(ped.x - prev.x) <= net.signals[prev.signal_id].ped_zone.downstream_m:
                ped_out[prev.signal_id] += 1.0
    feats: list[float] = []
    for i in range(n):
        feats.extend((veh_in[i], veh_inside[i], veh_out[i]))
    for i in range(n):
        feats.extend((ped_in[i], ped_out[i]))
    return feats
