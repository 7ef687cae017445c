"""Corridor topology: signal sites, detection zones, and config loading.

The corridor is modeled as a 1-D axis (west -> east, positions in meters).
One signal site is a full intersection where a cross street (north-south)
meets the corridor; the remaining sites are mid-block crosswalks. The
intersection's cross street is represented by two stub approaches attached
at the intersection position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ConfigError

INTERSECTION = "intersection"
MIDBLOCK = "midblock"

# zone_membership results
INCOMING = "incoming"
INSIDE = "inside"
OUTGOING = "outgoing"
NONE = "none"

# crosswalk groups at a site: mid-blocks have a single group; the
# intersection has crosswalks over the main corridor (its east/west legs)
# and over the cross street (its north/south legs).
CW_MAIN = "main"
CW_CROSS = "cross"


@dataclass(frozen=True)
class ZoneSpec:
    """Detection zone lengths around a stop line, in meters."""

    upstream_m: float
    downstream_m: float


@dataclass(frozen=True)
class Crosswalk:
    group: str          # CW_MAIN or CW_CROSS
    length_m: float     # distance a pedestrian walks to cross


@dataclass(frozen=True)
class SignalSite:
    id: int
    kind: str                    # INTERSECTION or MIDBLOCK
    position_m: float            # stop line = upstream edge of the crosswalk band
    crosswalks: tuple[Crosswalk, ...]
    veh_zone: ZoneSpec
    ped_zone: ZoneSpec
    box_len_m: float             # longitudinal extent of the crosswalk band / junction box


@dataclass(frozen=True)
class CorridorNetwork:
    length_m: float
    signals: tuple[SignalSite, ...]
    main_lanes_per_direction: int
    cross_street_at_int: bool
    sidewalk_width_m: float
    crossing_width_m: float
    speed_limit_mps: float
    ped_speed_mps: float
    crossing_length_m: float     # main-corridor crosswalk length (road width)
    cross_stub_m: float          # length of each cross-street approach stub

    @property
    def intersection(self) -> SignalSite:
        return next(s for s in self.signals if s.kind == INTERSECTION)

    @property
    def midblocks(self) -> tuple[SignalSite, ...]:
        return tuple(s for s in self.signals if s.kind == MIDBLOCK)

    @property
    def n_signals(self) -> int:
        return len(self.signals)


@dataclass
class NetworkConfig:
    """Parsed network configuration; see `load_network_config` for the file format."""

    length_m: float = 750.0
    signal_positions: tuple[float, ...] = ()   # empty -> evenly spaced defaults
    intersection_index: int = 3
    n_midblocks: int = 7
    main_lanes_per_direction: int = 1
    cross_street_at_int: bool = True
    sidewalk_width_m: float = 4.0
    crossing_width_m: float = 4.0
    speed_limit_mps: float = 13.89
    ped_speed_mps: float = 2.78
    crossing_length_m: float = 9.75
    cross_stub_m: float = 120.0
    junction_len_m: float = 12.0
    veh_zone_upstream_m: float = 50.0
    veh_zone_downstream_m: float = 20.0
    ped_zone_upstream_m: float = 8.0
    ped_zone_downstream_m: float = 8.0
    mini: bool = False
    extra: dict = field(default_factory=dict)


def mini_config() -> NetworkConfig:
    """Desk-scale corridor: 200 m, one intersection between two mid-blocks."""
    return NetworkConfig(
        length_m=200.0,
        signal_positions=(50.0, 100.0, 150.0),
        intersection_index=1,
        n_midblocks=2,
        cross_stub_m=80.0,
        mini=True,
    )


_BOOL_KEYS = {"cross_street_at_int", "mini"}
_INT_KEYS = {"intersection_index", "n_midblocks", "main_lanes_per_direction"}
_TUPLE_KEYS = {"signal_positions"}


def load_network_config(path: str, mini: bool | None = None) -> NetworkConfig:
    """Load a `key = value` network config file.

    Unknown keys raise ConfigError. `signal_positions` is a comma-separated
    list; booleans are true/false. Passing mini=True relaxes site-count
    checks regardless of the file contents.
    """
    cfg = NetworkConfig()
    known = set(cfg.__dataclass_fields__) - {"extra"}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                if key in _BOOL_KEYS:
                    parsed = {"true": True, "false": False}[value.lower()]
                elif key in _INT_KEYS:
                    parsed = int(value)
                elif key in _TUPLE_KEYS:
                    parsed = tuple(float(v) for v in value.split(",") if v.strip())
                else:
                    parsed = float(value)
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
            setattr(cfg, key, parsed)
    if mini is not None:
        cfg = replace(cfg, mini=mini)
    return cfg


def _check_positive(cfg: NetworkConfig, name: str) -> float:
    value = getattr(cfg, name)
    if not math.isfinite(value) or value <= 0:
        raise ConfigError(f"{name} must be finite and > 0, got {value}")
    return value


def build_corridor(config: NetworkConfig) -> CorridorNetwork:
    """Validate a config and construct the immutable network.

    Deterministic: the same config always yields a field-for-field
    identical network. Raises ConfigError naming the offending field.
    """
    for name in (
        "length_m", "sidewalk_width_m", "crossing_width_m", "speed_limit_mps",
        "ped_speed_mps", "crossing_length_m", "cross_stub_m", "junction_len_m",
        "veh_zone_upstream_m", "veh_zone_downstream_m",
        "ped_zone_upstream_m", "ped_zone_downstream_m",
    ):
        _check_positive(config, name)
    if config.main_lanes_per_direction < 1:
        raise ConfigError("main_lanes_per_direction must be >= 1")
    if not 15.0 <= config.veh_zone_upstream_m <= 100.0:
        raise ConfigError(
            f"veh_zone_upstream_m must lie in [15, 100], got {config.veh_zone_upstream_m}")
    if not 5.0 <= config.ped_zone_upstream_m <= 10.0:
        raise ConfigError(
            f"ped_zone_upstream_m must lie in [5, 10], got {config.ped_zone_upstream_m}")

    positions = config.signal_positions
    if not positions:
        n_sites = config.n_midblocks + 1
        positions = tuple(
            round(config.length_m * (i + 1) / (n_sites + 1), 3) for i in range(n_sites)
        )
    n_sites = len(positions)
    n_mb = n_sites - 1
    if not config.mini and n_mb != 7:
        raise ConfigError(f"signal_positions: expected 7 mid-block sites, got {n_mb}")
    if config.mini and n_mb < 1:
        raise ConfigError("signal_positions: need at least 1 mid-block site")
    if not 0 <= config.intersection_index < n_sites:
        raise ConfigError(
            f"intersection_index {config.intersection_index} out of range for {n_sites} sites")
    last = -math.inf
    for pos in positions:
        if not math.isfinite(pos) or not 0.0 <= pos <= config.length_m:
            raise ConfigError(f"signal_positions: {pos} outside [0, {config.length_m}]")
        if pos <= last:
            raise ConfigError("signal_positions must be strictly increasing")
        last = pos

    veh_zone = ZoneSpec(config.veh_zone_upstream_m, config.veh_zone_downstream_m)
    ped_zone = ZoneSpec(config.ped_zone_upstream_m, config.ped_zone_downstream_m)
    cross_len = config.cross_stub_m  # pedestrian path over the cross street stub width
    sites = []
    for i, pos in enumerate(positions):
        if i == config.intersection_index:
            crosswalks = (
                Crosswalk(CW_MAIN, config.crossing_length_m),
                Crosswalk(CW_MAIN, config.crossing_length_m),
                Crosswalk(CW_CROSS, min(cross_len, config.crossing_length_m)),
                Crosswalk(CW_CROSS, min(cross_len, config.crossing_length_m)),
            )
            sites.append(SignalSite(i, INTERSECTION, pos, crosswalks,
                                    veh_zone, ped_zone, config.junction_len_m))
        else:
            crosswalks = (Crosswalk(CW_MAIN, config.crossing_length_m),)
            sites.append(SignalSite(i, MIDBLOCK, pos, crosswalks,
                                    veh_zone, ped_zone, config.crossing_width_m))

    n_int = sum(1 for s in sites if s.kind == INTERSECTION)
    if n_int != 1:
        raise ConfigError(f"expected exactly 1 intersection site, got {n_int}")

    return CorridorNetwork(
        length_m=config.length_m,
        signals=tuple(sites),
        main_lanes_per_direction=config.main_lanes_per_direction,
        cross_street_at_int=config.cross_street_at_int,
        sidewalk_width_m=config.sidewalk_width_m,
        crossing_width_m=config.crossing_width_m,
        speed_limit_mps=config.speed_limit_mps,
        ped_speed_mps=config.ped_speed_mps,
        crossing_length_m=config.crossing_length_m,
        cross_stub_m=config.cross_stub_m,
    )


def zone_membership(network: CorridorNetwork, signal_id: int, position_m: float,
                    agent_kind: str, direction: int = 1) -> str:
    """Classify a longitudinal position relative to a signal's stop line.

    `agent_kind` is "vehicle" or "pedestrian"; `direction` is +1 for travel
    toward increasing position, -1 for the reverse (zones mirror). Vehicles
    classify into incoming / inside / outgoing; pedestrians have no inside
    region (a crossing pedestrian moves laterally, not along the corridor).
    """
    if not 0 <= signal_id < len(network.signals):
        raise IndexError(f"signal_id {signal_id} out of range")
    site = network.signals[signal_id]
    if agent_kind == "vehicle":
        zone = site.veh_zone
        lo, hi = site.position_m, site.position_m + site.box_len_m
        if direction >= 0:
            # stop line at lo, travel toward +x
            if lo - zone.upstream_m <= position_m < lo:
                return INCOMING
            if lo <= position_m <= hi:
                return INSIDE
            if hi < position_m <= hi + zone.downstream_m:
                return OUTGOING
        else:
            # stop line at hi, travel toward -x
            if hi < position_m <= hi + zone.upstream_m:
                return INCOMING
            if lo <= position_m <= hi:
                return INSIDE
            if lo - zone.downstream_m <= position_m < lo:
                return OUTGOING
        return NONE
    if agent_kind == "pedestrian":
        zone = site.ped_zone
        pos = site.position_m
        if direction >= 0:
            if pos - zone.upstream_m <= position_m <= pos:
                return INCOMING
            if pos < position_m <= pos + zone.downstream_m:
                return OUTGOING
        else:
            if pos <= position_m <= pos + zone.upstream_m:
                return INCOMING
            if pos - zone.downstream_m <= position_m < pos:
                return OUTGOING
        return NONE
    raise ValueError(f"unknown agent_kind {agent_kind!r}")
