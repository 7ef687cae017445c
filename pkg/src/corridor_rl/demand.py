"""Trip-schedule generation and the Wi-Fi log filtering pipeline.

Trips arrive as homogeneous Poisson processes at configurable hourly rates.
Pedestrians either cross the corridor at a sampled crossing site or walk a
longitudinal sidewalk trip between access points; vehicles run the corridor
through or use the cross street. The Wi-Fi ingest turns raw
(client, building, timestamp) logs into building-to-building transition
counts usable as origin-destination weights.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import DegenerateError, FormatError, RangeError
from .microsim import LANE_EB, LANE_NB, LANE_SB, LANE_WB, PedTrip, VehicleTrip
from .network import CorridorNetwork


@dataclass
class DemandRates:
    ped_per_hr: float = 2223.0
    veh_per_hr: float = 202.0
    crossing_fraction: float = 0.44
    # optional weight overrides; empty dicts mean uniform
    veh_lane_weights: dict = field(default_factory=dict)
    ped_site_weights: dict = field(default_factory=dict)


@dataclass
class DemandSchedule:
    veh_trips: list[VehicleTrip]
    ped_trips: list[PedTrip]

    def __len__(self) -> int:
        return len(self.veh_trips) + len(self.ped_trips)


def load_demand_config(path: str) -> DemandRates:
    """Load a `key = value` demand config.

    Keys: ped_per_hr, veh_per_hr, crossing_fraction, and optional weight
    maps `lane_weights = EB:1,WB:1,NB:0.5,SB:0.5` and
    `site_weights = 0:1,1:2,...` (signal id to weight).
    """
    rates = DemandRates()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            try:
                if key in ("ped_per_hr", "veh_per_hr", "crossing_fraction"):
                    setattr(rates, key, float(value))
                elif key == "lane_weights":
                    rates.veh_lane_weights = {
                        k.strip(): float(v) for k, v in
                        (pair.split(":") for pair in value.split(","))}
                elif key == "site_weights":
                    rates.ped_site_weights = {
                        int(k): float(v) for k, v in
                        (pair.split(":") for pair in value.split(","))}
                else:
                    raise FormatError(f"{path}:{lineno}: unknown key {key!r}")
            except (ValueError, IndexError) as exc:
                raise FormatError(f"{path}:{lineno}: bad value {value!r}") from exc
    if not 0.0 <= rates.crossing_fraction <= 1.0:
        raise FormatError("crossing_fraction must lie in [0, 1]")
    if rates.ped_per_hr < 0 or rates.veh_per_hr < 0:
        raise FormatError("demand rates must be non-negative")
    return rates


# pedestrian access points along the corridor, as fractions of its length
_PED_ENDPOINT_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


def _normalized_weights(keys, overrides) -> np.ndarray:
    w = np.array([float(overrides.get(k, 1.0)) for k in keys], dtype=float)
    if w.sum() <= 0:
        raise RangeError("demand weights must have positive total")
    return w / w.sum()


def generate_trips(rates: DemandRates, scale: float, horizon_s: float, seed: int,
                   network: CorridorNetwork) -> DemandSchedule:
    """Sample a demand schedule at `scale` times the base rates.

    Poisson arrivals per class over [0, horizon_s); deterministic per seed.
    """
    if scale != 0.0 and not 0.25 <= scale <= 4.0:
        raise RangeError(f"demand scale must be 0 or within [0.25, 4], got {scale}")
    if horizon_s <= 0:
        raise RangeError(f"horizon must be > 0, got {horizon_s}")
    rng = np.random.default_rng(seed)
    hours = horizon_s / 3600.0

    lanes = [LANE_EB, LANE_WB]
    if network.cross_street_at_int:
        lanes += [LANE_NB, LANE_SB]
    lane_w = _normalized_weights(lanes, rates.veh_lane_weights)
    n_veh = rng.poisson(rates.veh_per_hr * scale * hours) if scale else 0
    veh_times = np.sort(rng.uniform(0.0, horizon_s, size=n_veh))
    veh_lanes = rng.choice(len(lanes), size=n_veh, p=lane_w)
    veh_trips = [VehicleTrip(float(t), lanes[i]) for t, i in zip(veh_times, veh_lanes)]

    sites = [s.id for s in network.signals]
    site_w = _normalized_weights(sites, rates.ped_site_weights)
    endpoints = [f * network.length_m for f in _PED_ENDPOINT_FRACTIONS]
    n_ped = rng.poisson(rates.ped_per_hr * scale * hours) if scale else 0
    ped_times = np.sort(rng.uniform(0.0, horizon_s, size=n_ped))
    crossing = rng.random(n_ped) < rates.crossing_fraction
    cross_sites = rng.choice(len(sites), size=n_ped, p=site_w)
    origin_idx = rng.integers(0, len(endpoints), size=n_ped)
    dest_idx = rng.integers(0, len(endpoints), size=n_ped)
    sides = rng.integers(0, 2, size=n_ped)
    ped_trips = []
    for k in range(n_ped):
        side = "N" if sides[k] == 0 else "S"
        if crossing[k]:
            ped_trips.append(PedTrip(float(ped_times[k]), endpoints[origin_idx[k]],
                                     side, endpoints[dest_idx[k]],
                                     sites[cross_sites[k]]))
        else:
            d = dest_idx[k]
            if d == origin_idx[k]:
                d = (d + 1 + d % (len(endpoints) - 1)) % len(endpoints)
            ped_trips.append(PedTrip(float(ped_times[k]), endpoints[origin_idx[k]],
                                     side, endpoints[d], None))
    return DemandSchedule(veh_trips, ped_trips)


# -- Wi-Fi log processing ----------------------------------------------------

@dataclass(frozen=True)
class WifiLogRecord:
    client_id: str
    building_id: str
    timestamp: float  # epoch seconds


def parse_wifi_csv(path: str) -> list[WifiLogRecord]:
    """Read `client_id,building_id,timestamp` rows (ISO-8601 timestamps)."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if lineno == 1 and row and row[0].strip().lower() == "client_id":
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            client, building, ts = (c.strip() for c in row)
            try:
                stamp = datetime.fromisoformat(ts).timestamp()
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad timestamp {ts!r}") from exc
            records.append(WifiLogRecord(client, building, stamp))
    return records


def _merge_sessions(records: list[WifiLogRecord]):
    """Per client: merge consecutive same-building records into visits
    (building, start, end), ordered by time."""
    by_client: dict[str, list[WifiLogRecord]] = {}
    for rec in records:
        by_client.setdefault(rec.client_id, []).append(rec)
    visits = {}
    for client, recs in by_client.items():
        recs.sort(key=lambda r: (r.timestamp, r.building_id))
        merged = []
        for rec in recs:
            if merged and merged[-1][0] == rec.building_id:
                prev = merged[-1]
                merged[-1] = (prev[0], prev[1], rec.timestamp)
            else:
                merged.append((rec.building_id, rec.timestamp, rec.timestamp))
        visits[client] = merged
    return visits


def _day_of(ts: float) -> int:
    return int(ts // 86400)


def stationary_features(visits) -> tuple[float, float]:
    """(mean, variance) over days of the daily stationary ratio: the longest
    same-building session over total active time that day."""
    by_day: dict[int, list[tuple[str, float, float]]] = {}
    for visit in visits:
        by_day.setdefault(_day_of(visit[1]), []).append(visit)
    ratios = []
    for day_visits in by_day.values():
        total = sum(v[2] - v[1] for v in day_visits)
        longest = max(v[2] - v[1] for v in day_visits)
        ratios.append(longest / total if total > 0 else 1.0)
    mean = sum(ratios) / len(ratios)
    var = sum((r - mean) ** 2 for r in ratios) / len(ratios)
    return mean, var


def kmeans_2(points: np.ndarray, seed: int = 0, max_iter: int = 100):
    """Two-means clustering: k-means++-style seeding, Lloyd's iterations to
    an assignment fixpoint. Returns (labels, centroids)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise DegenerateError("need at least 2 points of equal dimension")
    if np.allclose(pts, pts[0]):
        raise DegenerateError("all points identical; no 2-partition exists")
    rng = np.random.default_rng(seed)
    first = pts[rng.integers(len(pts))]
    d2 = ((pts - first) ** 2).sum(axis=1)
    second = pts[rng.choice(len(pts), p=d2 / d2.sum())]
    centers = np.stack([first, second])
    labels = np.zeros(len(pts), dtype=int)
    for _ in range(max_iter):
        dists = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for j in (0, 1):
            mask = new_labels == j
            if mask.any():
                centers[j] = pts[mask].mean(axis=0)
        if (new_labels == labels).all():
            labels = new_labels
            break
        labels = new_labels
    return labels, centers


def ingest_wifi_logs(records: list[WifiLogRecord], seed: int = 0,
                     min_days: int = 3) -> dict[tuple[str, str], int]:
    """Filter raw logs and return building-to-building transition counts.

    Pipeline: merge consecutive same-building sessions, drop clients active
    on fewer than `min_days` distinct days, then drop the 2-means cluster
    with the higher mean stationary ratio (non-mobile devices). Result is
    invariant to input record ordering.
    """
    for rec in records:
        if not isinstance(rec, WifiLogRecord):
            raise FormatError(f"not a WifiLogRecord: {rec!r}")
    visits = _merge_sessions(records)
    visits = {
        c: v for c, v in visits.items()
        if len({_day_of(x[1]) for x in v}) >= min_days
    }
    if not visits:
        return {}
    clients = sorted(visits)
    feats = np.array([stationary_features(visits[c]) for c in clients])
    if len(clients) >= 2 and not np.allclose(feats, feats[0]):
        labels, _ = kmeans_2(feats, seed=seed)
        mean0 = feats[labels == 0, 0].mean() if (labels == 0).any() else -math.inf
        mean1 = feats[labels == 1, 0].mean() if (labels == 1).any() else -math.inf
        drop = 0 if mean0 > mean1 else 1
        clients = [c for c, lab in zip(clients, labels) if lab != drop]
    table: dict[tuple[str, str], int] = {}
    for client in clients:
        trail = visits[client]
        for a, b in zip(trail, trail[1:]):
            if a[0] != b[0]:
                key = (a[0], b[0])
                table[key] = table.get(key, 0) + 1
    return table


def write_od_csv(table: dict[tuple[str, str], int], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from_building", "to_building", "count"])
        for (src, dst), count in sorted(table.items()):
            writer.writerow([src, dst, count])
