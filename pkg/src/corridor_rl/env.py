"""POMDP wrapper around the microsimulator.

Each action lasts 10 simulation steps. Observations stack the last 10
per-step feature vectors (phase encoding + per-signal occupancy counts).
The reward exponentially amplifies queue-length times maximum-wait products
per agent class, taken from the waiting snapshot at the final step of the
interval. Observation features and the scalar reward are normalized online
with Welford statistics that persist across episodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .demand import DemandRates, generate_trips
from .errors import EpisodeDone
from .microsim import SimState, WaitSnapshot, occupancy_features, wait_snapshot
from .network import CorridorNetwork
from .signals import ActionVector, InterlockBank, fixed_time_states, fixed_time_targets

STEPS_PER_ACTION = 10
HORIZON_ACTIONS = 60
WARMUP_RANGE = (100, 250)

# reward normalization constants: incoming directions at the intersection
# and per mid-block (two vehicle approach directions)
D_INT = 4
D_MB = 2
REWARD_CLIP = 1e5
_EXP_GUARD = 700.0  # just below float64 exp overflow; such totals clip anyway


@dataclass(frozen=True)
class RewardBreakdown:
    q_int_veh: float
    q_int_ped: float
    q_mb_veh: float
    q_mb_ped: float
    r_int_veh: float
    r_int_ped: float
    r_mb_veh: float
    r_mb_ped: float
    total: float

    @property
    def queue_penalty_sum(self) -> float:
        """Diagnostic: plain sum of the normalized queue terms, without the
        exponential amplification."""
        return self.q_int_veh + self.q_int_ped + self.q_mb_veh + self.q_mb_ped


def compute_reward(snapshot: WaitSnapshot, int_id: int, mb_ids: list[int],
                   d_int: int = D_INT, d_mb: int = D_MB) -> tuple[float, RewardBreakdown]:
    """Exponentially amplified queue-times-max-wait penalty, clipped to
    [-1e5, 0]. Mid-block terms aggregate across sites with the L2 norm."""
    q_int_veh = snapshot.n_wait_veh[int_id] * snapshot.max_wait_veh_s[int_id] / (8.0 * d_int)
    q_int_ped = snapshot.n_wait_ped[int_id] * snapshot.max_wait_ped_s[int_id] / (10.0 * d_int)
    q_mb_veh = math.sqrt(sum(
        (snapshot.n_wait_veh[i] * snapshot.max_wait_veh_s[i] / (8.0 * d_mb)) ** 2
        for i in mb_ids))
    q_mb_ped = math.sqrt(sum(
        (snapshot.n_wait_ped[i] * snapshot.max_wait_ped_s[i] / 10.0) ** 2
        for i in mb_ids))
    r_int_veh = math.exp(min(q_int_veh, _EXP_GUARD))
    r_int_ped = math.exp(min(q_int_ped, _EXP_GUARD))
    r_mb_veh = math.exp(min(q_mb_veh, _EXP_GUARD))
    r_mb_ped = math.exp(min(q_mb_ped, _EXP_GUARD))
    total = -(r_int_veh + r_int_ped + r_mb_veh + r_mb_ped)
    if total < -REWARD_CLIP:
        total = -REWARD_CLIP
    breakdown = RewardBreakdown(q_int_veh, q_int_ped, q_mb_veh, q_mb_ped,
                                r_int_veh, r_int_ped, r_mb_veh, r_mb_ped, total)
    return total, breakdown


class WelfordStats:
    """Single-pass running mean/variance over vectors (or scalars as shape ()).

    The scalar form keeps plain floats; the update is on the per-step hot
    path of reward normalization and long oracle streams.
    """

    def __init__(self, shape=()):
        self.count = 0
        self._scalar = shape == ()
        if self._scalar:
            self.mean = 0.0
            self.m2 = 0.0
        else:
            self.mean = np.zeros(shape, dtype=np.float64)
            self.m2 = np.zeros(shape, dtype=np.float64)

    def update(self, x) -> None:
        self.count += 1
        if self._scalar:
            x = float(x)
            delta = x - self.mean
            self.mean += delta / self.count
            self.m2 += delta * (x - self.mean)
        else:
            x = np.asarray(x, dtype=np.float64)
            delta = x - self.mean
            self.mean = self.mean + delta / self.count
            self.m2 = self.m2 + delta * (x - self.mean)

    @property
    def variance(self):
        if self.count == 0:
            return 0.0 if self._scalar else np.zeros_like(self.m2)
        return self.m2 / self.count

    @property
    def std(self):
        return math.sqrt(self.variance) if self._scalar else np.sqrt(self.variance)

    def normalize(self, x, eps: float = 1e-8):
        if self._scalar:
            if self.count == 0:
                return float(x)
            return (float(x) - self.mean) / max(self.std, eps)
        x = np.asarray(x, dtype=np.float64)
        if self.count == 0:
            return x
        return (x - self.mean) / np.maximum(self.std, eps)

    def update_and_normalize(self, x, eps: float = 1e-8):
        self.update(x)
        return self.normalize(x, eps)

    def merge(self, other: "WelfordStats") -> None:
        """Combine another run's statistics into this one (parallel Welford)."""
        if other.count == 0:
            return
        if self.count == 0:
            self.count = other.count
            self.mean = other.mean if other._scalar else other.mean.copy()
            self.m2 = other.m2 if other._scalar else other.m2.copy()
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / total)
        self.m2 = self.m2 + other.m2 + delta * delta * (self.count * other.count / total)
        self.count = total

    def state(self) -> dict:
        if self._scalar:
            return {"count": self.count, "mean": self.mean, "m2": self.m2}
        return {"count": self.count, "mean": self.mean.copy(), "m2": self.m2.copy()}

    def load_state(self, state: dict) -> None:
        self.count = int(state["count"])
        if self._scalar:
            self.mean = float(state["mean"])
            self.m2 = float(state["m2"])
        else:
            self.mean = np.asarray(state["mean"], dtype=np.float64).copy()
            self.m2 = np.asarray(state["m2"], dtype=np.float64).copy()


def welford_update_and_normalize(stats: WelfordStats, x):
    """Functional form of the update-then-normalize step."""
    return stats, stats.update_and_normalize(x)


class RewardNormalizer:
    """Return-style reward scaling: divide by the running std of a
    discounted-return proxy, no mean subtraction. The scaled reward is
    clipped to +-CLIP to contain the exponential penalty spikes."""

    CLIP = 10.0

    def __init__(self, gamma: float = 0.99):
        self.gamma = gamma
        self.ret = 0.0
        self.stats = WelfordStats(())

    def _scale(self, r: float) -> float:
        std = float(self.stats.std)
        scaled = r / std if std > 1e-8 else r
        return min(max(scaled, -self.CLIP), self.CLIP)

    def update_and_normalize(self, r: float) -> float:
        self.ret = self.gamma * self.ret + r
        self.stats.update(self.ret)
        return self._scale(r)

    def normalize(self, r: float) -> float:
        return self._scale(r)

    def episode_reset(self) -> None:
        self.ret = 0.0

    def state(self) -> dict:
        return {"gamma": self.gamma, "ret": self.ret, "stats": self.stats.state()}

    def load_state(self, state: dict) -> None:
        self.gamma = float(state["gamma"])
        self.ret = float(state["ret"])
        self.stats.load_state(state["stats"])


@dataclass
class EpisodeConfig:
    warmup_range: tuple[int, int] = WARMUP_RANGE
    horizon_actions: int = HORIZON_ACTIONS
    steps_per_action: int = STEPS_PER_ACTION
    scale_range: tuple[float, float] = (1.0, 2.25)


class TrafficEnv:
    """Single-agent signal-control environment over one corridor network.

    Welford statistics persist across episodes; set `update_stats=False`
    (after loading trained stats) to freeze normalization for evaluation.
    """

    def __init__(self, network: CorridorNetwork, rates: DemandRates | None = None,
                 seed: int = 0, episode: EpisodeConfig | None = None,
                 normalize: bool = True, update_stats: bool = True,
                 reward_gamma: float = 0.99, trace=None, metrics_log=None):
        self.network = network
        self.rates = rates if rates is not None else DemandRates()
        self.episode = episode if episode is not None else EpisodeConfig()
        self.rng = np.random.default_rng(seed)
        self.n_mb = len(network.midblocks)
        self.mb_ids = [s.id for s in network.midblocks]
        self.int_id = network.intersection.id
        self.phi_dim = 4 + self.n_mb
        self.feat_dim = self.phi_dim + 3 * network.n_signals + 2 * network.n_signals
        self.obs_shape = (self.episode.steps_per_action, self.feat_dim)
        self.obs_dim = self.obs_shape[0] * self.obs_shape[1]
        self.normalize = normalize
        self.update_stats = update_stats
        self.obs_stats = WelfordStats((self.obs_dim,))
        self.reward_norm = RewardNormalizer(reward_gamma)
        self.trace = trace
        self.metrics_log = metrics_log
        self.sim: SimState | None = None
        self.bank: InterlockBank | None = None
        self.action_count = 0
        self.done = True
        self.scale = 1.0
        self.warmup_steps = 0
        self.total_sim_steps = 0  # across episodes, warmup included

    # -- observation pieces -------------------------------------------------

    def _phi(self, targets: dict[int, int]) -> list[float]:
        phi = [0.0] * self.phi_dim
        phi[targets[self.int_id] - 1] = 1.0
        for j, mb in enumerate(self.mb_ids):
            phi[4 + j] = 1.0 if targets[mb] == 1 else 0.0
        return phi

    def _feature_row(self, targets: dict[int, int]) -> list[float]:
        return self._phi(targets) + occupancy_features(self.sim)

    def _finalize_obs(self, rows: list[list[float]]) -> np.ndarray:
        raw = np.asarray(rows, dtype=np.float64).reshape(-1)
        self._last_raw_obs = raw.reshape(self.obs_shape).copy()
        if not self.normalize:
            return raw
        if self.update_stats:
            return self.obs_stats.update_and_normalize(raw)
        return self.obs_stats.normalize(raw)

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, seed: int | None = None, demand_scale: float | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        lo, hi = self.episode.warmup_range
        self.warmup_steps = int(self.rng.integers(lo, hi + 1))
        if demand_scale is None:
            s_lo, s_hi = self.episode.scale_range
            self.scale = float(self.rng.uniform(s_lo, s_hi)) if s_hi > s_lo else s_lo
        else:
            self.scale = float(demand_scale)
        horizon_s = self.warmup_steps + \
            self.episode.horizon_actions * self.episode.steps_per_action
        demand_seed = int(self.rng.integers(0, 2 ** 31 - 1))
        schedule = generate_trips(self.rates, self.scale, horizon_s, demand_seed, self.network)
        self.sim = SimState(self.network, schedule.veh_trips, schedule.ped_trips,
                            trace=self.trace)
        rows: list[list[float]] = []
        n_keep = self.episode.steps_per_action
        for _ in range(self.warmup_steps):
            t = self.sim.time
            self.sim.step(fixed_time_states(self.network, t))
            rows.append(self._feature_row(fixed_time_targets(self.network, t)))
            if len(rows) > n_keep:
                rows.pop(0)
        self.total_sim_steps += self.warmup_steps
        handover = fixed_time_targets(self.network, self.sim.time)
        self.bank = InterlockBank(self.network, initial_phases=handover)
        self.action_count = 0
        self.done = False
        self.reward_norm.episode_reset()
        return self._finalize_obs(rows)

    def step(self, action: ActionVector):
        if self.done:
            raise EpisodeDone("episode horizon reached; call reset()")
        self.bank.apply(action)
        rows: list[list[float]] = []
        displays: list[dict] = []
        conflicts = 0
        for _ in range(self.episode.steps_per_action):
            states = self.bank.tick()
            displays.append(states)
            conflicts += len(self.sim.step(states))
            rows.append(self._feature_row(self.bank.targets()))
        self.total_sim_steps += self.episode.steps_per_action
        snapshot = wait_snapshot(self.sim)
        raw_reward, breakdown = compute_reward(snapshot, self.int_id, self.mb_ids)
        obs = self._finalize_obs(rows)
        if self.normalize:
            if self.update_stats:
                reward = self.reward_norm.update_and_normalize(raw_reward)
            else:
                reward = self.reward_norm.normalize(raw_reward)
        else:
            reward = raw_reward
        self.action_count += 1
        self.done = self.action_count >= self.episode.horizon_actions
        info = {
            "raw_reward": raw_reward,
            "breakdown": breakdown,
            "queue_penalty_sum": breakdown.queue_penalty_sum,
            "snapshot": snapshot,
            "raw_obs": self._last_raw_obs,
            "targets": dict(self.bank.targets()),
            "displays": displays,
            "conflicts": conflicts,
            "scale": self.scale,
        }
        if self.metrics_log is not None:
            self._write_metrics(reward, info)
        return obs, reward, self.done, info

    def _write_metrics(self, reward: float, info: dict) -> None:
        record = {
            "action_step": self.action_count,
            "sim_time": self.sim.time,
            "scale": self.scale,
            "reward": reward,
            "raw_reward": info["raw_reward"],
            "queue_penalty_sum": info["queue_penalty_sum"],
            "conflicts": info["conflicts"],
            "targets": {str(k): v for k, v in info["targets"].items()},
            "n_wait_veh": info["snapshot"].n_wait_veh,
            "n_wait_ped": info["snapshot"].n_wait_ped,
        }
        self.metrics_log.write(json.dumps(record, sort_keys=True) + "\n")
