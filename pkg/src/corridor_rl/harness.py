"""Controller benchmarks: runs episodes across demand scales and seeds,
computes wait/conflict/switch/coordination metrics, and emits per-run and
aggregate CSVs plus comparison tables.

Controllers:
  fixed        -- every signal on its fixed-time schedule
  unsignalized -- mid-blocks unsignalized (pedestrian right-of-way), the
                  intersection stays on fixed-time control
  rl           -- trained policy driving the interlocks after a fixed-time
                  warmup
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .demand import DemandRates, generate_trips
from .env import EpisodeConfig, TrafficEnv
from .errors import CheckpointError, MismatchError
from .microsim import SimState
from .network import INTERSECTION, CorridorNetwork
from .ppo import forward, load_checkpoint, sample_and_logprob
from .signals import (GREEN, INT_CONFLICTS, MB_CONFLICTS, count_switches,
                      fixed_time_intersection, fixed_time_states,
                      fixed_time_targets)

CONTROLLERS = ("fixed", "unsignalized", "rl")

RUN_CSV_FIELDS = ("controller", "scale", "seed", "n_ped", "n_veh",
                  "avg_wait_ped_s", "avg_wait_veh_s", "total_wait_ped_hr",
                  "total_wait_veh_hr", "combined_avg_wait_s", "conflicts",
                  "switches", "avg_simultaneous_mb_green", "safety_violations")


@dataclass
class RunMetrics:
    controller: str
    scale: float
    seed: int
    n_ped: int
    n_veh: int
    total_wait_ped_s: float
    total_wait_veh_s: float
    conflicts: int
    switches: int
    avg_simultaneous_mb_green: float
    safety_violations: int

    @property
    def avg_wait_ped_s(self) -> float:
        return self.total_wait_ped_s / self.n_ped if self.n_ped else 0.0

    @property
    def avg_wait_veh_s(self) -> float:
        return self.total_wait_veh_s / self.n_veh if self.n_veh else 0.0

    @property
    def total_wait_ped_hr(self) -> float:
        return self.total_wait_ped_s / 3600.0

    @property
    def total_wait_veh_hr(self) -> float:
        return self.total_wait_veh_s / 3600.0

    @property
    def combined_avg_wait_s(self) -> float:
        """Wait per agent over both classes together."""
        n = self.n_ped + self.n_veh
        return (self.total_wait_ped_s + self.total_wait_veh_s) / n if n else 0.0


@dataclass
class MetricsReport:
    controller: str
    scale: float
    runs: list[RunMetrics]

    def mean_std(self, attr: str) -> tuple[float, float]:
        vals = np.array([getattr(r, attr) for r in self.runs], dtype=float)
        return float(vals.mean()), float(vals.std())


@dataclass
class BenchmarkPlan:
    controllers: tuple[str, ...] = CONTROLLERS
    scales: tuple[float, ...] = tuple(round(0.5 + 0.25 * i, 2) for i in range(10))
    runs_per_cell: int = 10
    seed: int = 0
    checkpoint: str | None = None

    def __post_init__(self):
        if self.runs_per_cell < 1:
            raise ValueError("runs_per_cell must be >= 1")
        for c in self.controllers:
            if c not in CONTROLLERS:
                raise ValueError(f"unknown controller {c!r}")


def run_seed_for(plan_seed: int, scale: float, run_idx: int) -> int:
    return (plan_seed * 2_654_435_761 + int(round(scale * 100)) * 97_561
            + run_idx * 7_919 + 11) % (2 ** 31 - 1)


def coordination_metric(action_trace) -> float:
    """Mean number of mid-blocks set to vehicle flow per action step."""
    if not action_trace:
        return 0.0
    return float(np.mean([sum(a.midblock) for a in action_trace]))


class RlController:
    """Loads a checkpoint and drives a TrafficEnv with frozen normalizer
    statistics; actions are sampled with a per-run generator."""

    def __init__(self, checkpoint_path: str):
        if not os.path.exists(checkpoint_path):
            raise CheckpointError(f"checkpoint not found: {checkpoint_path}")
        self.policy, header = load_checkpoint(checkpoint_path)
        self.obs_stats_state = header.get("obs_stats")
        self.reward_norm = header.get("reward_norm")
        self.meta = header.get("meta", {})

    def make_env(self, network: CorridorNetwork, rates: DemandRates,
                 episode: EpisodeConfig, seed: int, trace=None,
                 metrics_log=None) -> TrafficEnv:
        env = TrafficEnv(network, rates=rates, seed=seed, episode=episode,
                         update_stats=False, trace=trace, metrics_log=metrics_log)
        if self.obs_stats_state is not None:
            env.obs_stats.load_state(self.obs_stats_state)
        if self.reward_norm is not None:
            env.reward_norm.load_state({
                "gamma": self.reward_norm["gamma"], "ret": 0.0,
                "stats": {"count": self.reward_norm["count"],
                          "mean": self.reward_norm["mean"],
                          "m2": self.reward_norm["m2"]}})
        return env


def _stat_mark(sim: SimState):
    return (sim.stats.veh_wait_steps, sim.stats.ped_wait_steps,
            sim.stats.veh_spawned, sim.stats.ped_spawned,
            len(sim.stats.conflicts))


def _unsignalized_states(network: CorridorNetwork, t: float):
    states: dict[int, dict | None] = {}
    for site in network.signals:
        if site.kind == INTERSECTION:
            states[site.id] = fixed_time_intersection(t).states
        else:
            states[site.id] = None
    return states


def audit_states(network: CorridorNetwork, states) -> int:
    """Count conflicting simultaneous greens in one step's movement states."""
    violations = 0
    for site in network.signals:
        st = states.get(site.id)
        if st is None:
            continue
        pairs = INT_CONFLICTS if site.kind == INTERSECTION else MB_CONFLICTS
        for a, b in pairs:
            if st.get(a) == GREEN and st.get(b) == GREEN:
                violations += 1
    return violations


def run_baseline_episode(network: CorridorNetwork, controller: str,
                         rates: DemandRates, scale: float, seed: int,
                         episode: EpisodeConfig, trace=None) -> RunMetrics:
    """One warmup + horizon episode under a schedule-driven controller."""
    rng = np.random.default_rng(seed)
    warmup = int(rng.integers(episode.warmup_range[0], episode.warmup_range[1] + 1))
    horizon = episode.horizon_actions * episode.steps_per_action
    schedule = generate_trips(rates, scale, warmup + horizon,
                              int(rng.integers(0, 2 ** 31 - 1)), network)
    sim = SimState(network, schedule.veh_trips, schedule.ped_trips, trace=trace)

    def states_at(t: float):
        if controller == "fixed":
            return fixed_time_states(network, t)
        return _unsignalized_states(network, t)

    for _ in range(warmup):
        sim.step(states_at(sim.time))
    mark = _stat_mark(sim)
    active_ped = sim.n_pedestrians()
    active_veh = sim.n_vehicles()

    # signalized sites only contribute to the switch trace
    signal_ids = [s.id for s in network.signals
                  if controller == "fixed" or s.kind == INTERSECTION]
    n_mb = len(network.midblocks)
    phase_trace = []
    mb_green_sum = 0.0
    violations = 0
    for k in range(horizon):
        t = sim.time
        states = states_at(t)
        violations += audit_states(network, states)
        sim.step(states)
        if k % episode.steps_per_action == 0:
            targets = fixed_time_targets(network, t)
            phase_trace.append(tuple(targets[i] for i in signal_ids))
            if controller == "fixed":
                mb_green_sum += sum(1 for s in network.midblocks if targets[s.id] == 1)
            else:
                mb_green_sum += n_mb  # unsignalized: vehicle flow unless yielding
    end = _stat_mark(sim)
    return RunMetrics(
        controller=controller, scale=scale, seed=seed,
        n_ped=active_ped + (end[3] - mark[3]),
        n_veh=active_veh + (end[2] - mark[2]),
        total_wait_ped_s=end[1] - mark[1],
        total_wait_veh_s=end[0] - mark[0],
        conflicts=end[4] - mark[4],
        switches=count_switches(phase_trace),
        avg_simultaneous_mb_green=mb_green_sum / episode.horizon_actions,
        safety_violations=violations,
    )


def run_rl_episode(network: CorridorNetwork, controller: RlController,
                   rates: DemandRates, scale: float, seed: int,
                   episode: EpisodeConfig, trace=None, metrics_log=None) -> RunMetrics:
    """One episode under the trained policy (stochastic, seeded actions)."""
    env = controller.make_env(network, rates, episode, seed, trace=trace,
                              metrics_log=metrics_log)
    obs = env.reset(demand_scale=scale)
    rng = np.random.default_rng(seed + 1_000_000_007)
    mark = _stat_mark(env.sim)
    active_ped = env.sim.n_pedestrians()
    active_veh = env.sim.n_vehicles()
    signal_ids = [s.id for s in network.signals]
    start_targets = env.bank.targets()
    phase_trace = [tuple(start_targets[i] for i in signal_ids)]
    actions = []
    violations = 0
    conflicts = 0
    done = False
    while not done:
        int_probs, mb_probs, _ = forward(controller.policy, obs)
        action, _ = sample_and_logprob((int_probs, mb_probs), rng)
        obs, _, done, info = env.step(action)
        actions.append(action)
        conflicts += info["conflicts"]
        for states in info["displays"]:
            violations += audit_states(network, states)
        phase_trace.append(tuple(info["targets"][i] for i in signal_ids))
    end = _stat_mark(env.sim)
    return RunMetrics(
        controller="rl", scale=scale, seed=seed,
        n_ped=active_ped + (end[3] - mark[3]),
        n_veh=active_veh + (end[2] - mark[2]),
        total_wait_ped_s=end[1] - mark[1],
        total_wait_veh_s=end[0] - mark[0],
        conflicts=conflicts,
        switches=count_switches(phase_trace),
        avg_simultaneous_mb_green=coordination_metric(actions),
        safety_violations=violations,
    )


def run_benchmark(plan: BenchmarkPlan, network: CorridorNetwork,
                  rates: DemandRates | None = None,
                  episode: EpisodeConfig | None = None,
                  log_fn=None, trace=None, metrics_log=None) -> list[MetricsReport]:
    """Run every (controller, scale, seed) cell of the plan."""
    rates = rates if rates is not None else DemandRates()
    episode = episode if episode is not None else EpisodeConfig()
    rl = RlController(plan.checkpoint) if "rl" in plan.controllers else None
    reports = []
    for controller in plan.controllers:
        for scale in plan.scales:
            runs = []
            for k in range(plan.runs_per_cell):
                seed = run_seed_for(plan.seed, scale, k)
                if controller == "rl":
                    run = run_rl_episode(network, rl, rates, scale, seed,
                                         episode, trace=trace,
                                         metrics_log=metrics_log)
                else:
                    run = run_baseline_episode(network, controller, rates,
                                               scale, seed, episode, trace=trace)
                runs.append(run)
            reports.append(MetricsReport(controller, scale, runs))
            if log_fn is not None:
                mean_w, _ = reports[-1].mean_std("combined_avg_wait_s")
                log_fn(f"{controller} x{scale}: combined wait {mean_w:.2f} s "
                       f"({plan.runs_per_cell} runs)")
    return reports


def write_run_csv(reports: list[MetricsReport], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_CSV_FIELDS)
        for report in reports:
            for run in report.runs:
                writer.writerow([getattr(run, f) for f in RUN_CSV_FIELDS])


AGG_METRICS = ("avg_wait_ped_s", "avg_wait_veh_s", "total_wait_ped_hr",
               "total_wait_veh_hr", "combined_avg_wait_s", "conflicts",
               "switches", "avg_simultaneous_mb_green")


def write_aggregate_csv(reports: list[MetricsReport], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["controller", "scale"]
        for m in AGG_METRICS:
            header += [f"{m}_mean", f"{m}_std"]
        writer.writerow(header)
        for report in reports:
            row = [report.controller, report.scale]
            for m in AGG_METRICS:
                mean, std = report.mean_std(m)
                row += [f"{mean:.9g}", f"{std:.9g}"]
            writer.writerow(row)


def load_run_csv(path: str) -> list[MetricsReport]:
    groups: dict[tuple[str, float], list[RunMetrics]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            run = RunMetrics(
                controller=row["controller"], scale=float(row["scale"]),
                seed=int(row["seed"]), n_ped=int(row["n_ped"]),
                n_veh=int(row["n_veh"]),
                total_wait_ped_s=float(row["total_wait_ped_hr"]) * 3600.0,
                total_wait_veh_s=float(row["total_wait_veh_hr"]) * 3600.0,
                conflicts=int(row["conflicts"]), switches=int(row["switches"]),
                avg_simultaneous_mb_green=float(row["avg_simultaneous_mb_green"]),
                safety_violations=int(row["safety_violations"]))
            groups.setdefault((run.controller, run.scale), []).append(run)
    return [MetricsReport(c, s, runs) for (c, s), runs in sorted(groups.items())]


def compare(reports: list[MetricsReport]):
    """Per scale and metric: RL vs baselines with percentage improvement
    relative to fixed-time control ((base - rl) / base)."""
    by_key = {(r.controller, r.scale): r for r in reports}
    scales_by_controller: dict[str, set] = {}
    for r in reports:
        scales_by_controller.setdefault(r.controller, set()).add(r.scale)
    scale_sets = list(scales_by_controller.values())
    if any(s != scale_sets[0] for s in scale_sets):
        raise MismatchError("reports do not cover the same scales per controller")
    scales = sorted(scale_sets[0])
    rows = []
    for scale in scales:
        for metric in ("avg_wait_ped_s", "avg_wait_veh_s", "combined_avg_wait_s"):
            row = {"scale": scale, "metric": metric}
            rl = by_key.get(("rl", scale))
            fixed = by_key.get(("fixed", scale))
            unsig = by_key.get(("unsignalized", scale))
            for name, rep in (("rl", rl), ("fixed", fixed), ("unsignalized", unsig)):
                row[name] = rep.mean_std(metric)[0] if rep is not None else None
            if rl is not None and fixed is not None and row["fixed"]:
                row["improvement_vs_fixed_pct"] = (
                    100.0 * (row["fixed"] - row["rl"]) / row["fixed"])
            else:
                row["improvement_vs_fixed_pct"] = None
            rows.append(row)
    return rows


def improvement_pct(baseline: float, candidate: float) -> float:
    """Percentage reduction of `candidate` relative to `baseline`."""
    return 100.0 * (baseline - candidate) / baseline


def write_compare_csv(rows, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scale", "metric", "rl", "fixed", "unsignalized",
                         "improvement_vs_fixed_pct"])
        for row in rows:
            writer.writerow([
                row["scale"], row["metric"],
                *(f"{row[k]:.6g}" if row[k] is not None else ""
                  for k in ("rl", "fixed", "unsignalized", "improvement_vs_fixed_pct"))])


def format_compare_text(rows) -> str:
    lines = ["scale  metric                    rl      fixed   unsig   vs-fixed"]
    for row in rows:
        def fmt(v, w=7):
            return (f"{v:{w}.2f}" if v is not None else " " * w)
        lines.append(f"{row['scale']:<6} {row['metric']:<24}"
                     f"{fmt(row['rl'])} {fmt(row['fixed'])} {fmt(row['unsignalized'])}"
                     f" {fmt(row['improvement_vs_fixed_pct'], 6)}%")
    return "\n".join(lines)


def spearman_rho(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v), dtype=float)
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i:j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return r
    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    return float((rx * ry).sum() / denom) if denom > 0 else 0.0
