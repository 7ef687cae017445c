"""Training orchestration: actor environments, the update loop, budget
accounting, CSV logging, and checkpointing.

Sequential mode steps every actor in-process and is bit-reproducible for a
given (seed, config). Parallel mode fans actors out to worker processes;
per-actor rollouts are identical to sequential mode because action sampling
uses per-actor generators seeded the same way in both modes.
"""

from __future__ import annotations

import csv
import multiprocessing as mp
from dataclasses import dataclass

import numpy as np
import torch

from .demand import DemandRates
from .env import EpisodeConfig, TrafficEnv, WelfordStats
from .network import NetworkConfig, build_corridor
from .ppo import (ActorCritic, PpoConfig, RolloutBatch, collect_rollouts,
                  ppo_update, rollout_one_actor, save_checkpoint)

_WARMUP_MAX = 250


def env_seed_for(seed: int, actor: int) -> int:
    return (seed * 1_000_003 + 7_919 * actor + 1) % (2 ** 31 - 1)


def rng_seed_for(seed: int, actor: int) -> int:
    return (seed * 999_983 + 104_729 * actor + 2) % (2 ** 31 - 1)


def make_env(network_cfg: NetworkConfig, rates: DemandRates,
             episode: EpisodeConfig, seed: int) -> TrafficEnv:
    return TrafficEnv(build_corridor(network_cfg), rates=rates, seed=seed,
                      episode=episode)


@dataclass
class TrainResult:
    checkpoint_path: str
    csv_path: str | None
    updates: int
    sim_steps: int
    action_steps: int


# -- parallel workers -----------------------------------------------------------

def _worker_main(conn, network_cfg, rates, episode, env_seed, rng_seed, arch):
    torch.set_num_threads(1)
    env = make_env(network_cfg, rates, episode, env_seed)
    rng = np.random.default_rng(rng_seed)
    policy = ActorCritic(*arch)
    obs = None
    while True:
        msg = conn.recv()
        if msg[0] == "collect":
            _, state, steps, gamma, lam = msg
            policy.load_state_dict({k: torch.from_numpy(v) for k, v in state.items()})
            part, obs, aux = rollout_one_actor(policy, env, steps, rng, obs, gamma, lam)
            aux["sim_steps"] = env.total_sim_steps
            conn.send((part, aux))
        elif msg[0] == "stats":
            conn.send((env.obs_stats.state(), env.reward_norm.state(),
                       env.total_sim_steps))
        else:
            conn.close()
            return


class ParallelActors:
    """Persistent worker processes, one environment each."""

    def __init__(self, network_cfg, rates, episode, seed: int, n_actors: int, arch):
        ctx = mp.get_context("spawn")
        self.conns = []
        self.procs = []
        for i in range(n_actors):
            parent, child = ctx.Pipe()
            proc = ctx.Process(
                target=_worker_main,
                args=(child, network_cfg, rates, episode,
                      env_seed_for(seed, i), rng_seed_for(seed, i), arch),
                daemon=True)
            proc.start()
            child.close()
            self.conns.append(parent)
            self.procs.append(proc)

    def collect(self, policy: ActorCritic, steps: int, gamma: float, lam: float):
        state = {k: v.detach().numpy().copy() for k, v in policy.state_dict().items()}
        for conn in self.conns:
            conn.send(("collect", state, steps, gamma, lam))
        parts, auxes = [], []
        for conn in self.conns:
            part, aux = conn.recv()
            parts.append(part)
            auxes.append(aux)
        batch = RolloutBatch(
            observations=np.concatenate([p[0] for p in parts]),
            actions=np.concatenate([p[1] for p in parts]),
            logps=np.concatenate([p[2] for p in parts]),
            rewards=np.concatenate([p[3] for p in parts]),
            values=np.concatenate([p[4] for p in parts]),
            dones=np.concatenate([p[5] for p in parts]),
            advantages=np.concatenate([p[6] for p in parts]),
            returns=np.concatenate([p[7] for p in parts]),
            aux={
                "raw_reward_mean": float(np.mean([a["raw_reward_mean"] for a in auxes])),
                "coordination_mean": float(np.mean([a["coordination_mean"] for a in auxes])),
                "sim_steps": int(sum(a["sim_steps"] for a in auxes)),
            })
        return batch

    def gather_stats(self):
        for conn in self.conns:
            conn.send(("stats",))
        return [conn.recv() for conn in self.conns]

    def close(self):
        for conn in self.conns:
            try:
                conn.send(("close",))
            except (BrokenPipeError, OSError):
                pass
        for proc in self.procs:
            proc.join(timeout=5)


# -- training loop ----------------------------------------------------------------

def train(network_cfg: NetworkConfig, ppo_cfg: PpoConfig,
          episode: EpisodeConfig | None = None, rates: DemandRates | None = None,
          seed: int = 0, checkpoint_path: str = "policy.ckpt",
          csv_path: str | None = None, mode: str = "sequential",
          log_fn=None) -> TrainResult:
    """Run PPO training within the simulation-step budget and write a
    checkpoint (weights + normalizer statistics merged across actors)."""
    episode = episode if episode is not None else EpisodeConfig()
    rates = rates if rates is not None else DemandRates()
    torch.manual_seed(seed)
    network = build_corridor(network_cfg)
    probe = TrafficEnv(network, rates=rates, seed=0, episode=episode)
    arch = (probe.obs_dim, probe.n_mb, ppo_cfg.hidden, ppo_cfg.activation)
    policy = ActorCritic(*arch)
    optimizer = torch.optim.Adam(policy.parameters(), lr=ppo_cfg.lr)
    mb_gen = torch.Generator().manual_seed(seed + 13)

    steps_per_actor = max(1, ppo_cfg.update_every // ppo_cfg.n_actors)
    round_bound = (ppo_cfg.update_every * episode.steps_per_action
                   + (ppo_cfg.update_every // episode.horizon_actions
                      + ppo_cfg.n_actors + 1) * _WARMUP_MAX)

    workers = None
    envs = rngs = obs_list = None
    if mode == "parallel":
        workers = ParallelActors(network_cfg, rates, episode, seed, ppo_cfg.n_actors, arch)
    elif mode == "sequential":
        envs = [make_env(network_cfg, rates, episode, env_seed_for(seed, i))
                for i in range(ppo_cfg.n_actors)]
        rngs = [np.random.default_rng(rng_seed_for(seed, i))
                for i in range(ppo_cfg.n_actors)]
        obs_list = None
    else:
        raise ValueError(f"unknown mode {mode!r}")

    writer = None
    csv_file = None
    if csv_path is not None:
        csv_file = open(csv_path, "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(["update", "sim_steps", "action_steps", "raw_reward_mean",
                         "policy_loss", "value_loss", "entropy", "clip_frac",
                         "approx_kl", "coordination_mean"])

    updates = 0
    action_steps = 0
    sim_steps = 0
    try:
        while updates == 0 or sim_steps + round_bound <= ppo_cfg.total_steps:
            if mode == "parallel":
                batch = workers.collect(policy, steps_per_actor,
                                        ppo_cfg.gamma, ppo_cfg.lam)
                sim_steps = batch.aux["sim_steps"]
            else:
                batch, obs_list = collect_rollouts(
                    policy, envs, steps_per_actor, rngs, obs_list,
                    ppo_cfg.gamma, ppo_cfg.lam)
                sim_steps = sum(e.total_sim_steps for e in envs)
            stats = ppo_update(policy, optimizer, batch, ppo_cfg, mb_gen)
            updates += 1
            action_steps += len(batch)
            if writer is not None:
                writer.writerow([
                    updates, sim_steps, action_steps,
                    f"{batch.aux['raw_reward_mean']:.6f}",
                    f"{stats['policy_loss']:.6f}", f"{stats['value_loss']:.6f}",
                    f"{stats['entropy']:.6f}", f"{stats['clip_frac']:.6f}",
                    f"{stats['approx_kl']:.6f}",
                    f"{batch.aux['coordination_mean']:.6f}"])
                csv_file.flush()
            if log_fn is not None:
                log_fn(f"update {updates}: sim_steps={sim_steps} "
                       f"raw_reward={batch.aux['raw_reward_mean']:.1f} "
                       f"entropy={stats['entropy']:.3f} "
                       f"clip={stats['clip_frac']:.3f}")

        obs_stats = WelfordStats((probe.obs_dim,))
        reward_stats = WelfordStats(())
        ret_gamma, ret_last = ppo_cfg.gamma, 0.0
        if mode == "parallel":
            for obs_state, rew_state, _ in workers.gather_stats():
                part = WelfordStats((probe.obs_dim,))
                part.load_state(obs_state)
                obs_stats.merge(part)
                rpart = WelfordStats(())
                rpart.load_state(rew_state["stats"])
                reward_stats.merge(rpart)
                ret_gamma = rew_state["gamma"]
        else:
            for env in envs:
                obs_stats.merge(env.obs_stats)
                reward_stats.merge(env.reward_norm.stats)
                ret_gamma = env.reward_norm.gamma
        meta = {"seed": seed, "updates": updates, "sim_steps": sim_steps,
                "action_steps": action_steps, "mode": mode,
                "network": {"mini": network_cfg.mini, "n_signals": network.n_signals}}
        save_checkpoint(
            checkpoint_path, policy, meta,
            obs_stats_state=obs_stats.state(),
            reward_norm_state={"gamma": ret_gamma, "ret": ret_last,
                               "stats": reward_stats.state()})
    finally:
        if workers is not None:
            workers.close()
        if csv_file is not None:
            csv_file.close()
    return TrainResult(checkpoint_path, csv_path, updates, sim_steps, action_steps)
