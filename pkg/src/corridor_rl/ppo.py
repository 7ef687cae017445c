"""PPO with GAE for the mixed action space: one Categorical intersection
choice plus independent Bernoulli mid-block choices.

Separate actor/critic MLPs; clipped-surrogate updates with advantage
standardization; rollout collection across parallel actors with a
bit-reproducible sequential mode. Action sampling uses per-actor numpy
generators so sequential and parallel collection produce identical
per-actor trajectories.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, LengthError, NonFiniteError, ShapeError
from .signals import ActionVector

_ACTIVATIONS = {"tanh": nn.Tanh, "relu": nn.ReLU}


@dataclass
class PpoConfig:
    lr: float = 1e-4
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    entropy_coef: float = 0.01
    update_every: int = 1024        # aggregate action steps between updates
    k_epochs: int = 4
    n_minibatches: int = 4
    n_actors: int = 24
    total_steps: int = 6_000_000    # simulation timesteps budget (warmup included)
    hidden: tuple[int, ...] = (512, 256, 128, 64, 32)
    activation: str = "tanh"


def mini_ppo_config(total_steps: int = 420_000) -> PpoConfig:
    """Desk-scale training defaults: fewer actors, faster updates."""
    return PpoConfig(lr=3e-4, update_every=512, n_actors=4, total_steps=total_steps)


def _mlp(in_dim: int, hidden: tuple[int, ...], out_dim: int, activation: str,
         out_gain: float) -> nn.Sequential:
    act = _ACTIVATIONS[activation]
    layers: list[nn.Module] = []
    prev = in_dim
    for h in hidden:
        lin = nn.Linear(prev, h)
        nn.init.orthogonal_(lin.weight, gain=float(np.sqrt(2.0)))
        nn.init.zeros_(lin.bias)
        layers += [lin, act()]
        prev = h
    head = nn.Linear(prev, out_dim)
    nn.init.orthogonal_(head.weight, gain=out_gain)
    nn.init.zeros_(head.bias)
    layers.append(head)
    return nn.Sequential(*layers)


class ActorCritic(nn.Module):
    """Separate actor and critic MLPs over the flattened observation."""

    def __init__(self, obs_dim: int, n_mb: int,
                 hidden: tuple[int, ...] = (512, 256, 128, 64, 32),
                 activation: str = "tanh"):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_mb = n_mb
        self.hidden = tuple(hidden)
        self.activation = activation
        self.actor = _mlp(obs_dim, self.hidden, 4 + n_mb, activation, 0.01)
        self.critic = _mlp(obs_dim, self.hidden, 1, activation, 1.0)

    def forward(self, obs: torch.Tensor):
        logits = self.actor(obs)
        return logits[..., :4], logits[..., 4:], self.critic(obs).squeeze(-1)


def forward(policy: ActorCritic, obs) -> tuple[np.ndarray, np.ndarray, float]:
    """Evaluate the policy on one flattened observation.

    Returns (intersection probabilities over the 4 choices, per-mid-block
    vehicle-green probabilities, value estimate).
    """
    arr = np.asarray(obs, dtype=np.float32).reshape(-1)
    if arr.shape[0] != policy.obs_dim:
        raise ShapeError(f"expected obs of length {policy.obs_dim}, got {arr.shape[0]}")
    with torch.no_grad():
        int_logits, mb_logits, value = policy(torch.from_numpy(arr).unsqueeze(0))
        int_probs = torch.softmax(int_logits, dim=-1)[0].double().numpy()
        mb_probs = torch.sigmoid(mb_logits)[0].double().numpy()
    return int_probs, mb_probs, float(value.item())


def sample_and_logprob(dist_params, rng: np.random.Generator) -> tuple[ActionVector, float]:
    """Draw a joint action and its log-probability.

    `dist_params` is (int_probs, mb_probs); the joint log-probability is the
    Categorical term plus the sum of independent Bernoulli terms.
    """
    int_probs, mb_probs = dist_params
    int_probs = np.asarray(int_probs, dtype=np.float64)
    mb_probs = np.asarray(mb_probs, dtype=np.float64)
    choice = int(rng.choice(4, p=int_probs / int_probs.sum()))
    bits = rng.random(mb_probs.shape[0]) < mb_probs
    logp = np.log(max(int_probs[choice], 1e-12))
    logp += float(np.sum(np.where(bits, np.log(np.maximum(mb_probs, 1e-12)),
                                  np.log(np.maximum(1.0 - mb_probs, 1e-12)))))
    return ActionVector(choice + 1, tuple(bool(b) for b in bits)), float(logp)


def gae(rewards, values, bootstrap_value: float, dones, gamma: float, lam: float):
    """Generalized advantage estimation over one trajectory segment.

    dones[t] marks a terminal transition at step t (no bootstrapping across
    it); returns (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    n = len(rewards)
    if len(values) != n or len(dones) != n:
        raise LengthError(
            f"misaligned inputs: {len(rewards)} rewards, {len(values)} values, "
            f"{len(dones)} dones")
    adv = np.zeros(n, dtype=np.float64)
    next_value = float(bootstrap_value)
    running = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


@dataclass
class RolloutBatch:
    observations: np.ndarray      # [B, obs_dim] float32
    actions: np.ndarray           # [B, 1 + n_mb] int64 (choice index, mb bits)
    logps: np.ndarray             # [B] float64
    rewards: np.ndarray           # [B] float64 (normalized rewards as seen in training)
    values: np.ndarray            # [B] float64
    dones: np.ndarray             # [B] float64
    advantages: np.ndarray        # [B] float64
    returns: np.ndarray           # [B] float64
    aux: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.logps)


def _encode_action(action: ActionVector) -> np.ndarray:
    return np.array([action.intersection - 1] + [int(b) for b in action.midblock],
                    dtype=np.int64)


def rollout_one_actor(policy: ActorCritic, env, steps: int,
                      rng: np.random.Generator, obs: np.ndarray | None,
                      gamma: float, lam: float):
    """Collect `steps` transitions from one environment, auto-resetting
    finished episodes, then compute GAE for the segment."""
    if obs is None:
        obs = env.reset()
    obs_buf = np.empty((steps, policy.obs_dim), dtype=np.float32)
    act_buf = np.empty((steps, 1 + policy.n_mb), dtype=np.int64)
    logp_buf = np.empty(steps, dtype=np.float64)
    rew_buf = np.empty(steps, dtype=np.float64)
    val_buf = np.empty(steps, dtype=np.float64)
    done_buf = np.zeros(steps, dtype=np.float64)
    raw_rewards = []
    coord = []
    for t in range(steps):
        int_probs, mb_probs, value = forward(policy, obs)
        action, logp = sample_and_logprob((int_probs, mb_probs), rng)
        obs_buf[t] = np.asarray(obs, dtype=np.float32).reshape(-1)
        act_buf[t] = _encode_action(action)
        logp_buf[t] = logp
        val_buf[t] = value
        obs, reward, done, info = env.step(action)
        rew_buf[t] = reward
        done_buf[t] = 1.0 if done else 0.0
        raw_rewards.append(info.get("raw_reward", reward))
        coord.append(sum(action.midblock))
        if done:
            obs = env.reset()
    if done_buf[-1]:
        bootstrap = 0.0
    else:
        _, _, bootstrap = forward(policy, obs)
    adv, ret = gae(rew_buf, val_buf, bootstrap, done_buf, gamma, lam)
    aux = {"raw_reward_mean": float(np.mean(raw_rewards)),
           "coordination_mean": float(np.mean(coord))}
    return (obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf, adv, ret), obs, aux


def collect_rollouts(policy: ActorCritic, envs: list, steps_per_actor: int,
                     rngs: list[np.random.Generator],
                     obs_list: list | None = None,
                     gamma: float = 0.99, lam: float = 0.95):
    """Sequential rollout collection across actors (actor-contiguous batch)."""
    if obs_list is None:
        obs_list = [None] * len(envs)
    parts = []
    auxes = []
    new_obs = []
    for env, rng, obs in zip(envs, rngs, obs_list):
        part, obs_out, aux = rollout_one_actor(
            policy, env, steps_per_actor, rng, obs, gamma, lam)
        parts.append(part)
        auxes.append(aux)
        new_obs.append(obs_out)
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
        },
    )
    return batch, new_obs


def _joint_logp_entropy(policy: ActorCritic, obs: torch.Tensor, actions: torch.Tensor):
    int_logits, mb_logits, values = policy(obs)
    cat = torch.distributions.Categorical(logits=int_logits)
    bern = torch.distributions.Bernoulli(logits=mb_logits)
    logp = cat.log_prob(actions[:, 0]) \
        + bern.log_prob(actions[:, 1:].to(mb_logits.dtype)).sum(-1)
    entropy = cat.entropy() + bern.entropy().sum(-1)
    return logp, entropy, values


def ppo_loss(policy: ActorCritic, obs: torch.Tensor, actions: torch.Tensor,
             old_logps: torch.Tensor, advantages: torch.Tensor,
             returns: torch.Tensor, cfg: PpoConfig):
    """Clipped-surrogate loss plus value and entropy terms; also returns stats."""
    logp, entropy, values = _joint_logp_entropy(policy, obs, actions)
    ratio = torch.exp(logp - old_logps)
    unclipped = ratio * advantages
    clipped = torch.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * advantages
    policy_loss = -torch.min(unclipped, clipped).mean()
    value_loss = ((values - returns) ** 2).mean()
    ent = entropy.mean()
    loss = policy_loss + cfg.vf_coef * value_loss - cfg.entropy_coef * ent
    with torch.no_grad():
        clip_frac = ((ratio - 1.0).abs() > cfg.clip_eps).float().mean()
        approx_kl = (old_logps - logp).mean()
    stats = {"policy_loss": float(policy_loss.item()),
             "value_loss": float(value_loss.item()),
             "entropy": float(ent.item()),
             "clip_frac": float(clip_frac.item()),
             "approx_kl": float(approx_kl.item())}
    return loss, stats


def ppo_update(policy: ActorCritic, optimizer: torch.optim.Optimizer,
               batch: RolloutBatch, cfg: PpoConfig,
               generator: torch.Generator | None = None) -> dict:
    """k_epochs of minibatch updates on one batch.

    Advantages are standardized over the whole batch first. If any loss or
    gradient goes non-finite the update is aborted, the pre-update
    parameters are restored, and NonFiniteError is raised.
    """
    snapshot = {k: v.detach().clone() for k, v in policy.state_dict().items()}
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    obs_t = torch.from_numpy(batch.observations)
    act_t = torch.from_numpy(batch.actions)
    logp_t = torch.from_numpy(batch.logps.astype(np.float32))
    adv_t = torch.from_numpy(adv.astype(np.float32))
    ret_t = torch.from_numpy(batch.returns.astype(np.float32))
    n = len(batch)
    mb_size = max(1, n // cfg.n_minibatches)
    agg: dict[str, float] = {}
    count = 0
    try:
        for _ in range(cfg.k_epochs):
            if generator is not None:
                perm = torch.randperm(n, generator=generator)
            else:
                perm = torch.randperm(n)
            for start in range(0, n, mb_size):
                idx = perm[start:start + mb_size]
                loss, stats = ppo_loss(policy, obs_t[idx], act_t[idx], logp_t[idx],
                                       adv_t[idx], ret_t[idx], cfg)
                if not torch.isfinite(loss):
                    raise NonFiniteError("non-finite PPO loss")
                optimizer.zero_grad()
                loss.backward()
                for p in policy.parameters():
                    if p.grad is not None and not torch.isfinite(p.grad).all():
                        raise NonFiniteError("non-finite gradient")
                optimizer.step()
                for k, v in stats.items():
                    agg[k] = agg.get(k, 0.0) + v
                count += 1
    except NonFiniteError:
        policy.load_state_dict(snapshot)
        raise
    return {k: v / count for k, v in agg.items()}


# -- checkpoint format ---------------------------------------------------------
#
# magic "CRLCKPT1" | uint64 header length | JSON header | raw tensor bytes.
# The header lists tensors in order (name, dtype, shape) plus config and
# normalizer state; tensor bytes are little-endian and concatenated in
# header order. Fully deterministic for identical contents.

_MAGIC = b"CRLCKPT1"


def save_checkpoint(path: str, policy: ActorCritic, meta: dict,
                    obs_stats_state: dict | None = None,
                    reward_norm_state: dict | None = None) -> None:
    tensors: list[tuple[str, np.ndarray]] = []
    for name, tensor in policy.state_dict().items():
        tensors.append((f"policy/{name}", tensor.detach().numpy().astype("<f4")))
    if obs_stats_state is not None:
        tensors.append(("obs_stats/mean", np.asarray(obs_stats_state["mean"], dtype="<f8")))
        tensors.append(("obs_stats/m2", np.asarray(obs_stats_state["m2"], dtype="<f8")))
    header = {
        "version": 1,
        "arch": {"obs_dim": policy.obs_dim, "n_mb": policy.n_mb,
                 "hidden": list(policy.hidden), "activation": policy.activation},
        "meta": meta,
        "obs_stats_count": int(obs_stats_state["count"]) if obs_stats_state else None,
        "reward_norm": None,
        "tensors": [{"name": n, "dtype": str(a.dtype), "shape": list(a.shape)}
                    for n, a in tensors],
    }
    if reward_norm_state is not None:
        header["reward_norm"] = {
            "gamma": reward_norm_state["gamma"],
            "ret": reward_norm_state["ret"],
            "count": int(reward_norm_state["stats"]["count"]),
            "mean": float(reward_norm_state["stats"]["mean"]),
            "m2": float(reward_norm_state["stats"]["m2"]),
        }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(arr.tobytes())


def load_checkpoint(path: str):
    """Returns (policy, header dict with normalizer state attached)."""
    try:
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != _MAGIC:
                raise CheckpointError(f"{path}: bad magic {magic!r}")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode())
            arrays = {}
            for entry in header["tensors"]:
                n_items = int(np.prod(entry["shape"])) if entry["shape"] else 1
                dtype = np.dtype(entry["dtype"])
                buf = fh.read(n_items * dtype.itemsize)
                if len(buf) != n_items * dtype.itemsize:
                    raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
                arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(entry["shape"])
    except (OSError, json.JSONDecodeError, struct.error) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    arch = header["arch"]
    policy = ActorCritic(arch["obs_dim"], arch["n_mb"],
                         tuple(arch["hidden"]), arch["activation"])
    state = {}
    for name, arr in arrays.items():
        if name.startswith("policy/"):
            state[name[len("policy/"):]] = torch.from_numpy(arr.astype(np.float32).copy())
    policy.load_state_dict(state)
    header["obs_stats"] = None
    if header.get("obs_stats_count") is not None:
        header["obs_stats"] = {
            "count": header["obs_stats_count"],
            "mean": arrays["obs_stats/mean"].astype(np.float64).copy(),
            "m2": arrays["obs_stats/m2"].astype(np.float64).copy(),
        }
    return policy, header
