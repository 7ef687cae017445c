import math

import numpy as np
import pytest
import torch

from corridor_rl.errors import (CheckpointError, LengthError, NonFiniteError,
                                ShapeError)
from corridor_rl.ppo import (ActorCritic, PpoConfig, RolloutBatch,
                             collect_rollouts, forward, gae, load_checkpoint,
                             ppo_loss, ppo_update, sample_and_logprob,
                             save_checkpoint)
from corridor_rl.signals import ActionVector
from corridor_rl.train import ParallelActors, env_seed_for, make_env, rng_seed_for
from corridor_rl.network import mini_config
from corridor_rl.demand import DemandRates
from corridor_rl.env import EpisodeConfig


class BanditEnv:
    """Two-step toy episodes; reward 1 iff the intersection choice is 4."""

    def __init__(self, obs_dim=6, n_mb=2):
        self.obs_dim = obs_dim
        self.n_mb = n_mb
        self.t = 0

    def _obs(self):
        return np.full(self.obs_dim, 0.5, dtype=np.float64)

    def reset(self):
        self.t = 0
        return self._obs()

    def step(self, action: ActionVector):
        self.t += 1
        r = 1.0 if action.intersection == 4 else 0.0
        return self._obs(), r, self.t >= 2, {"raw_reward": r}


def scalar_forward_reference(policy: ActorCritic, obs):
    """Plain-loop re-evaluation of the MLP forward pass."""
    def run(seq, x):
        h = list(x)
        for layer in seq:
            if isinstance(layer, torch.nn.Linear):
                w = layer.weight.detach().numpy()
                b = layer.bias.detach().numpy()
                h = [sum(w[i][j] * h[j] for j in range(len(h))) + b[i]
                     for i in range(w.shape[0])]
            else:
                h = [math.tanh(v) for v in h]
        return h
    logits = run(policy.actor, list(obs))
    value = run(policy.critic, list(obs))[0]
    int_logits = logits[:4]
    m = max(int_logits)
    exps = [math.exp(v - m) for v in int_logits]
    z = sum(exps)
    int_probs = [e / z for e in exps]
    mb_probs = [1.0 / (1.0 + math.exp(-v)) for v in logits[4:]]
    return int_probs, mb_probs, value


def test_forward_zero_weights_uniform():
    policy = ActorCritic(12, 3, hidden=(8, 4))
    with torch.no_grad():
        for p in policy.parameters():
            p.zero_()
    int_probs, mb_probs, value = forward(policy, np.zeros(12))
    np.testing.assert_allclose(int_probs, [0.25] * 4, atol=1e-7)
    np.testing.assert_allclose(mb_probs, [0.5] * 3, atol=1e-7)
    assert value == 0.0


def test_forward_simplex_and_shape_error():
    policy = ActorCritic(10, 2, hidden=(8, 4))
    rng = np.random.default_rng(0)
    for _ in range(20):
        int_probs, mb_probs, _ = forward(policy, rng.normal(size=10))
        assert abs(int_probs.sum() - 1.0) < 1e-6
        assert ((mb_probs > 0) & (mb_probs < 1)).all()
    with pytest.raises(ShapeError):
        forward(policy, np.zeros(11))


def test_forward_matches_scalar_reference():
    policy = ActorCritic(6, 2, hidden=(8, 4))
    rng = np.random.default_rng(1)
    for _ in range(10):
        obs = rng.normal(size=6)
        got = forward(policy, obs)
        want = scalar_forward_reference(policy, obs)
        np.testing.assert_allclose(got[0], want[0], atol=1e-6)
        np.testing.assert_allclose(got[1], want[1], atol=1e-6)
        assert got[2] == pytest.approx(want[2], abs=1e-5)


def test_sample_logprob_deterministic_dist():
    rng = np.random.default_rng(0)
    action, logp = sample_and_logprob(
        (np.array([0.0, 0.0, 1.0, 0.0]), np.array([1.0, 0.0])), rng)
    assert action.intersection == 3
    assert action.midblock == (True, False)
    assert logp == pytest.approx(0.0, abs=1e-9)


def test_sample_logprob_uniform_value():
    rng = np.random.default_rng(0)
    _, logp = sample_and_logprob(
        (np.full(4, 0.25), np.full(7, 0.5)), rng)
    assert logp == pytest.approx(math.log(0.25) + 7 * math.log(0.5), abs=1e-9)


def test_sample_frequencies_match_probabilities():
    rng = np.random.default_rng(7)
    int_probs = np.array([0.1, 0.2, 0.3, 0.4])
    mb_probs = np.array([0.3, 0.7])
    n = 100_000
    int_counts = np.zeros(4)
    mb_counts = np.zeros(2)
    for _ in range(n):
        action, _ = sample_and_logprob((int_probs, mb_probs), rng)
        int_counts[action.intersection - 1] += 1
        mb_counts += np.asarray(action.midblock, dtype=float)
    for p, c in zip(int_probs, int_counts):
        assert abs(c / n - p) < 3 * math.sqrt(p * (1 - p) / n)
    for p, c in zip(mb_probs, mb_counts):
        assert abs(c / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def gae_brute_force(rewards, values, bootstrap, dones, gamma, lam):
    n = len(rewards)
    vals = list(values) + [bootstrap]
    adv = np.zeros(n)
    for t in range(n):
        acc = 0.0
        w = 1.0
        for k in range(t, n):
            delta = rewards[k] + gamma * vals[k + 1] * (1 - dones[k]) - vals[k]
            acc += w * delta
            if dones[k]:
                break
            w *= gamma * lam
        adv[t] = acc
    return adv


def test_gae_hand_example():
    adv, ret = gae([1.0, 1.0], [0.5, 0.5], 0.0, [0, 0], 0.99, 0.95)
    np.testing.assert_allclose(adv, [1.46525, 0.5], atol=1e-12)
    np.testing.assert_allclose(ret, adv + 0.5, atol=1e-12)


def test_gae_lambda_limits():
    rng = np.random.default_rng(3)
    r = rng.normal(size=8)
    v = rng.normal(size=8)
    dones = np.zeros(8)
    # lambda = 0: one-step TD residual
    adv, _ = gae(r, v, 0.3, dones, 0.9, 0.0)
    vals = np.append(v, 0.3)
    np.testing.assert_allclose(adv, r + 0.9 * vals[1:] - v, atol=1e-12)
    # lambda = 1, gamma = 1, zero values: suffix sums
    adv, _ = gae(r, np.zeros(8), 0.0, dones, 1.0, 1.0)
    np.testing.assert_allclose(adv, np.cumsum(r[::-1])[::-1], atol=1e-12)


def test_gae_matches_brute_force_with_dones():
    rng = np.random.default_rng(4)
    for _ in range(50):
        n = int(rng.integers(1, 17))
        r = rng.normal(size=n)
        v = rng.normal(size=n)
        dones = (rng.random(n) < 0.25).astype(float)
        boot = float(rng.normal())
        gamma = float(rng.uniform(0.5, 0.999))
        lam = float(rng.uniform(0.0, 1.0))
        adv, ret = gae(r, v, boot, dones, gamma, lam)
        want = gae_brute_force(r, v, boot, dones, gamma, lam)
        np.testing.assert_allclose(adv, want, atol=1e-9)
        np.testing.assert_allclose(ret, want + v, atol=1e-9)


def test_gae_length_error():
    with pytest.raises(LengthError):
        gae([1.0], [1.0, 2.0], 0.0, [0], 0.9, 0.9)


def _tiny_batch(policy, n=24, seed=0, jitter=0.05):
    rng = np.random.default_rng(seed)
    dtype = next(policy.parameters()).dtype
    np_dtype = np.float64 if dtype == torch.float64 else np.float32
    obs = rng.normal(size=(n, policy.obs_dim)).astype(np_dtype)
    actions = np.column_stack([
        rng.integers(0, 4, size=n),
        *(rng.integers(0, 2, size=n) for _ in range(policy.n_mb))]).astype(np.int64)
    with torch.no_grad():
        int_logits, mb_logits, values = policy(torch.from_numpy(obs))
        cat = torch.distributions.Categorical(logits=int_logits)
        bern = torch.distributions.Bernoulli(logits=mb_logits)
        logp = (cat.log_prob(torch.from_numpy(actions[:, 0]))
                + bern.log_prob(torch.from_numpy(actions[:, 1:]).float()).sum(-1))
    old_logps = logp.double().numpy() + rng.uniform(-jitter, jitter, size=n)
    adv = rng.normal(size=n)
    rewards = rng.normal(size=n)
    dones = np.zeros(n)
    returns = values.double().numpy() + rng.normal(size=n)
    return RolloutBatch(obs, actions, old_logps, rewards,
                        values.double().numpy(), dones, adv, returns)


def test_on_policy_identity():
    """With old logps equal to current ones, every ratio is 1: zero clip
    fraction and policy loss equal to -mean(standardized advantage) = 0."""
    policy = ActorCritic(6, 2, hidden=(8, 4))
    batch = _tiny_batch(policy, jitter=0.0)
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    loss, stats = ppo_loss(
        policy, torch.from_numpy(batch.observations),
        torch.from_numpy(batch.actions),
        torch.from_numpy(batch.logps.astype(np.float32)),
        torch.from_numpy(adv.astype(np.float32)),
        torch.from_numpy(batch.returns.astype(np.float32)),
        PpoConfig())
    assert stats["clip_frac"] == 0.0
    assert stats["policy_loss"] == pytest.approx(0.0, abs=1e-6)
    assert stats["approx_kl"] == pytest.approx(0.0, abs=1e-6)


def test_value_loss_zero_for_perfect_critic():
    policy = ActorCritic(6, 2, hidden=(8, 4))
    batch = _tiny_batch(policy)
    with torch.no_grad():
        _, _, values = policy(torch.from_numpy(batch.observations))
    batch.returns = values.double().numpy()
    loss, stats = ppo_loss(
        policy, torch.from_numpy(batch.observations),
        torch.from_numpy(batch.actions),
        torch.from_numpy(batch.logps.astype(np.float32)),
        torch.from_numpy(batch.advantages.astype(np.float32)),
        torch.from_numpy(batch.returns.astype(np.float32)),
        PpoConfig())
    assert stats["value_loss"] == pytest.approx(0.0, abs=1e-9)


def test_gradients_match_finite_differences():
    """Central finite differences of the full PPO loss on a tiny network."""
    torch.manual_seed(0)
    policy = ActorCritic(6, 2, hidden=(8, 4)).double()
    batch = _tiny_batch(policy, n=16, seed=5)
    cfg = PpoConfig()
    obs = torch.from_numpy(batch.observations).double()
    act = torch.from_numpy(batch.actions)
    old = torch.from_numpy(batch.logps)
    adv = torch.from_numpy(batch.advantages)
    ret = torch.from_numpy(batch.returns)

    def loss_value():
        loss, _ = ppo_loss(policy, obs, act, old, adv, ret, cfg)
        return loss

    loss = loss_value()
    policy.zero_grad()
    loss.backward()
    h = 1e-6
    max_rel = 0.0
    for param in policy.parameters():
        grad = param.grad.detach().clone()
        flat = param.data.view(-1)
        gflat = grad.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = loss_value().item()
            flat[i] = orig - h
            down = loss_value().item()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(gflat[i].item()), 1e-8)
            max_rel = max(max_rel, abs(fd - gflat[i].item()) / denom)
    assert max_rel < 1e-4


def test_ppo_update_nonfinite_aborts_and_restores():
    policy = ActorCritic(6, 2, hidden=(8, 4))
    before = {k: v.clone() for k, v in policy.state_dict().items()}
    batch = _tiny_batch(policy)
    batch.advantages = np.full_like(batch.advantages, np.nan)
    opt = torch.optim.Adam(policy.parameters(), lr=1e-3)
    with pytest.raises(NonFiniteError):
        ppo_update(policy, opt, batch, PpoConfig(), torch.Generator().manual_seed(0))
    after = policy.state_dict()
    for k in before:
        assert torch.equal(before[k], after[k])


def test_collect_rollouts_shapes_and_determinism():
    policy = ActorCritic(6, 2, hidden=(8, 4))

    def run():
        envs = [BanditEnv(), BanditEnv()]
        rngs = [np.random.default_rng(1), np.random.default_rng(2)]
        batch, _ = collect_rollouts(policy, envs, 3, rngs)
        return batch

    a, b = run(), run()
    assert len(a) == 6  # 2 actors x 3 steps, actor-contiguous
    np.testing.assert_array_equal(a.actions, b.actions)
    np.testing.assert_array_equal(a.observations, b.observations)
    np.testing.assert_allclose(a.advantages, b.advantages, atol=0)


def test_bandit_policy_learns_choice_four():
    torch.manual_seed(3)
    policy = ActorCritic(6, 2, hidden=(32, 32))
    cfg = PpoConfig(lr=3e-3, update_every=64, n_actors=1, k_epochs=4,
                    n_minibatches=4, entropy_coef=0.0, hidden=(32, 32))
    env = BanditEnv()
    rngs = [np.random.default_rng(11)]
    opt = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(4)
    obs_list = None
    p4 = 0.0
    for update in range(200):
        batch, obs_list = collect_rollouts(policy, [env], 64, rngs,
                                           obs_list, cfg.gamma, cfg.lam)
        ppo_update(policy, opt, batch, cfg, gen)
        int_probs, _, _ = forward(policy, env._obs())
        p4 = int_probs[3]
        if p4 > 0.95:
            break
    assert p4 > 0.95, f"P(choice 4) stuck at {p4:.3f}"


def test_checkpoint_roundtrip_and_errors(tmp_path):
    policy = ActorCritic(10, 2, hidden=(8, 4))
    path = tmp_path / "p.ckpt"
    meta = {"seed": 1, "note": "test"}
    obs_state = {"count": 5, "mean": np.arange(10.0), "m2": np.ones(10)}
    rn_state = {"gamma": 0.99, "ret": 0.0,
                "stats": {"count": 7, "mean": np.float64(-3.0), "m2": np.float64(2.0)}}
    save_checkpoint(str(path), policy, meta, obs_state, rn_state)
    loaded, header = load_checkpoint(str(path))
    for (ka, va), (kb, vb) in zip(policy.state_dict().items(),
                                  loaded.state_dict().items()):
        assert ka == kb
        assert torch.allclose(va, vb)
    assert header["meta"]["note"] == "test"
    assert header["obs_stats"]["count"] == 5
    np.testing.assert_allclose(header["obs_stats"]["mean"], np.arange(10.0))
    assert header["reward_norm"]["count"] == 7

    # identical contents -> identical bytes
    path2 = tmp_path / "p2.ckpt"
    save_checkpoint(str(path2), policy, meta, obs_state, rn_state)
    assert path.read_bytes() == path2.read_bytes()

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(bad))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "missing.ckpt"))


@pytest.mark.slow
def test_parallel_train_writes_checkpoint(tmp_path):
    from corridor_rl.ppo import mini_ppo_config
    from corridor_rl.train import train
    cfg = mini_ppo_config(total_steps=6000)
    cfg.n_actors = 2
    ckpt = tmp_path / "par.ckpt"
    result = train(mini_config(), cfg, seed=5, checkpoint_path=str(ckpt),
                   mode="parallel")
    assert ckpt.exists()
    assert result.updates >= 1
    policy, header = load_checkpoint(str(ckpt))
    assert header["meta"]["mode"] == "parallel"
    assert header["obs_stats"]["count"] > 0


@pytest.mark.slow
def test_parallel_matches_sequential_rollouts():
    """Parallel workers produce the same per-actor trajectories (hence the
    same multiset of transitions) as sequential collection."""
    net_cfg = mini_config()
    rates = DemandRates()
    episode = EpisodeConfig()
    seed = 123
    n_actors = 2
    steps = 10
    torch.manual_seed(0)
    probe = make_env(net_cfg, rates, episode, 0)
    policy = ActorCritic(probe.obs_dim, probe.n_mb, hidden=(32, 32))

    envs = [make_env(net_cfg, rates, episode, env_seed_for(seed, i))
            for i in range(n_actors)]
    rngs = [np.random.default_rng(rng_seed_for(seed, i)) for i in range(n_actors)]
    seq_batch, _ = collect_rollouts(policy, envs, steps, rngs)

    workers = ParallelActors(net_cfg, rates, episode, seed, n_actors,
                             (probe.obs_dim, probe.n_mb, (32, 32), "tanh"))
    try:
        par_batch = workers.collect(policy, steps, 0.99, 0.95)
    finally:
        workers.close()
    np.testing.assert_array_equal(seq_batch.actions, par_batch.actions)
    np.testing.assert_allclose(seq_batch.observations, par_batch.observations,
                               atol=0)
    np.testing.assert_allclose(seq_batch.rewards, par_batch.rewards, atol=0)
    np.testing.assert_allclose(seq_batch.advantages, par_batch.advantages,
                               atol=1e-12)
