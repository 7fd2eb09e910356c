"""PPO component tests: GAE, clipped objective, training loop, checkpoints."""

import numpy as np
import pytest

from flyora import nets, ppo
from flyora.env import LoRaAllocEnv, N_ACTIONS

from conftest import AREA, CENTER


def tiny_env(n=2, seed=0):
    return LoRaAllocEnv(n, AREA, CENTER, seed=seed)


def make_params(seed=0, obs_dim=6, hidden=8):
    return ppo.init_policy_params(np.random.default_rng(seed), obs_dim,
                                  hidden)


def make_batch(rng, params, b=10, near_sampling=True):
    obs = rng.standard_normal((b, params.policy.in_dim))
    actions = rng.integers(params.policy.out_dim, size=b)
    probs = ppo.forward_policy(obs, params.policy)
    old_logp = np.log(probs[np.arange(b), actions])
    if not near_sampling:
        old_logp = old_logp + rng.normal(0.0, 0.5, size=b)
    return ppo.MiniBatch(observations=obs, actions=actions,
                         old_log_probs=old_logp,
                         advantages=rng.standard_normal(b),
                         returns=rng.standard_normal(b))


# ------------------------------------------------------------------- GAE

def test_gae_hand_computed_values():
    # gamma=0.5, chi=0.9: with every delta == 1, the backward recursion gives
    # A2 = 1, A1 = 1 + 0.45 = 1.45, A0 = 1 + 0.45 * 1.45 = 1.6525
    hp = ppo.Hyperparams(gamma=0.5, chi=0.9)
    values = np.array([1.0, 2.0, 3.0])
    # choose rewards so that delta_t = r_t + gamma V_{t+1} - V_t = 1:
    # delta_0 = r_0 + 0.5*2 - 1, delta_1 = r_1 + 0.5*3 - 2, delta_2 = r_2 - 3
    rewards = np.array([1.0, 1.5, 4.0])
    traj = ppo.Trajectory(observations=np.zeros((3, 1)),
                          actions=np.zeros(3, dtype=int),
                          log_probs=np.zeros(3),
                          rewards=rewards,
                          dones=np.array([False, False, True]),
                          values=values)
    adv = ppo.gae_estimator(traj, hp)
    assert np.allclose(adv, [1.6525, 1.45, 1.0], atol=1e-12)


def test_gae_equals_direct_summation(rng):
    hp = ppo.Hyperparams(gamma=0.97, chi=0.8)
    for _ in range(10):
        n = 50
        rewards = rng.standard_normal(n)
        values = rng.standard_normal(n)
        dones = np.zeros(n, dtype=bool)
        dones[-1] = True
        traj = ppo.Trajectory(np.zeros((n, 1)), np.zeros(n, dtype=int),
                              np.zeros(n), rewards, dones, values=values)
        adv = ppo.gae_estimator(traj, hp)
        nxt = np.append(values[1:], 0.0)
        nxt[-1] = 0.0
        deltas = rewards + hp.gamma * nxt - values
        deltas[-1] = rewards[-1] - values[-1]
        direct = np.array([
            sum((hp.gamma * hp.chi) ** i * deltas[t + i]
                for i in range(n - t))
            for t in range(n)])
        assert np.allclose(adv, direct, atol=1e-12)


def test_gae_input_validation():
    hp = ppo.Hyperparams()
    empty = ppo.Trajectory(np.zeros((0, 1)), np.zeros(0, dtype=int),
                           np.zeros(0), np.zeros(0),
                           np.zeros(0, dtype=bool), values=np.zeros(0))
    with pytest.raises(ppo.EmptyBatchError):
        ppo.gae_estimator(empty, hp)
    open_ended = ppo.Trajectory(np.zeros((2, 1)), np.zeros(2, dtype=int),
                                np.zeros(2), np.zeros(2),
                                np.array([False, False]),
                                values=np.zeros(2))
    with pytest.raises(ppo.IncompleteTrajectoryError):
        ppo.gae_estimator(open_ended, hp)
    no_values = ppo.Trajectory(np.zeros((2, 1)), np.zeros(2, dtype=int),
                               np.zeros(2), np.zeros(2),
                               np.array([False, True]))
    with pytest.raises(ValueError):
        ppo.gae_estimator(no_values, hp)


def test_discounted_returns():
    r = np.array([1.0, 2.0, 4.0])
    out = ppo.discounted_returns(r, gamma=0.5)
    assert np.allclose(out, [1.0 + 0.5 * (2.0 + 0.5 * 4.0),
                             2.0 + 0.5 * 4.0, 4.0])
    dones = np.array([False, True, False])
    out = ppo.discounted_returns(r, gamma=0.5, dones=dones)
    assert np.allclose(out, [2.0, 2.0, 4.0])


# ------------------------------------------------------- clipped objective

def test_clipped_loss_at_sampling_params_is_mean_advantage(rng):
    params = make_params()
    batch = make_batch(rng, params)
    loss, _ = ppo.clipped_loss(params.policy, batch, ppo.Hyperparams())
    # ratio == 1 everywhere, so the surrogate reduces to mean(advantage)
    assert loss == pytest.approx(float(batch.advantages.mean()), abs=1e-12)


def test_clipped_loss_caps_large_ratios(rng):
    params = make_params()
    batch = make_batch(rng, params)
    hp = ppo.Hyperparams(clip_epsilon=0.1)
    # make the stored behavior-policy probabilities tiny: ratios blow up
    batch.old_log_probs = batch.old_log_probs - 5.0
    batch.advantages = np.ones(len(batch))
    loss, grads = ppo.clipped_loss(params.policy, batch, hp)
    assert loss == pytest.approx(1.0 + hp.clip_epsilon, abs=1e-12)
    # fully clipped with positive advantage: no gradient flows
    assert all(np.allclose(g, 0.0, atol=1e-15) for g in grads.arrays())


def test_clipped_loss_empty_batch():
    params = make_params()
    empty = ppo.MiniBatch(np.zeros((0, 6)), np.zeros(0, dtype=int),
                          np.zeros(0), np.zeros(0), np.zeros(0))
    with pytest.raises(ppo.EmptyBatchError):
        ppo.clipped_loss(params.policy, empty, ppo.Hyperparams())


def test_policy_gradient_matches_finite_differences(rng):
    params = make_params()
    batch = make_batch(rng, params, near_sampling=False)
    hp = ppo.Hyperparams()
    _, grads = ppo.clipped_loss(params.policy, batch, hp)
    h = 1e-6
    mlp = params.policy
    for a_idx, arr in enumerate(mlp.arrays()):
        flat = arr.ravel()
        for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            up, _ = ppo.clipped_loss(mlp, batch, hp)
            flat[i] = old - h
            down, _ = ppo.clipped_loss(mlp, batch, hp)
            flat[i] = old
            fd = (up - down) / (2.0 * h)
            an = grads.arrays()[a_idx].ravel()[i]
            assert an == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_value_loss_is_half_mse(rng):
    params = make_params()
    obs = rng.standard_normal((8, 6))
    returns = rng.standard_normal(8)
    loss, _ = ppo.value_loss(params.value, obs, returns)
    pred, _ = nets.forward(params.value, obs)
    assert loss == pytest.approx(0.5 * float(np.mean((pred[:, 0] - returns) ** 2)),
                                 abs=1e-12)
    with pytest.raises(ppo.EmptyBatchError):
        ppo.value_loss(params.value, np.zeros((0, 6)), np.zeros(0))


def test_value_gradient_matches_finite_differences(rng):
    params = make_params()
    obs = rng.standard_normal((8, 6))
    returns = rng.standard_normal(8)
    _, grads = ppo.value_loss(params.value, obs, returns)
    h = 1e-6
    mlp = params.value
    for a_idx, arr in enumerate(mlp.arrays()):
        flat = arr.ravel()
        for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + h
            up, _ = ppo.value_loss(mlp, obs, returns)
            flat[i] = old - h
            down, _ = ppo.value_loss(mlp, obs, returns)
            flat[i] = old
            fd = (up - down) / (2.0 * h)
            an = grads.arrays()[a_idx].ravel()[i]
            assert an == pytest.approx(fd, rel=1e-5, abs=1e-9)


# ---------------------------------------------------------- policy queries

def test_forward_policy_distribution_and_mask(rng):
    params = make_params(obs_dim=6)
    obs = rng.standard_normal(6)
    p = ppo.forward_policy(obs, params.policy)
    assert p.shape == (N_ACTIONS,)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    mask = np.zeros(N_ACTIONS, dtype=bool)
    mask[3] = mask[17] = True
    pm = ppo.forward_policy(obs, params.policy, action_mask=mask)
    assert pm[3] + pm[17] == pytest.approx(1.0, abs=1e-12)
    assert (pm[~mask] == 0.0).all()
    with pytest.raises(ppo.ShapeMismatchError):
        ppo.forward_policy(np.zeros(5), params.policy)


def test_sync_sampling_copy_is_bit_exact():
    params = make_params()
    params.policy.w1 += 0.25
    assert not params.policy.allclose(params.policy_star)
    params.sync_sampling_copy()
    assert params.policy.allclose(params.policy_star)
    # later edits to the live policy must not leak into the frozen copy
    params.policy.w1 += 1.0
    assert not params.policy.allclose(params.policy_star)


# ---------------------------------------------------------------- training

def test_train_is_deterministic():
    hp = ppo.Hyperparams()
    a = ppo.train(tiny_env(), hp, 24, seed=11)
    b = ppo.train(tiny_env(), hp, 24, seed=11)
    assert len(a.curve) == 24 and a.episodes_trained == 24
    assert [p.reward for p in a.curve] == [p.reward for p in b.curve]
    assert [p.accuracy for p in a.curve] == [p.accuracy for p in b.curve]
    assert a.params.policy.allclose(b.params.policy)
    c = ppo.train(tiny_env(), hp, 24, seed=12)
    assert [p.reward for p in a.curve] != [p.reward for p in c.curve]


def test_train_rejects_bad_args():
    with pytest.raises(ValueError):
        ppo.train(tiny_env(), ppo.Hyperparams(), 0)
    with pytest.raises(ValueError):
        ppo.train(tiny_env(), ppo.Hyperparams(), 4,
                  action_mask=np.ones(5, dtype=bool))
    with pytest.raises(ppo.AllActionsEliminatedError):
        ppo.train(tiny_env(), ppo.Hyperparams(), 4,
                  action_mask=np.zeros(N_ACTIONS, dtype=bool))
    wrong = make_params(obs_dim=9)
    with pytest.raises(ppo.CheckpointMismatchError):
        ppo.train(tiny_env(n=2), ppo.Hyperparams(), 4, initial=wrong)


def test_train_respects_action_mask():
    mask = np.zeros(N_ACTIONS, dtype=bool)
    mask[29] = True            # only SF12 at max TP survives
    res = ppo.train(tiny_env(), ppo.Hyperparams(), 8, action_mask=mask)
    r = ppo.rollout(tiny_env(seed=3), res.params, seed=123, greedy=True,
                    action_mask=mask)
    assert set(r["actions"]) == {29}


def test_value_warmup_freezes_policy():
    base = ppo.train(tiny_env(), ppo.Hyperparams(), 8, seed=5)
    hp = ppo.Hyperparams(value_warmup_updates=1000)
    res = ppo.train(tiny_env(seed=1), hp, 12, initial=base.params, seed=6)
    # every update fell inside the warmup window: the policy never moved
    assert res.params.policy.allclose(base.params.policy)
    assert not res.params.value.allclose(base.params.value)
    # without warmup the policy does move
    hp0 = ppo.Hyperparams(value_warmup_updates=0)
    res0 = ppo.train(tiny_env(seed=1), hp0, 12, initial=base.params, seed=6)
    assert not res0.params.policy.allclose(base.params.policy)


def test_progress_callback_sees_every_episode():
    seen = []
    ppo.train(tiny_env(), ppo.Hyperparams(), 6, progress=seen.append)
    assert [p.episode for p in seen] == list(range(6))


# ------------------------------------------------------ rollout / evaluate

def test_rollout_deterministic_and_complete():
    res = ppo.train(tiny_env(), ppo.Hyperparams(), 8)
    a = ppo.rollout(tiny_env(seed=2), res.params, seed=77, greedy=True)
    b = ppo.rollout(tiny_env(seed=9), res.params, seed=77, greedy=True)
    assert a["actions"] == b["actions"]
    assert a["reward"] == pytest.approx(b["reward"])
    assert len(a["actions"]) == 2
    assert set(a) == {"reward", "accuracy", "ee", "actions", "allocation",
                      "topology"}
    with pytest.raises(ValueError):
        ppo.rollout(tiny_env(), res.params, seed=1, greedy=False)


def test_evaluate_returns_per_seed_stats():
    res = ppo.train(tiny_env(), ppo.Hyperparams(), 8)
    stats = ppo.evaluate(tiny_env(seed=4), res.params, [5, 6, 7])
    assert [s["seed"] for s in stats] == [5, 6, 7]
    for s in stats:
        assert 0.0 <= s["accuracy"] <= 1.0
        assert s["ee"] >= 0.0


def test_action_distribution_is_a_distribution():
    res = ppo.train(tiny_env(), ppo.Hyperparams(), 8)
    dist = ppo.action_distribution(tiny_env(seed=8), res.params, 10,
                                   seeds=range(10))
    assert dist.shape == (N_ACTIONS,)
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)
    assert (dist >= 0.0).all()


def test_reduce_action_space_threshold_is_strict():
    dist = np.zeros(N_ACTIONS)
    dist[0] = 0.5
    dist[1] = 0.3
    dist[2] = 0.2
    mask = ppo.reduce_action_space(dist, threshold=0.2)
    assert mask[0] and mask[1] and not mask[2]   # equality does not survive
    assert ppo.reduce_action_space(dist).sum() == 3
    with pytest.raises(ppo.AllActionsEliminatedError):
        ppo.reduce_action_space(dist, threshold=0.9)
    with pytest.raises(ValueError):
        ppo.reduce_action_space(dist[:5])
    with pytest.raises(ValueError):
        ppo.reduce_action_space(np.full(N_ACTIONS, -1.0))


# -------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    res = ppo.train(tiny_env(), ppo.Hyperparams(), 8)
    path = tmp_path / "ckpt.json"
    ppo.save_checkpoint(path, res.params, ppo.Hyperparams(gamma=0.5), 2, 8)
    ckpt = ppo.load_checkpoint(path)
    assert ckpt.n_eds == 2 and ckpt.episodes_trained == 8
    assert ckpt.hyperparams.gamma == 0.5
    assert ckpt.params.policy.allclose(res.params.policy)
    assert ckpt.params.value.allclose(res.params.value)
    assert ckpt.params.policy_star.allclose(res.params.policy_star)


def test_checkpoint_version_and_consistency_errors(tmp_path):
    import json
    res = ppo.train(tiny_env(), ppo.Hyperparams(), 4)
    path = tmp_path / "ckpt.json"
    ppo.save_checkpoint(path, res.params, ppo.Hyperparams(), 2, 4)
    obj = json.loads(path.read_text())
    obj["format_version"] = 999
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(obj))
    with pytest.raises(ppo.CheckpointMismatchError):
        ppo.load_checkpoint(bad)
    obj = json.loads(path.read_text())
    obj["n_eds"] = 5                       # no longer matches obs_dim
    bad.write_text(json.dumps(obj))
    with pytest.raises(ppo.CheckpointMismatchError):
        ppo.load_checkpoint(bad)
    obj = json.loads(path.read_text())
    del obj["policy"]
    bad.write_text(json.dumps(obj))
    with pytest.raises(ppo.CheckpointMismatchError):
        ppo.load_checkpoint(bad)


# ------------------------------------------------------------ curve helpers

def test_moving_average():
    ma = ppo.moving_average([1.0, 2.0, 3.0, 4.0], 2)
    assert np.allclose(ma, [1.5, 2.5, 3.5])
    assert len(ppo.moving_average(np.arange(10), 10)) == 1
    with pytest.raises(ValueError):
        ppo.moving_average([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        ppo.moving_average([1.0, 2.0], 0)


def test_episodes_to_plateau():
    # ramp for 50 episodes then hold: the plateau starts where the ramp ends
    rewards = np.concatenate([np.linspace(0.0, 10.0, 50), np.full(150, 10.0)])
    n = ppo.episodes_to_plateau(rewards, window=10, fraction=0.95)
    assert 40 <= n <= 60
    flat = np.full(100, 5.0)
    assert ppo.episodes_to_plateau(flat, window=10) == 10


def test_hyperparams_validation_and_json():
    hp = ppo.Hyperparams(gamma=0.9, target_kl=0.0)
    again = ppo.Hyperparams.from_json(hp.to_json())
    assert again == hp
    for bad in (dict(gamma=0.0), dict(gamma=1.5), dict(clip_epsilon=0.0),
                dict(clip_epsilon=1.0), dict(chi=-0.1), dict(chi=1.1),
                dict(learning_rate=0.0), dict(minibatch_size=0),
                dict(epochs_per_update=0), dict(update_every=0),
                dict(replay_episodes=0), dict(hidden_units=0),
                dict(reward_scale=0.0), dict(target_kl=-1.0),
                dict(value_warmup_updates=-1)):
        with pytest.raises(ValueError):
            ppo.Hyperparams(**bad)
