"""Proximal policy optimization for the allocation environment.

The agent keeps two MLPs (policy head over the 30 discrete actions, scalar
value head) plus a sampling copy of the policy that is synced after each
update; episodes are collected with the sampling copy, stored in a short
replay window, and replayed for a few epochs of clipped-surrogate updates.

Also hosts action-space reduction: roll out a trained policy greedily,
record the empirical action distribution, and mask out actions that fall
below a probability threshold. Training and evaluation both accept such a
mask; sampling probabilities are renormalized over the surviving actions.
"""

import json
import os
from collections import deque
from dataclasses import dataclass, field, asdict

import numpy as np

from . import nets
from .env import N_ACTIONS


class ShapeMismatchError(ValueError):
    """Observation length does not match the network input size."""


class IncompleteTrajectoryError(ValueError):
    """Advantage estimation was asked to run on a truncated episode."""


class EmptyBatchError(ValueError):
    """A loss was requested over zero transitions."""


class DivergenceDetectedError(RuntimeError):
    """Non-finite values appeared in the policy, value, or loss."""


class AllActionsEliminatedError(ValueError):
    """Action-space reduction removed every action."""


class CheckpointMismatchError(ValueError):
    """Checkpoint contents are inconsistent or do not fit the target env."""


CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Hyperparams:
    """PPO settings. Defaults follow the training setup used throughout."""

    gamma: float = 0.99              # discount factor
    clip_epsilon: float = 0.1        # surrogate clip range
    chi: float = 0.01                # GAE decay (lambda)
    learning_rate: float = 3e-3      # networks are tiny; larger steps converge
    minibatch_size: int = 64
    epochs_per_update: int = 10      # passes over the replay window per update
    update_every: int = 4            # episodes collected between policy updates
    replay_episodes: int = 4         # last-K episodes kept; == update_every means
                                     # the window is flushed each update (on-policy)
    hidden_units: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    reward_scale: float = 1e-5       # scales raw EE rewards for learning only
    normalize_advantages: bool = True
    target_kl: float = 0.02          # stop an update's policy passes once the
                                     # approximate KL to the sampling policy
                                     # exceeds this; 0 disables the check
    value_warmup_updates: int = 25   # when resuming from existing parameters,
                                     # run this many value-only updates first so
                                     # a stale critic cannot wreck the policy

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if not 0.0 <= self.chi <= 1.0:
            raise ValueError("chi must be in [0, 1]")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.epochs_per_update < 1:
            raise ValueError("epochs_per_update must be >= 1")
        if self.replay_episodes < 1:
            raise ValueError("replay_episodes must be >= 1")
        if self.update_every < 1:
            raise ValueError("update_every must be >= 1")
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if self.reward_scale <= 0.0:
            raise ValueError("reward_scale must be positive")
        if self.target_kl < 0.0:
            raise ValueError("target_kl must be >= 0")
        if self.value_warmup_updates < 0:
            raise ValueError("value_warmup_updates must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(obj: dict) -> "Hyperparams":
        return Hyperparams(**obj)


@dataclass
class PolicyParams:
    """Policy net, value net, and the sampling copy of the policy."""

    policy: nets.MLPParams
    value: nets.MLPParams
    policy_star: nets.MLPParams

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.policy.copy(), self.value.copy(),
                            self.policy_star.copy())

    def sync_sampling_copy(self) -> None:
        self.policy_star = self.policy.copy()


def init_policy_params(rng: np.random.Generator, obs_dim: int,
                       hidden_units: int = 64,
                       n_actions: int = N_ACTIONS) -> PolicyParams:
    """Fresh nets; tiny output gain keeps the initial policy near uniform."""
    policy = nets.init_mlp(rng, obs_dim, hidden_units, n_actions, out_gain=0.01)
    value = nets.init_mlp(rng, obs_dim, hidden_units, 1, out_gain=1.0)
    return PolicyParams(policy=policy, value=value, policy_star=policy.copy())


@dataclass
class Trajectory:
    """One collected episode. rewards are already reward-scaled for learning."""

    observations: np.ndarray   # (T, obs_dim)
    actions: np.ndarray        # (T,) int
    log_probs: np.ndarray      # (T,) log prob under the sampling policy
    rewards: np.ndarray        # (T,) scaled
    dones: np.ndarray          # (T,) bool, last entry True for a full episode
    values: np.ndarray = None  # (T,) V(S_t), filled in before GAE

    def __len__(self) -> int:
        return int(len(self.actions))

    @property
    def complete(self) -> bool:
        return bool(len(self.dones) > 0 and self.dones[-1])


@dataclass
class MiniBatch:
    observations: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    action_mask: np.ndarray = None

    def __len__(self) -> int:
        return int(len(self.actions))


@dataclass
class CurvePoint:
    episode: int
    reward: float     # raw (unscaled) cumulative episode reward
    accuracy: float   # accepted steps / total steps


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list
    episodes_trained: int


def forward_policy(obs, mlp: nets.MLPParams, action_mask=None) -> np.ndarray:
    """Action probabilities for a single observation (or a batch of them)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != mlp.in_dim:
        raise ShapeMismatchError(
            "observation length %d does not match network input %d"
            % (obs.shape[-1], mlp.in_dim))
    logits, _ = nets.forward(mlp, obs)
    return nets.softmax(logits, mask=action_mask)


def gae_estimator(traj: Trajectory, hp: Hyperparams) -> np.ndarray:
    """Generalized advantage estimates via the backward recursion.

    Requires a complete episode and per-step value estimates; the value after
    the terminal state is zero.
    """
    if len(traj) == 0:
        raise EmptyBatchError("empty trajectory")
    if not traj.complete:
        raise IncompleteTrajectoryError(
            "advantage estimation needs a finished episode")
    if traj.values is None or len(traj.values) != len(traj):
        raise ValueError("trajectory is missing per-step value estimates")
    rewards = np.asarray(traj.rewards, dtype=np.float64)
    values = np.asarray(traj.values, dtype=np.float64)
    dones = np.asarray(traj.dones, dtype=bool)
    n = len(rewards)
    adv = np.empty(n)
    next_adv = 0.0
    next_value = 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + hp.gamma * next_value * live - values[t]
        adv[t] = delta + hp.gamma * hp.chi * live * next_adv
        next_adv = adv[t]
        next_value = values[t]
    return adv


def discounted_returns(rewards, gamma: float, dones=None) -> np.ndarray:
    """Reward-to-go targets G_t = r_t + gamma * G_{t+1}, reset at terminals."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        if dones is not None and dones[t]:
            acc = 0.0
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def _policy_objective(mlp: nets.MLPParams, batch: MiniBatch, hp: Hyperparams,
                      entropy_coef: float):
    """Clipped surrogate (plus optional entropy bonus) and its exact gradient.

    Returns (clip_loss, entropy, grads, approx_kl) where grads are for the
    combined objective clip_loss + entropy_coef * entropy, to be maximized,
    and approx_kl estimates KL(sampling policy || current policy).
    """
    if len(batch) == 0:
        raise EmptyBatchError("minibatch has no transitions")
    logits, cache = nets.forward(mlp, batch.observations)
    probs = nets.softmax(logits, mask=batch.action_mask)
    safe = np.where(probs > 0.0, probs, 1.0)
    log_probs = np.log(safe)
    b = len(batch)
    rows = np.arange(b)
    chosen_logp = log_probs[rows, batch.actions]
    ratio = np.exp(chosen_logp - batch.old_log_probs)
    adv = batch.advantages
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon) * adv
    per_sample = np.minimum(unclipped, clipped)
    clip_loss = float(per_sample.mean())

    # gradient flows only through samples where the unclipped branch is active
    coef = np.where(unclipped <= clipped, ratio * adv, 0.0) / b
    one_hot = np.zeros_like(probs)
    one_hot[rows, batch.actions] = 1.0
    dlogits = coef[:, None] * (one_hot - probs)

    entropy_rows = -(probs * log_probs).sum(axis=-1)
    entropy = float(entropy_rows.mean())
    if entropy_coef != 0.0:
        dlogits += (entropy_coef / b) * (-probs * (log_probs + entropy_rows[:, None]))

    grads = nets.backward(mlp, cache, dlogits)
    approx_kl = float(np.mean(batch.old_log_probs - chosen_logp))
    return clip_loss, entropy, grads, approx_kl


def clipped_loss(mlp: nets.MLPParams, batch: MiniBatch, hp: Hyperparams):
    """Mean clipped surrogate over the batch and its gradient w.r.t. the policy."""
    loss, _, grads, _ = _policy_objective(mlp, batch, hp, entropy_coef=0.0)
    return loss, grads


def value_loss(mlp: nets.MLPParams, observations, returns, coef: float = 1.0):
    """Half mean squared error of the value head against return targets."""
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or len(obs) == 0:
        raise EmptyBatchError("value loss needs a non-empty 2-D batch")
    out, cache = nets.forward(mlp, obs)
    v = out[:, 0]
    err = v - np.asarray(returns, dtype=np.float64)
    loss = 0.5 * float(np.mean(err * err))
    grad_out = (coef * err / len(err))[:, None]
    grads = nets.backward(mlp, cache, grad_out)
    return loss, grads


def _collect_episode(env, params: PolicyParams, hp: Hyperparams,
                     rng: np.random.Generator, action_mask=None,
                     episode_seed=None):
    """Sample one episode with the sampling policy. Returns (traj, raw, acc)."""
    obs = env.reset(seed=episode_seed)
    obs_list, actions, log_probs, rewards, dones = [], [], [], [], []
    raw_total = 0.0
    done = False
    while not done:
        probs = forward_policy(obs, params.policy_star, action_mask)
        if not np.all(np.isfinite(probs)):
            raise DivergenceDetectedError("policy produced non-finite probabilities")
        action = int(rng.choice(N_ACTIONS, p=probs))
        obs_list.append(obs)
        actions.append(action)
        log_probs.append(float(np.log(probs[action])))
        result = env.step(action)
        rewards.append(result.reward * hp.reward_scale)
        dones.append(result.done)
        raw_total += result.reward
        obs = result.observation
        done = result.done
    traj = Trajectory(
        observations=np.asarray(obs_list, dtype=np.float64),
        actions=np.asarray(actions, dtype=np.int64),
        log_probs=np.asarray(log_probs, dtype=np.float64),
        rewards=np.asarray(rewards, dtype=np.float64),
        dones=np.asarray(dones, dtype=bool),
    )
    return traj, raw_total, env.accuracy


def _update(params: PolicyParams, replay, hp: Hyperparams,
            policy_opt: nets.Adam, value_opt: nets.Adam,
            rng: np.random.Generator, action_mask=None,
            update_policy: bool = True) -> None:
    """One PPO update over the replay window.

    With update_policy False only the value net is fitted (warmup phase).
    Policy passes stop early once the approximate KL to the sampling policy
    exceeds hp.target_kl; value passes always run to completion.
    """
    all_obs, all_actions, all_logp, all_adv, all_ret = [], [], [], [], []
    for traj in replay:
        out, _ = nets.forward(params.value, traj.observations)
        traj.values = out[:, 0]
        all_adv.append(gae_estimator(traj, hp))
        all_ret.append(discounted_returns(traj.rewards, hp.gamma, traj.dones))
        all_obs.append(traj.observations)
        all_actions.append(traj.actions)
        all_logp.append(traj.log_probs)
    obs = np.concatenate(all_obs)
    actions = np.concatenate(all_actions)
    old_logp = np.concatenate(all_logp)
    adv = np.concatenate(all_adv)
    returns = np.concatenate(all_ret)
    if hp.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = len(actions)
    policy_live = update_policy
    for _ in range(hp.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, hp.minibatch_size):
            idx = order[start:start + hp.minibatch_size]
            batch = MiniBatch(
                observations=np.ascontiguousarray(obs[idx]),
                actions=actions[idx],
                old_log_probs=old_logp[idx],
                advantages=adv[idx],
                returns=returns[idx],
                action_mask=action_mask,
            )
            if policy_live:
                p_loss, _, p_grads, approx_kl = _policy_objective(
                    params.policy, batch, hp, hp.entropy_coef)
                if not np.isfinite(p_loss):
                    raise DivergenceDetectedError(
                        "non-finite policy loss %r" % (p_loss,))
                if hp.target_kl > 0.0 and approx_kl > hp.target_kl:
                    policy_live = False
                else:
                    policy_opt.step(p_grads.arrays(), maximize=True)
            v_loss, v_grads = value_loss(
                params.value, batch.observations, batch.returns, hp.value_coef)
            if not np.isfinite(v_loss):
                raise DivergenceDetectedError(
                    "non-finite value loss %r" % (v_loss,))
            value_opt.step(v_grads.arrays())


def train(env, hp: Hyperparams, episodes: int, initial: PolicyParams = None,
          action_mask=None, seed: int = 0, progress=None) -> TrainResult:
    """Run PPO for the given number of episodes.

    initial lets training continue from an existing parameter set (its array
    shapes must match the env observation size); the first
    hp.value_warmup_updates updates then fit only the value net, so the critic
    recalibrates to the new scenario before the policy moves. action_mask
    restricts both sampling and the update to the surviving actions. progress,
    if given, is called with each CurvePoint as it is produced.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if action_mask is not None:
        action_mask = np.asarray(action_mask, dtype=bool)
        if action_mask.shape != (N_ACTIONS,):
            raise ValueError("action mask must have shape (%d,)" % N_ACTIONS)
        if not action_mask.any():
            raise AllActionsEliminatedError("action mask excludes every action")
    rng = np.random.default_rng(seed)
    obs_dim = 3 * env.n_eds
    if initial is None:
        params = init_policy_params(rng, obs_dim, hp.hidden_units)
    else:
        params = initial.copy()
        if params.policy.in_dim != obs_dim:
            raise CheckpointMismatchError(
                "initial parameters expect observation size %d, env has %d"
                % (params.policy.in_dim, obs_dim))
        params.sync_sampling_copy()
    policy_opt = nets.Adam(params.policy.arrays(), hp.learning_rate)
    value_opt = nets.Adam(params.value.arrays(), hp.learning_rate)
    warmup = hp.value_warmup_updates if initial is not None else 0
    updates_done = 0
    replay = deque(maxlen=hp.replay_episodes)
    curve = []
    for ep in range(episodes):
        traj, raw_reward, accuracy = _collect_episode(env, params, hp, rng,
                                                      action_mask)
        replay.append(traj)
        if (ep + 1) % hp.update_every == 0:
            _update(params, list(replay), hp, policy_opt, value_opt, rng,
                    action_mask, update_policy=updates_done >= warmup)
            updates_done += 1
            params.sync_sampling_copy()
        point = CurvePoint(episode=ep, reward=raw_reward, accuracy=accuracy)
        curve.append(point)
        if progress is not None:
            progress(point)
    return TrainResult(params=params, curve=curve, episodes_trained=episodes)


def rollout(env, params: PolicyParams, seed=None, greedy: bool = True,
            action_mask=None, rng: np.random.Generator = None) -> dict:
    """Play one episode. Returns stats plus the final allocation and env."""
    obs = env.reset(seed=seed)
    total = 0.0
    actions = []
    done = False
    while not done:
        probs = forward_policy(obs, params.policy_star, action_mask)
        if greedy:
            action = int(np.argmax(probs))
        else:
            if rng is None:
                raise ValueError("stochastic rollout needs an rng")
            action = int(rng.choice(N_ACTIONS, p=probs))
        actions.append(action)
        result = env.step(action)
        total += result.reward
        obs = result.observation
        done = result.done
    return {
        "reward": total,
        "accuracy": env.accuracy,
        "ee": env.current_ee(),
        "actions": actions,
        "allocation": env.allocation,
        "topology": env.topology,
    }


def evaluate(env, params: PolicyParams, seeds, greedy: bool = True,
             action_mask=None) -> list:
    """Greedy (or sampled) rollouts on the given topology seeds."""
    stats = []
    for s in seeds:
        r = rollout(env, params, seed=s, greedy=greedy, action_mask=action_mask)
        stats.append({"seed": int(s), "ee": r["ee"], "reward": r["reward"],
                      "accuracy": r["accuracy"]})
    return stats


def action_distribution(env, params: PolicyParams, episodes: int,
                        action_mask=None, seeds=None) -> np.ndarray:
    """Empirical distribution of greedily chosen actions over rollouts."""
    if seeds is None:
        seeds = [None] * episodes
    counts = np.zeros(N_ACTIONS)
    for s in seeds:
        r = rollout(env, params, seed=s, greedy=True, action_mask=action_mask)
        for a in r["actions"]:
            counts[a] += 1
    return counts / counts.sum()


def reduce_action_space(distribution, threshold: float = 1e-3) -> np.ndarray:
    """Boolean mask keeping actions whose empirical probability exceeds threshold."""
    dist = np.asarray(distribution, dtype=np.float64)
    if dist.shape != (N_ACTIONS,):
        raise ValueError("distribution must have shape (%d,)" % N_ACTIONS)
    if np.any(dist < 0.0):
        raise ValueError("distribution has negative entries")
    mask = dist > threshold
    if not mask.any():
        raise AllActionsEliminatedError(
            "threshold %g eliminates all %d actions" % (threshold, N_ACTIONS))
    return mask


def save_checkpoint(path, params: PolicyParams, hp: Hyperparams, n_eds: int,
                    episodes_trained: int) -> None:
    """Write a JSON checkpoint (weights, hyperparams, episode counter)."""
    obj = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "n_eds": int(n_eds),
        "obs_dim": int(params.policy.in_dim),
        "n_actions": int(params.policy.out_dim),
        "hidden_units": int(params.policy.hidden_dim),
        "episodes_trained": int(episodes_trained),
        "hyperparams": hp.to_json(),
        "policy": params.policy.to_json(),
        "value": params.value.to_json(),
        "policy_star": params.policy_star.to_json(),
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh)
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    params: PolicyParams
    hyperparams: Hyperparams
    n_eds: int
    episodes_trained: int


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint and validate its internal consistency."""
    with open(path) as fh:
        obj = json.load(fh)
    version = obj.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointMismatchError(
            "unsupported checkpoint format %r (expected %d)"
            % (version, CHECKPOINT_FORMAT_VERSION))
    try:
        params = PolicyParams(
            policy=nets.MLPParams.from_json(obj["policy"]),
            value=nets.MLPParams.from_json(obj["value"]),
            policy_star=nets.MLPParams.from_json(obj["policy_star"]),
        )
        hp = Hyperparams.from_json(obj["hyperparams"])
        n_eds = int(obj["n_eds"])
        episodes_trained = int(obj["episodes_trained"])
        obs_dim = int(obj["obs_dim"])
    except (KeyError, TypeError) as exc:
        raise CheckpointMismatchError("malformed checkpoint: %s" % exc) from exc
    if params.policy.in_dim != obs_dim or obs_dim != 3 * n_eds:
        raise CheckpointMismatchError(
            "checkpoint dims disagree: obs_dim %d, n_eds %d, policy input %d"
            % (obs_dim, n_eds, params.policy.in_dim))
    if params.value.in_dim != obs_dim or params.value.out_dim != 1:
        raise CheckpointMismatchError("value head dims are inconsistent")
    return Checkpoint(params=params, hyperparams=hp, n_eds=n_eds,
                      episodes_trained=episodes_trained)


def moving_average(values, window: int) -> np.ndarray:
    """Simple trailing moving average; length len(values) - window + 1."""
    v = np.asarray(values, dtype=np.float64)
    if window < 1 or window > len(v):
        raise ValueError("window must be in [1, len(values)]")
    csum = np.concatenate([[0.0], np.cumsum(v)])
    return (csum[window:] - csum[:-window]) / window


def episodes_to_plateau(rewards, window: int = 100,
                        fraction: float = 0.95) -> int:
    """Episodes until the smoothed reward first reaches `fraction` of its
    final smoothed level. Counts the episodes inside the first window."""
    ma = moving_average(rewards, window)
    target = fraction * ma[-1]
    idx = int(np.argmax(ma >= target))
    if not ma[idx] >= target:
        raise ValueError("curve never reaches the plateau target")
    return idx + window
