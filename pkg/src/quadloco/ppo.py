"""Clipped-surrogate policy optimization with parallel episode rollouts.

One training iteration plays a fixed number of worker episodes, estimates
advantages with GAE, then runs several epochs of minibatched updates on
both networks through a single Adam step per minibatch. Rollouts can run
serially or across a fork-based process pool; results are always consumed
in worker order so the two modes produce identical numbers.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import multiprocessing
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import config as config_io
from .env import EnvConfig, QuadrupedEnv, gallop_config, trot_config
from .errors import ConfigError, SimulationDivergedError, TrainingDivergedError
from .nets import Adam, Agent

# Hidden layer widths per observation space, (policy, value).
NETWORK_PRESETS = {
    "small": ((125, 89), (89, 55)),
    "large": ((185, 95), (95, 85)),
}

_SHUFFLE_TAG = 0x5AFE  # keeps update shuffling independent of rollout seeds


def network_preset(observation_space: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    try:
        return NETWORK_PRESETS[observation_space]
    except KeyError:
        raise ConfigError(f"no network preset for {observation_space!r}") from None


@dataclass
class TrainConfig:
    env: EnvConfig = field(default_factory=gallop_config)
    run_seed: int = 0
    total_steps: int = 500_000
    num_workers: int = 25
    max_episode_steps: int = 1000
    learning_rate: float = 3e-4
    lr_decay: bool = True
    clip_ratio: float = 0.2
    update_epochs: int = 10
    minibatch_size: int = 256
    discount: float = 0.99
    gae_lambda: float = 0.95
    init_std: float = 0.5
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    policy_hidden: tuple[int, ...] | None = None  # None -> preset for obs space
    value_hidden: tuple[int, ...] | None = None
    parallel: bool = True

    def validate(self) -> None:
        self.env.validate()
        if self.total_steps <= 0 or self.num_workers <= 0:
            raise ConfigError("total_steps and num_workers must be positive")
        if not 0 < self.max_episode_steps <= self.env.episode_cap:
            raise ConfigError("max_episode_steps must be in (0, episode_cap]")
        if self.learning_rate <= 0 or self.clip_ratio <= 0:
            raise ConfigError("learning_rate and clip_ratio must be positive")
        if self.update_epochs <= 0 or self.minibatch_size <= 0:
            raise ConfigError("update_epochs and minibatch_size must be positive")
        if not 0 <= self.discount <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("discount and gae_lambda must lie in [0, 1]")

    def resolved_hidden(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        preset = network_preset(self.env.observation_space)
        policy = tuple(self.policy_hidden) if self.policy_hidden else preset[0]
        value = tuple(self.value_hidden) if self.value_hidden else preset[1]
        return policy, value


def train_config_to_dict(cfg: TrainConfig) -> dict:
    data = dataclasses.asdict(cfg)
    data["env"] = config_io.env_config_to_dict(cfg.env)
    return data


def train_config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
    if "env" in data and isinstance(data["env"], dict):
        data["env"] = config_io.env_config_from_dict(data["env"])
    for name in ("policy_hidden", "value_hidden"):
        if data.get(name) is not None:
            data[name] = tuple(data[name])
    cfg = TrainConfig(**data)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Rollouts


@dataclass
class EpisodeData:
    observations: np.ndarray   # (T, obs_dim), the inputs actions were drawn from
    actions: np.ndarray        # (T, action_dim)
    log_probs: np.ndarray      # (T,)
    rewards: np.ndarray        # (T,)
    final_observation: np.ndarray
    terminated: bool           # tilt failure (True) vs. step-cap truncation
    episode_return: float
    length: int


@dataclass
class RolloutBatch:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    values: np.ndarray
    episode_returns: np.ndarray
    episode_lengths: np.ndarray

    def __len__(self) -> int:
        return len(self.observations)


def _rollout_task(args) -> EpisodeData:
    agent, env_cfg, run_seed, iteration, worker, max_steps = args
    ss = np.random.SeedSequence(
        [int(run_seed) & 0xFFFFFFFF, int(iteration), int(worker)])
    env_seed = int(ss.generate_state(1)[0])
    action_rng = np.random.Generator(np.random.PCG64(ss.spawn(1)[0]))

    env = QuadrupedEnv(env_cfg, seed=env_seed)
    obs = env.reset()
    observations, actions, log_probs, rewards = [], [], [], []
    tilt = 0.0
    for _ in range(max_steps):
        act, logp = agent.act(obs, action_rng)
        act = act[0]
        try:
            result = env.step(act)
        except SimulationDivergedError as exc:
            raise SimulationDivergedError(
                f"worker {worker} diverged at step {env.step_count}: {exc}"
            ) from exc
        observations.append(obs)
        actions.append(act)
        log_probs.append(float(logp[0]))
        rewards.append(result.reward)
        tilt = result.info["tilt"]
        obs = result.observation
        if result.done:
            break
    terminated = bool(tilt > env_cfg.tilt_limit)
    rewards = np.asarray(rewards)
    return EpisodeData(
        observations=np.asarray(observations),
        actions=np.asarray(actions),
        log_probs=np.asarray(log_probs),
        rewards=rewards,
        final_observation=np.asarray(obs, dtype=float),
        terminated=terminated,
        episode_return=float(rewards.sum()),
        length=len(rewards),
    )


def gae(rewards: np.ndarray, values: np.ndarray, last_value: float,
        discount: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets for one episode."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ConfigError("rewards and values must have matching lengths")
    advantages = np.zeros_like(rewards)
    acc = 0.0
    next_value = float(last_value)
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + discount * next_value - values[t]
        acc = delta + discount * lam * acc
        advantages[t] = acc
        next_value = values[t]
    return advantages, advantages + values


def collect_rollouts(agent: Agent, cfg: TrainConfig, iteration: int,
                     pool=None) -> RolloutBatch:
    """Play one episode per worker and assemble the update batch.

    Workers are deterministic functions of (run_seed, iteration, worker
    index), so a pool changes wall time but never the returned numbers.
    """
    tasks = [(agent, cfg.env, cfg.run_seed, iteration, w, cfg.max_episode_steps)
             for w in range(cfg.num_workers)]
    if pool is None:
        episodes = [_rollout_task(t) for t in tasks]
    else:
        episodes = pool.map(_rollout_task, tasks)

    all_advantages, all_returns, all_values = [], [], []
    for ep in episodes:
        values = agent.predict_value(ep.observations)
        if ep.terminated:
            last_value = 0.0
        else:
            last_value = float(agent.predict_value(ep.final_observation[None])[0])
        adv, ret = gae(ep.rewards, values, last_value,
                       cfg.discount, cfg.gae_lambda)
        all_advantages.append(adv)
        all_returns.append(ret)
        all_values.append(values)

    return RolloutBatch(
        observations=np.concatenate([ep.observations for ep in episodes]),
        actions=np.concatenate([ep.actions for ep in episodes]),
        log_probs=np.concatenate([ep.log_probs for ep in episodes]),
        advantages=np.concatenate(all_advantages),
        returns=np.concatenate(all_returns),
        values=np.concatenate(all_values),
        episode_returns=np.array([ep.episode_return for ep in episodes]),
        episode_lengths=np.array([ep.length for ep in episodes]),
    )


# ---------------------------------------------------------------------------
# Updates


def ppo_update(agent: Agent, optimizer: Adam, batch: RolloutBatch,
               cfg: TrainConfig, lr: float, rng: np.random.Generator) -> dict:
    """Run the clipped-surrogate epochs over one batch; returns statistics."""
    n = len(batch)
    if n == 0:
        raise ConfigError("cannot update from an empty batch")
    scaled_obs = batch.observations * agent.obs_scale
    advantages = batch.advantages.copy()
    advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

    stats = {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0,
             "clip_fraction": 0.0, "entropy": 0.0}
    updates = 0
    clip = cfg.clip_ratio
    for _ in range(cfg.update_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            obs_mb = scaled_obs[idx]
            adv_mb = advantages[idx]
            m = len(idx)

            logp, cache = agent.policy.log_prob(obs_mb, batch.actions[idx])
            ratio = np.exp(logp - batch.log_probs[idx])
            unclipped = ratio * adv_mb
            clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv_mb
            objective = np.minimum(unclipped, clipped)
            policy_loss = -objective.mean()

            # Ties take the clipped branch so clip=0 gives a zero gradient.
            inside = (ratio > 1.0 - clip) & (ratio < 1.0 + clip)
            active = (unclipped < clipped) | inside
            grad_logp = np.where(active, -ratio * adv_mb / m, 0.0)
            policy_grads = agent.policy.backward(
                cache, grad_logp, grad_entropy=-cfg.entropy_coef)

            value, value_cache = agent.value.forward(obs_mb)
            value_error = value - batch.returns[idx]
            value_loss = 0.5 * float(np.mean(value_error ** 2))
            value_grads = agent.value.backward(
                value_cache, cfg.value_coef * value_error / m)

            if not (math.isfinite(policy_loss) and math.isfinite(value_loss)):
                raise TrainingDivergedError(
                    "non-finite loss during update",
                    stats={"policy_loss": policy_loss, "value_loss": value_loss})
            optimizer.step(policy_grads + value_grads, lr=lr)
            np.clip(agent.policy.log_std, -5.0, 1.0, out=agent.policy.log_std)

            stats["policy_loss"] += policy_loss
            stats["value_loss"] += value_loss
            stats["kl"] += float(np.mean(batch.log_probs[idx] - logp))
            stats["clip_fraction"] += float(np.mean(np.abs(ratio - 1.0) > clip))
            updates += 1
    stats = {k: v / updates for k, v in stats.items()}
    stats["entropy"] = agent.policy.entropy()
    stats["updates"] = updates
    return stats


# ---------------------------------------------------------------------------
# The training loop


@dataclass
class TrainResult:
    agent: Agent
    curve: list
    env_steps: int
    iterations: int
    checkpoint_path: str | None = None
    curve_path: str | None = None


CURVE_COLUMNS = ("iteration", "env_steps", "episodes", "mean_return",
                 "std_return", "min_return", "max_return", "mean_length",
                 "policy_loss", "value_loss", "kl", "clip_fraction",
                 "entropy", "lr", "seconds")


def make_agent(cfg: TrainConfig) -> Agent:
    policy_hidden, value_hidden = cfg.resolved_hidden()
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([cfg.run_seed & 0xFFFFFFFF, 0x1A17])))
    return Agent(cfg.env.observation_dim, 8, policy_hidden, value_hidden,
                 rng, init_std=cfg.init_std,
                 action_bias=cfg.env.feedback_center())


def save_checkpoint(path: str, agent: Agent, optimizer: Adam | None,
                    cfg: TrainConfig, iteration: int, env_steps: int,
                    update_rng: np.random.Generator | None = None) -> None:
    rng_state = None
    if update_rng is not None:
        state = update_rng.bit_generator.state
        rng_state = {"name": state["bit_generator"],
                     "state": int(state["state"]["state"]),
                     "inc": int(state["state"]["inc"]),
                     "has_uint32": int(state["has_uint32"]),
                     "uinteger": int(state["uinteger"])}
    payload = {
        "agent": agent.to_state(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "train_config": train_config_to_dict(cfg),
        "iteration": iteration,
        "env_steps": env_steps,
        "update_rng": rng_state,
    }
    config_io.save_json(path, payload)


def _restore_rng(rng_state: dict | None) -> np.random.Generator | None:
    if rng_state is None:
        return None
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = {
        "bit_generator": rng_state["name"],
        "state": {"state": int(rng_state["state"]), "inc": int(rng_state["inc"])},
        "has_uint32": int(rng_state["has_uint32"]),
        "uinteger": int(rng_state["uinteger"]),
    }
    return rng


def load_checkpoint(path: str) -> tuple[Agent, TrainConfig, dict]:
    payload = config_io.load_json(path)
    agent = Agent.from_state(payload["agent"])
    cfg = train_config_from_dict(payload["train_config"])
    return agent, cfg, payload


def _write_curve(path: str, curve: list) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for row in curve:
            writer.writerow([row[c] for c in CURVE_COLUMNS])


_INT_CURVE_COLUMNS = ("iteration", "env_steps", "episodes")


def _load_curve(path: str) -> list:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append({k: (int(rec[k]) if k in _INT_CURVE_COLUMNS
                             else float(rec[k]))
                         for k in CURVE_COLUMNS if k in rec})
    return rows


def train(cfg: TrainConfig, output_dir: str | None = None,
          on_iteration=None, resume_from: str | None = None) -> TrainResult:
    """Full training run; optionally writes checkpoint/curve files.

    ``on_iteration``, when given, is called with each finished curve row.
    ``resume_from`` restores agent, optimizer, step counts, and rng state
    from an earlier checkpoint and continues toward cfg.total_steps.
    """
    cfg.validate()
    agent = make_agent(cfg)
    optimizer = Adam(agent.parameters, lr=cfg.learning_rate)
    update_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([cfg.run_seed & 0xFFFFFFFF, _SHUFFLE_TAG])))
    start_iteration = 0
    start_steps = 0
    prior_curve: list = []
    if resume_from is not None:
        prev_agent, prev_cfg, payload = load_checkpoint(resume_from)
        if prev_agent.policy.obs_dim != agent.policy.obs_dim:
            raise ConfigError("checkpoint observation dim does not match config")
        agent = prev_agent
        optimizer = Adam(agent.parameters, lr=cfg.learning_rate)
        if payload.get("optimizer") is not None:
            optimizer.load_state_dict(payload["optimizer"])
        restored = _restore_rng(payload.get("update_rng"))
        if restored is not None:
            update_rng = restored
        start_iteration = int(payload.get("iteration", 0))
        start_steps = int(payload.get("env_steps", 0))
        del prev_cfg
        # Carry the earlier learning curve over so the final CSV is complete.
        sibling = os.path.join(os.path.dirname(os.path.abspath(resume_from)),
                               "curve.csv")
        if os.path.exists(sibling):
            prior_curve = [row for row in _load_curve(sibling)
                           if row.get("iteration", 0) <= start_iteration]

    pool = None
    ctx = None
    if cfg.parallel and cfg.num_workers > 1:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:  # platform without fork: fall back to serial
            ctx = None
        if ctx is not None:
            pool = ctx.Pool(min(cfg.num_workers, max(1, os.cpu_count() or 1)))

    curve: list = prior_curve
    env_steps = start_steps
    iteration = start_iteration
    try:
        while env_steps < cfg.total_steps:
            started = time.monotonic()
            batch = collect_rollouts(agent, cfg, iteration, pool=pool)
            frac = 1.0 - env_steps / cfg.total_steps if cfg.lr_decay else 1.0
            lr = cfg.learning_rate * max(frac, 0.0)
            stats = ppo_update(agent, optimizer, batch, cfg, lr, update_rng)
            env_steps += int(batch.episode_lengths.sum())
            iteration += 1
            row = {
                "iteration": iteration,
                "env_steps": env_steps,
                "episodes": len(batch.episode_returns),
                "mean_return": float(batch.episode_returns.mean()),
                "std_return": float(batch.episode_returns.std()),
                "min_return": float(batch.episode_returns.min()),
                "max_return": float(batch.episode_returns.max()),
                "mean_length": float(batch.episode_lengths.mean()),
                "policy_loss": stats["policy_loss"],
                "value_loss": stats["value_loss"],
                "kl": stats["kl"],
                "clip_fraction": stats["clip_fraction"],
                "entropy": stats["entropy"],
                "lr": lr,
                "seconds": time.monotonic() - started,
            }
            curve.append(row)
            if on_iteration is not None:
                on_iteration(row)
    except BaseException:
        # leave a resumable checkpoint behind on interruption
        if output_dir is not None:
            _save_outputs(output_dir, agent, optimizer, cfg, iteration,
                          env_steps, update_rng, curve)
        raise
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    checkpoint_path = curve_path = None
    if output_dir is not None:
        checkpoint_path, curve_path = _save_outputs(
            output_dir, agent, optimizer, cfg, iteration, env_steps,
            update_rng, curve)
    return TrainResult(agent=agent, curve=curve, env_steps=env_steps,
                       iterations=iteration, checkpoint_path=checkpoint_path,
                       curve_path=curve_path)


def _save_outputs(output_dir, agent, optimizer, cfg, iteration, env_steps,
                  update_rng, curve) -> tuple[str, str]:
    os.makedirs(output_dir, exist_ok=True)
    checkpoint_path = os.path.join(output_dir, "checkpoint.json")
    curve_path = os.path.join(output_dir, "curve.csv")
    save_checkpoint(checkpoint_path, agent, optimizer, cfg, iteration,
                    env_steps, update_rng)
    _write_curve(curve_path, curve)
    return checkpoint_path, curve_path


def trot_train_config(**overrides) -> TrainConfig:
    # Short training episodes keep the iteration count useful at small step
    # budgets; the exploration std starts below the +-0.25 feedback clamp so
    # the behavior policy refines the gait instead of fighting its own noise.
    cfg = TrainConfig(env=trot_config(), max_episode_steps=150, init_std=0.15)
    return replace(cfg, **overrides)


def gallop_train_config(**overrides) -> TrainConfig:
    # From-scratch gait discovery: 250-step training episodes buy enough
    # update iterations out of a small step budget, and a wide, entropy-held
    # exploration std keeps the action distribution from collapsing onto a
    # standing posture before any locomotion appears.
    cfg = TrainConfig(env=gallop_config(), max_episode_steps=250,
                      entropy_coef=0.02, init_std=0.6)
    return replace(cfg, **overrides)
