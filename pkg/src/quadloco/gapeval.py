"""Reality-gap and robustness evaluation against a held-out simulator.

A frozen "pseudo-real" parameterization stands in for hardware: policies
are scored in the simulator they were trained in and again on the
pseudo-real plant, and the difference of mean returns is the gap. The
module also provides single-parameter sweeps, an all-parameter robustness
aggregate, per-episode gait metrics, and top-k checkpoint selection.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import randomize
from .dynamics import DynamicsParams
from .env import EnvConfig, EpisodeTrace, PerturbationConfig, QuadrupedEnv
from .errors import ConfigError

EVAL_EPISODES = 9  # 3 controllers x 3 runs protocol shape


@dataclass
class PseudoRealConfig:
    """The frozen stand-in for the physical robot.

    Values are deliberately off-nominal in the directions that stress the
    modeled transfer mechanisms: more observation delay, a weaker and
    saturating drivetrain, a slicker floor, a heavier rotational load.
    The 20 ms delay applies to the servo loop as well as the policy loop:
    a PD controller acting on stale motor state loses phase margin, which
    is what makes naively tuned gaits that look solid in a clean simulator
    oscillate and fall on this plant.
    """

    latency: float = 0.020
    pd_latency: float = 0.020
    battery_voltage: float = 14.5
    contact_friction: float = 0.7
    inertia_scale: float = 1.3
    motor_strength: float = 0.9
    saturating_curve: bool = True
    improved_actuator: bool = True  # False deploys on the constraint model
    extra_param_overrides: dict = field(default_factory=dict)

    def param_overrides(self) -> dict:
        overrides = {
            "latency": self.latency,
            "pd_latency": self.pd_latency,
            "battery_voltage": self.battery_voltage,
            "contact_friction_coefficient": self.contact_friction,
            "inertia_scale": self.inertia_scale,
            "motor_strength_scale": self.motor_strength,
        }
        overrides.update(self.extra_param_overrides)
        return overrides

    def differing_fields(self) -> list[str]:
        nominal = randomize.nominal_params()
        out = []
        for name, value in self.param_overrides().items():
            if not hasattr(nominal, name):
                raise ConfigError(f"unknown dynamics parameter {name!r}")
            if not math.isclose(float(getattr(nominal, name)), float(value),
                                rel_tol=0.0, abs_tol=1e-12):
                out.append(name)
        return out

    def validate(self) -> None:
        differing = self.differing_fields()
        if len(differing) < 3:
            raise ConfigError(
                "pseudo-real plant must differ from nominal in at least "
                f"three fields; differs only in {differing}")

    def apply(self, base: EnvConfig) -> EnvConfig:
        """Environment config for deploying a policy on this plant."""
        self.validate()
        overrides = dict(base.param_overrides)
        overrides.update(self.param_overrides())
        return replace(
            base,
            randomize=False,
            perturbation=PerturbationConfig(enabled=False),
            latency_enabled=True,
            actuator_model="dc" if self.improved_actuator else "constraint",
            torque_curve="saturating" if self.saturating_curve else base.torque_curve,
            param_overrides=overrides,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def deployment_config(train_env: EnvConfig) -> EnvConfig:
    """The training simulator with per-episode variation switched off.

    Keeps the actuator model, latency flag, and parameter overrides the
    policy was trained with; drops randomization and perturbations so the
    evaluation is deterministic given a seed.
    """
    return replace(train_env, randomize=False,
                   perturbation=PerturbationConfig(enabled=False))


# ---------------------------------------------------------------------------
# Policy evaluation


def _action_fn(policy):
    if policy is None:
        return lambda obs: np.zeros(8)
    if hasattr(policy, "deterministic_action"):
        return lambda obs: np.asarray(policy.deterministic_action(obs)).reshape(-1)
    if callable(policy):
        return policy
    raise ConfigError("policy must be None, a callable, or expose "
                      "deterministic_action()")


def _check_dims(policy, cfg: EnvConfig) -> None:
    obs_dim = getattr(getattr(policy, "policy", None), "obs_dim", None)
    if obs_dim is not None and obs_dim != cfg.observation_dim:
        raise ConfigError(
            f"policy expects {obs_dim}-D observations but the environment "
            f"produces {cfg.observation_dim}-D")


@dataclass
class EvalResult:
    returns: np.ndarray
    lengths: np.ndarray
    mean: float
    std: float
    stderr: float
    success_rate: float
    traces: list

    def to_dict(self) -> dict:
        return {
            "returns": self.returns.tolist(),
            "lengths": self.lengths.tolist(),
            "mean": self.mean,
            "std": self.std,
            "stderr": self.stderr,
            "success_rate": self.success_rate,
        }


def evaluate_policy(policy, env_cfg: EnvConfig, n_episodes: int = EVAL_EPISODES,
                    seed: int = 0, keep_traces: bool = True) -> EvalResult:
    """Deterministic-mean rollouts of a policy; no action sampling."""
    if n_episodes <= 0:
        raise ConfigError("n_episodes must be positive")
    _check_dims(policy, env_cfg)
    act = _action_fn(policy)
    env = QuadrupedEnv(env_cfg, seed=seed)
    returns, lengths, traces = [], [], []
    for _ in range(n_episodes):
        obs = env.reset()
        total = 0.0
        while True:
            result = env.step(act(obs))
            total += result.reward
            obs = result.observation
            if result.done:
                break
        returns.append(total)
        lengths.append(env.step_count)
        if keep_traces:
            traces.append(env.trace)
    returns = np.asarray(returns)
    lengths = np.asarray(lengths)
    return EvalResult(
        returns=returns,
        lengths=lengths,
        mean=float(returns.mean()),
        std=float(returns.std()),
        stderr=float(returns.std() / math.sqrt(n_episodes)),
        success_rate=float(np.mean(lengths >= env_cfg.episode_cap)),
        traces=traces,
    )


# ---------------------------------------------------------------------------
# The gap metric


@dataclass
class GapReport:
    sim_mean: float
    sim_stderr: float
    pseudo_real_mean: float
    pseudo_real_stderr: float
    gap: float
    sim_returns: list
    pseudo_real_returns: list
    sim_success_rate: float
    pseudo_real_success_rate: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def reality_gap(policy, sim_cfg: EnvConfig,
                pseudo_real: PseudoRealConfig | EnvConfig,
                n_episodes: int = EVAL_EPISODES, seed: int = 0) -> GapReport:
    """Evaluate in both plants with matched episode counts and seeds."""
    if isinstance(pseudo_real, PseudoRealConfig):
        pseudo_cfg = pseudo_real.apply(sim_cfg)
    else:
        pseudo_cfg = pseudo_real
    sim = evaluate_policy(policy, sim_cfg, n_episodes, seed, keep_traces=False)
    real = evaluate_policy(policy, pseudo_cfg, n_episodes, seed, keep_traces=False)
    return GapReport(
        sim_mean=sim.mean,
        sim_stderr=sim.stderr,
        pseudo_real_mean=real.mean,
        pseudo_real_stderr=real.stderr,
        gap=sim.mean - real.mean,
        sim_returns=sim.returns.tolist(),
        pseudo_real_returns=real.returns.tolist(),
        sim_success_rate=sim.success_rate,
        pseudo_real_success_rate=real.success_rate,
    )


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class SweepRow:
    value: float
    mean: float
    std: float
    success_rate: float


@dataclass
class SweepResult:
    parameter: str
    rows: list

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.rows])

    def means(self) -> np.ndarray:
        return np.array([r.mean for r in self.rows])

    def write_csv(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["parameter_value", "mean", "std", "success_rate"])
            for row in self.rows:
                writer.writerow([row.value, row.mean, row.std, row.success_rate])


def sweep_values(parameter: str, n_values: int = 10) -> np.ndarray:
    """Evenly spaced test values spanning the parameter's training range."""
    if parameter not in randomize.PARAMETER_NAMES:
        raise ConfigError(
            f"unknown sweep parameter {parameter!r}; valid names: "
            f"{', '.join(randomize.PARAMETER_NAMES)}")
    lo, hi = getattr(randomize.RandomizationRanges(), parameter)
    return np.linspace(lo, hi, n_values)


def parameter_sweep(policy, env_cfg: EnvConfig, parameter: str,
                    n_values: int = 10, n_episodes: int = 3,
                    seed: int = 0) -> SweepResult:
    """Evaluate at evenly spaced values of one parameter, others unchanged."""
    values = sweep_values(parameter, n_values)
    field_name = dict(randomize.PARAMETER_FIELDS)[parameter]
    base = deployment_config(env_cfg)
    rows = []
    for value in values:
        overrides = dict(base.param_overrides)
        overrides[field_name] = float(value)
        cfg = replace(base, param_overrides=overrides)
        stats = evaluate_policy(policy, cfg, n_episodes, seed, keep_traces=False)
        rows.append(SweepRow(value=float(value), mean=stats.mean,
                             std=stats.std, success_rate=stats.success_rate))
    return SweepResult(parameter=parameter, rows=rows)


@dataclass
class RobustnessReport:
    mean: float
    std: float
    sweeps: dict

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "sweeps": {name: [dataclasses.asdict(r) for r in sweep.rows]
                       for name, sweep in self.sweeps.items()},
        }


def robustness_report(policy, env_cfg: EnvConfig, parameters=None,
                      n_values: int = 10, n_episodes: int = 3,
                      seed: int = 0) -> RobustnessReport:
    """Mean and spread of returns across every sweep's test environments."""
    if parameters is None:
        parameters = randomize.PARAMETER_NAMES
    sweeps = {}
    per_env_means = []
    for name in parameters:
        sweep = parameter_sweep(policy, env_cfg, name, n_values=n_values,
                                n_episodes=n_episodes, seed=seed)
        sweeps[name] = sweep
        per_env_means.extend(sweep.means())
    per_env_means = np.asarray(per_env_means)
    return RobustnessReport(mean=float(per_env_means.mean()),
                            std=float(per_env_means.std()),
                            sweeps=sweeps)


# ---------------------------------------------------------------------------
# Gait metrics and controller selection


def gait_metrics(trace: EpisodeTrace) -> dict:
    """Speed, average mechanical power, and distance along the task direction."""
    if len(trace) == 0:
        raise ConfigError("cannot compute gait metrics from an empty trace")
    duration = float(trace.times[-1])
    displacement = np.asarray(trace.base_positions[-1]) - trace.initial_position
    distance = float(np.dot(displacement, trace.desired_direction))
    return {
        "speed": distance / duration,
        "avg_mech_power": float(np.mean(trace.powers)),
        "distance": distance,
        "duration": duration,
    }


@dataclass
class ScoredCheckpoint:
    seed: int
    sim_return: float
    path: str | None = None


def select_top_k(scored: list, k: int = 3) -> list:
    """Best k by simulated return; ties go to the lower seed index."""
    entries = []
    for item in scored:
        if isinstance(item, ScoredCheckpoint):
            entries.append(item)
        else:
            seed, sim_return = item[0], item[1]
            path = item[2] if len(item) > 2 else None
            entries.append(ScoredCheckpoint(int(seed), float(sim_return), path))
    if len(entries) < k:
        raise ConfigError(f"need at least {k} checkpoints, got {len(entries)}")
    return sorted(entries, key=lambda e: (-e.sim_return, e.seed))[:k]
