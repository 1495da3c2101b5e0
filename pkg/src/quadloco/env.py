"""The locomotion environment: action composition, reward, termination.

Each control step composes the commanded leg poses from an open-loop
reference plus a bounded feedback term, converts them to motor targets,
runs the inner servo loop and physics substeps, and returns a possibly
delayed, noise-corrupted observation. Episodes end at a fixed step cap or
when the base tilts past the limit.

Control flow per step (control_step seconds, in 1 ms physics substeps):

  feedback -> clamp -> + open-loop -> clamp -> leg-space action
  -> motor angle targets -> PD servo (delayed motor state) -> PWM
  -> DC motor torque (instantaneous back EMF) -> rigid-body substeps

The reward is forward progress along the desired direction minus a
weighted energy term w * dt * sum_i |tau_i * qdot_i|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import actuator, randomize, sensing
from .dynamics import (
    NUM_MOTORS,
    SUBSTEP,
    DynamicsParams,
    RobotState,
    base_tilt,
    compute_contacts,
    quat_roll_pitch,
    quat_to_matrix,
    standing_state,
    step_dynamics,
)
from .errors import ConfigError, ProtocolError

# Leg-space action layout: (swing, extension) per leg, legs ordered
# front-left, back-left, front-right, back-right.
SWING_CHANNELS = (0, 2, 4, 6)
EXTENSION_CHANNELS = (1, 3, 5, 7)

# Diagonal pairs for the trot reference: front-left with back-right,
# back-left with front-right (the second pair runs half a period out of
# phase).
_TROT_PAIR_A = (0, 3)
_TROT_PAIR_B = (1, 2)

TROT_SWING_AMPLITUDE = 0.3
TROT_EXTENSION_AMPLITUDE = 0.35
TROT_EXTENSION_OFFSET = 2.0
TROT_ANGULAR_FREQUENCY = 4.0 * math.pi  # rad/s -> 0.5 s period


@dataclass
class PerturbationConfig:
    """Periodic random pushes on the base during training.

    A burst starts every ``period_steps`` control steps (the first at step
    ``period_steps``), lasts ``duration_steps`` steps, and applies a force
    with one random direction and magnitude for the whole burst.
    """

    enabled: bool = False
    period_steps: int = 200
    duration_steps: int = 10
    magnitude_range: tuple[float, float] = (130.0, 220.0)


@dataclass
class OpenLoopTable:
    """Custom periodic open-loop signal given as (time, action) knots."""

    times: tuple[float, ...]
    actions: tuple[tuple[float, ...], ...]
    period: float

    def value(self, t: float) -> np.ndarray:
        tt = math.fmod(t, self.period)
        times = np.asarray(self.times)
        table = np.asarray(self.actions)
        return np.array([np.interp(tt, times, table[:, k])
                         for k in range(table.shape[1])])


@dataclass
class EnvConfig:
    """Everything that defines one environment variant."""

    observation_space: str = "large"  # "small" (4-D IMU) or "large" (12-D)
    swing_bounds: tuple[float, float] = (-0.5, 0.5)
    extension_bounds: tuple[float, float] = (math.pi / 2 - 0.5, math.pi / 2 + 0.5)
    feedback_swing_bounds: tuple[float, float] = (-0.5, 0.5)
    feedback_extension_bounds: tuple[float, float] = (math.pi / 2 - 0.5, math.pi / 2 + 0.5)
    open_loop_signal: str = "zero"  # "zero" | "trot" | "table"
    open_loop_table: OpenLoopTable | None = None
    reward_weight: float = 0.008
    desired_direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    episode_cap: int = 1000
    tilt_limit: float = 0.5
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    randomize: bool = False
    param_overrides: dict = field(default_factory=dict)
    range_overrides: dict = field(default_factory=dict)
    actuator_model: str = "dc"  # "dc" | "constraint"
    latency_enabled: bool = True
    torque_curve: str = "saturating"  # "saturating" | "linear"
    motor_kp: float = 1.2
    motor_kd: float = 0.02
    torque_limit: float = 3.5  # constraint-model clamp, Nm
    pd_period: float = 0.003   # inner servo update period, s
    initial_extension: float = 2.0
    initial_jitter: float = 0.05  # rad, uniform motor-angle jitter at reset

    def validate(self) -> None:
        if self.observation_space not in ("small", "large"):
            raise ConfigError(f"unknown observation space {self.observation_space!r}")
        if self.actuator_model not in ("dc", "constraint"):
            raise ConfigError(f"unknown actuator model {self.actuator_model!r}")
        if self.torque_curve not in ("saturating", "linear"):
            raise ConfigError(f"unknown torque curve {self.torque_curve!r}")
        if self.open_loop_signal not in ("zero", "trot", "table"):
            raise ConfigError(f"unknown open-loop signal {self.open_loop_signal!r}")
        if self.open_loop_signal == "table" and self.open_loop_table is None:
            raise ConfigError("open_loop_signal 'table' requires open_loop_table")
        for name in ("swing_bounds", "extension_bounds",
                     "feedback_swing_bounds", "feedback_extension_bounds"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} has lower > upper")
        if self.episode_cap <= 0 or self.tilt_limit <= 0:
            raise ConfigError("episode cap and tilt limit must be positive")
        nd = np.linalg.norm(self.desired_direction)
        if not math.isfinite(nd) or nd == 0:
            raise ConfigError("desired direction must be a nonzero vector")
        if self.perturbation.period_steps <= 0 or self.perturbation.duration_steps <= 0:
            raise ConfigError("perturbation periods must be positive")
        if self.perturbation.duration_steps > self.perturbation.period_steps:
            raise ConfigError("perturbation burst longer than its period")

    @property
    def observation_dim(self) -> int:
        return (sensing.SMALL_OBSERVATION_DIM if self.observation_space == "small"
                else sensing.LARGE_OBSERVATION_DIM)

    def feedback_center(self) -> np.ndarray:
        """Midpoint of the feedback clamp range, per action channel.

        Policies initialized to emit this value start exploring from the
        center of the reachable action set instead of an edge.
        """
        center = np.empty(NUM_MOTORS)
        center[list(SWING_CHANNELS)] = 0.5 * sum(self.feedback_swing_bounds)
        center[list(EXTENSION_CHANNELS)] = 0.5 * sum(self.feedback_extension_bounds)
        return center

    def resolve_params(self) -> DynamicsParams:
        """Nominal parameters with this config's overrides applied."""
        base = randomize.nominal_params()
        if self.param_overrides:
            known = {f for f in vars(base)}
            bad = set(self.param_overrides) - known
            if bad:
                raise ConfigError(f"unknown parameter overrides: {sorted(bad)}")
            base = replace(base, **self.param_overrides)
        base.validate()
        return base

    def resolve_ranges(self) -> randomize.RandomizationRanges:
        ranges = randomize.RandomizationRanges()
        if self.range_overrides:
            known = set(ranges.as_dict())
            bad = set(self.range_overrides) - known
            if bad:
                raise ConfigError(f"unknown range overrides: {sorted(bad)}")
            ranges = replace(ranges, **{k: tuple(v) for k, v in self.range_overrides.items()})
        ranges.validate()
        return ranges


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


@dataclass
class EpisodeTrace:
    """Per-step log of one episode, used for metrics and reports."""

    times: list = field(default_factory=list)
    base_positions: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    torques: list = field(default_factory=list)
    motor_velocities: list = field(default_factory=list)
    powers: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    tilts: list = field(default_factory=list)
    contact_flags: list = field(default_factory=list)
    desired_direction: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    initial_position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __len__(self) -> int:
        return len(self.times)

    def csv_rows(self):
        header = (["time", "x", "y", "z"]
                  + [f"action_{i}" for i in range(NUM_MOTORS)]
                  + [f"torque_{i}" for i in range(NUM_MOTORS)]
                  + ["power", "reward", "tilt"])
        yield header
        for i in range(len(self.times)):
            yield ([self.times[i], *self.base_positions[i], *self.actions[i],
                    *self.torques[i], self.powers[i], self.rewards[i], self.tilts[i]])


# ---------------------------------------------------------------------------
# Pure pieces of the control loop


def open_loop_trot(t: float) -> np.ndarray:
    """Sine reference for a trot at time t (leg-space 8-vector).

    One diagonal leg pair follows s(t) = 0.3 sin(4 pi t),
    e(t) = 0.35 sin(4 pi t) + 2; the other pair runs half a period out of
    phase.
    """
    action = np.empty(NUM_MOTORS)
    for legs, phase in ((_TROT_PAIR_A, 0.0), (_TROT_PAIR_B, math.pi)):
        wave = math.sin(TROT_ANGULAR_FREQUENCY * t + phase)
        s = TROT_SWING_AMPLITUDE * wave
        e = TROT_EXTENSION_AMPLITUDE * wave + TROT_EXTENSION_OFFSET
        for leg in legs:
            action[2 * leg] = s
            action[2 * leg + 1] = e
    return action


def open_loop_action(t: float, config: EnvConfig) -> np.ndarray:
    if config.open_loop_signal == "trot":
        return open_loop_trot(t)
    if config.open_loop_signal == "table":
        return config.open_loop_table.value(t)
    return np.zeros(NUM_MOTORS)


def compose_action(t: float, feedback: np.ndarray, config: EnvConfig) -> np.ndarray:
    """Clamp feedback to its bounds, add the open-loop reference, and clamp
    the sum to the global leg-space bounds."""
    fb = np.asarray(feedback, dtype=float)
    if not np.all(np.isfinite(fb)):
        raise ConfigError("feedback action contains non-finite values")
    out = open_loop_action(t, config).copy()
    sw, ex = list(SWING_CHANNELS), list(EXTENSION_CHANNELS)
    out[sw] += np.clip(fb[sw], *config.feedback_swing_bounds)
    out[ex] += np.clip(fb[ex], *config.feedback_extension_bounds)
    out[sw] = np.clip(out[sw], *config.swing_bounds)
    out[ex] = np.clip(out[ex], *config.extension_bounds)
    return out


def reward(p_n: np.ndarray, p_prev: np.ndarray, d: np.ndarray,
           torques: np.ndarray, motor_velocities: np.ndarray,
           dt: float, w: float) -> float:
    """Forward progress along d minus the weighted energy expenditure.

    The energy term sums |tau_i * qdot_i| per motor so that positive and
    negative mechanical work cannot cancel across motors.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    progress = float(np.dot(np.asarray(p_n) - np.asarray(p_prev), d))
    power = float(np.sum(np.abs(np.asarray(torques) * np.asarray(motor_velocities))))
    return progress - w * dt * power


def perturbation_for_step(step: int, seed: int,
                          config: PerturbationConfig) -> np.ndarray | None:
    """Perturbation force for a control step, or None outside bursts.

    The direction (uniform on the sphere) and magnitude (uniform in range)
    are drawn once per burst from a generator keyed on (seed, burst index),
    so every step of a burst sees the same force.
    """
    if not config.enabled:
        return None
    burst = step // config.period_steps
    if burst < 1 or step - burst * config.period_steps >= config.duration_steps:
        return None
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, burst])))
    direction = rng.normal(size=3)
    norm = np.linalg.norm(direction)
    while norm < 1e-12:
        direction = rng.normal(size=3)
        norm = np.linalg.norm(direction)
    magnitude = rng.uniform(*config.magnitude_range)
    return magnitude * direction / norm


# ---------------------------------------------------------------------------
# Environment


class QuadrupedEnv:
    """One simulated robot with its sensing pipeline and episode bookkeeping.

    Instances are independent; create one per rollout worker. All
    randomness flows from the constructor seed, so identical seeds and
    action sequences reproduce identical episodes bit for bit.
    """

    def __init__(self, config: EnvConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = int(seed)
        self._episode_index = -1
        self._base_params = config.resolve_params()
        self._ranges = config.resolve_ranges()
        self.params: DynamicsParams | None = None
        self.state: RobotState | None = None
        self.trace: EpisodeTrace | None = None
        self.done = True

    # -- episode setup -----------------------------------------------------

    def reset(self) -> np.ndarray:
        """Start a new episode and return its first observation."""
        self._episode_index += 1
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self._episode_index])
        params_seed, jitter_seed, noise_seed, perturb_seed = ss.spawn(4)
        self._noise_rng = np.random.Generator(np.random.PCG64(noise_seed))
        self._perturb_seed = int(perturb_seed.generate_state(1)[0])

        if self.config.randomize:
            rng = np.random.Generator(np.random.PCG64(params_seed))
            self.params = randomize.sample_params(self._ranges, rng, self._base_params)
        else:
            self.params = self._base_params.copy()

        jitter_rng = np.random.Generator(np.random.PCG64(jitter_seed))
        state = standing_state(self.params, extension=self.config.initial_extension)
        jitter = self.config.initial_jitter
        if jitter > 0:
            state.motor_angles = state.motor_angles + jitter_rng.uniform(
                -jitter, jitter, NUM_MOTORS)
            lo, hi = self.params.joint_limits
            state.motor_angles = np.clip(state.motor_angles, lo, hi)
        self.state = state

        self._n_substeps = max(1, int(round(self.params.control_step / SUBSTEP)))
        self._control_dt = self._n_substeps * SUBSTEP
        self._pd_substeps = max(1, int(round(self.config.pd_period / SUBSTEP)))
        self._substep_index = 0
        self._v_pwm = np.zeros(NUM_MOTORS)
        self.step_count = 0
        self.done = False

        horizon = max(0.040, self.params.latency)
        cap = int(math.ceil(horizon / max(self.params.control_step, SUBSTEP))) + 8
        self._obs_buffer = sensing.LatencyBuffer(capacity=cap)
        self._motor_buffer = sensing.LatencyBuffer(
            capacity=int(math.ceil(self.params.pd_latency / SUBSTEP)) + 8)
        self._obs_buffer.record_observation(state.time, self._true_observation())
        self._motor_buffer.record_observation(
            state.time, np.concatenate([state.motor_angles, state.motor_velocities]))

        d = np.asarray(self.config.desired_direction, dtype=float)
        self._direction = d / np.linalg.norm(d)
        self.trace = EpisodeTrace(desired_direction=self._direction.copy(),
                                  initial_position=state.base_position.copy())
        self._curve = (actuator.TorqueCurrentCurve.saturating(self.params.torque_constant)
                       if self.config.torque_curve == "saturating"
                       else actuator.TorqueCurrentCurve.linear(self.params.torque_constant))
        return self._delayed_corrupted_observation()

    # -- observation pipeline ----------------------------------------------

    def _true_observation(self) -> np.ndarray:
        state = self.state
        roll, pitch = quat_roll_pitch(state.base_orientation)
        rot = quat_to_matrix(state.base_orientation)
        omega_body = rot.T @ state.base_angular_velocity
        imu = np.array([roll, pitch, omega_body[0], omega_body[1]])
        if self.config.observation_space == "small":
            return imu
        return np.concatenate([imu, state.motor_angles])

    def _delayed_corrupted_observation(self) -> np.ndarray:
        latency = self.params.latency if self.config.latency_enabled else 0.0
        obs = self._obs_buffer.delayed_observation(self.state.time, latency)
        return sensing.apply_imu_corruption(
            obs, self.params.imu_bias, self.params.imu_noise_std, self._noise_rng)

    # -- control loop ------------------------------------------------------

    def step(self, feedback_action: np.ndarray) -> StepResult:
        """Advance one control step under the given feedback action."""
        if self.done:
            raise ProtocolError("episode is finished; call reset() first")
        config, params, state = self.config, self.params, self.state

        action = compose_action(state.time, feedback_action, config)
        targets = actuator.leg_action_to_motor_targets(action)
        targets = np.clip(targets, *params.joint_limits)
        cmd = actuator.MotorCommand(desired_angle=targets,
                                    kp=config.motor_kp, kd=config.motor_kd)

        force = perturbation_for_step(self.step_count, self._perturb_seed,
                                      config.perturbation)

        p_prev = state.base_position.copy()
        torque_sum = np.zeros(NUM_MOTORS)
        power_sum = 0.0
        pd_latency = params.pd_latency if config.latency_enabled else 0.0
        constraint_mode = config.actuator_model == "constraint"

        for _ in range(self._n_substeps):
            if constraint_mode:
                torques = actuator.constraint_actuator_torque(
                    cmd, state.motor_angles, state.motor_velocities,
                    params.motor_rotor_inertia, SUBSTEP,
                    torque_limit=config.torque_limit)
            else:
                if self._substep_index % self._pd_substeps == 0:
                    delayed = self._motor_buffer.delayed_observation(
                        state.time, pd_latency)
                    self._v_pwm = actuator.pd_pwm(
                        cmd, delayed[:NUM_MOTORS], delayed[NUM_MOTORS:],
                        params.battery_voltage)
                torques = actuator.dc_motor_torque(
                    self._v_pwm, state.motor_velocities, params.torque_constant,
                    params.armature_resistance, self._curve,
                    params.motor_strength_scale)

            state = step_dynamics(state, torques, force, params, SUBSTEP)
            self._motor_buffer.record_observation(
                state.time,
                np.concatenate([state.motor_angles, state.motor_velocities]))
            self._substep_index += 1
            torque_sum += torques
            power_sum += float(np.sum(np.abs(torques * state.motor_velocities)))

        self.state = state
        self.step_count += 1
        self._obs_buffer.record_observation(state.time, self._true_observation())
        observation = self._delayed_corrupted_observation()

        mean_power = power_sum / self._n_substeps
        progress = float(np.dot(state.base_position - p_prev, self._direction))
        step_reward = progress - config.reward_weight * self._control_dt * mean_power

        tilt = base_tilt(state)
        self.done = (self.step_count >= config.episode_cap) or (tilt > config.tilt_limit)
        contacts = compute_contacts(state, params)

        mean_torques = torque_sum / self._n_substeps
        trace = self.trace
        trace.times.append(state.time)
        trace.base_positions.append(state.base_position.copy())
        trace.actions.append(action)
        trace.torques.append(mean_torques)
        trace.motor_velocities.append(state.motor_velocities.copy())
        trace.powers.append(mean_power)
        trace.rewards.append(step_reward)
        trace.tilts.append(tilt)
        trace.contact_flags.append(contacts.in_contact.copy())

        info = {
            "base_position": state.base_position.copy(),
            "torques": mean_torques,
            "motor_velocities": state.motor_velocities.copy(),
            "contact_flags": contacts.in_contact.copy(),
            "tilt": tilt,
            "time": state.time,
        }
        return StepResult(observation=observation, reward=step_reward,
                          done=self.done, info=info)


# ---------------------------------------------------------------------------
# Task presets


def gallop_config(**overrides) -> EnvConfig:
    """Learn-from-scratch setup: no reference, wide feedback bounds."""
    cfg = EnvConfig(
        observation_space="large",
        open_loop_signal="zero",
        swing_bounds=(-0.5, 0.5),
        extension_bounds=(math.pi / 2 - 0.5, math.pi / 2 + 0.5),
        feedback_swing_bounds=(-0.5, 0.5),
        feedback_extension_bounds=(math.pi / 2 - 0.5, math.pi / 2 + 0.5),
        initial_extension=math.pi / 2,
    )
    return replace(cfg, **overrides)


def trot_config(**overrides) -> EnvConfig:
    """User-specified trot: sine reference with tight feedback bounds."""
    cfg = EnvConfig(
        observation_space="small",
        open_loop_signal="trot",
        swing_bounds=(-0.55, 0.55),
        extension_bounds=(1.4, 2.6),
        feedback_swing_bounds=(-0.25, 0.25),
        feedback_extension_bounds=(-0.25, 0.25),
        initial_extension=TROT_EXTENSION_OFFSET,
    )
    return replace(cfg, **overrides)
