"""Observation construction, latency buffering, and latency calibration.

Sensor readings reach the controller late. To model this, every true
observation is timestamped and pushed into a bounded history; when the
controller asks for "the current" observation, the buffer answers with a
linear interpolation of the two records bracketing (now - latency). The
same mechanism serves both the fast inner servo loop and the slower policy
loop, which carry different latencies.

The spike calibration drives a one-step PWM pulse through a single-motor
plant and reports how long the resulting movement takes to appear in the
delayed observation stream, mirroring how the delay would be measured on
hardware.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from . import actuator
from .dynamics import SUBSTEP, DynamicsParams
from .errors import CalibrationError, ConfigError, OrderingError

# Observation vector layout: roll, pitch, roll rate, pitch rate, then the
# eight motor angles when the large observation space is active.
IMU_CHANNELS = 4
SMALL_OBSERVATION_DIM = 4
LARGE_OBSERVATION_DIM = 12

# Timestamps closer than this to a stored record snap to it exactly, so a
# query delayed by a whole number of steps reproduces the old record
# bit-for-bit despite accumulated floating-point time.
_TIME_SNAP = 1e-12


@dataclass
class ObservationRecord:
    timestamp: float
    values: np.ndarray


class LatencyBuffer:
    """Bounded FIFO of timestamped observations with interpolated lookup."""

    def __init__(self, capacity: int):
        if capacity < 2:
            raise ConfigError("latency buffer capacity must be >= 2")
        self.capacity = capacity
        self._times: list[float] = []
        self._values: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._times)

    def record_observation(self, t: float, values: np.ndarray) -> None:
        """Append a record; evicts the oldest when over capacity.

        Raises OrderingError if t is not strictly greater than the newest
        stored timestamp.
        """
        if self._times and t <= self._times[-1]:
            raise OrderingError(
                f"timestamp {t} not after newest record {self._times[-1]}")
        self._times.append(t)
        self._values.append(np.asarray(values, dtype=float).copy())
        if len(self._times) > self.capacity:
            self._times.pop(0)
            self._values.pop(0)

    def delayed_observation(self, t_now: float, latency: float) -> np.ndarray:
        """Observation as seen through the given latency at time t_now.

        Interpolates linearly between the records bracketing
        t_now - latency; query times outside the stored range clamp to the
        oldest or newest record rather than extrapolating.
        """
        if not self._times:
            raise OrderingError("latency buffer is empty")
        if latency < 0:
            raise ConfigError("latency must be >= 0")
        t_query = t_now - latency
        times = self._times
        if t_query <= times[0]:
            return self._values[0].copy()
        if t_query >= times[-1]:
            return self._values[-1].copy()
        hi = bisect.bisect_right(times, t_query)
        lo = hi - 1
        if t_query - times[lo] < _TIME_SNAP:
            return self._values[lo].copy()
        if times[hi] - t_query < _TIME_SNAP:
            return self._values[hi].copy()
        alpha = (t_query - times[lo]) / (times[hi] - times[lo])
        return (1.0 - alpha) * self._values[lo] + alpha * self._values[hi]


def record_observation(buffer: LatencyBuffer, t: float, obs: np.ndarray) -> LatencyBuffer:
    buffer.record_observation(t, obs)
    return buffer


def delayed_observation(buffer: LatencyBuffer, t_now: float, latency: float) -> np.ndarray:
    return buffer.delayed_observation(t_now, latency)


def apply_imu_corruption(obs: np.ndarray, bias: float, noise_std: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Add the episode-constant bias and fresh Gaussian noise to the four
    IMU channels; motor-angle channels pass through untouched."""
    if noise_std < 0:
        raise ConfigError("noise std must be >= 0")
    out = np.asarray(obs, dtype=float).copy()
    out[:IMU_CHANNELS] += bias + rng.normal(0.0, noise_std, IMU_CHANNELS)
    return out


# ---------------------------------------------------------------------------
# Spike-based latency measurement


@dataclass
class CalibrationPlant:
    """Single-motor plant for the spike latency measurement.

    The motor angle is reported through a latency buffer configured with the
    injected delay; the measurement must recover that delay from the outside.
    """

    latency: float
    control_step: float = 0.006
    params: DynamicsParams = field(default_factory=DynamicsParams)
    spike_voltage: float = 4.0
    movement_threshold: float = 1e-7
    horizon: float = 0.5


def measure_latency(plant: CalibrationPlant) -> float:
    """Measure the observation delay of the plant with a PWM spike.

    A PWM pulse lasting one control step starts at t = 0; the true motor
    angle is recorded every substep and monitored through the plant's
    latency buffer. The returned value is the time at which the reported
    angle first deviates from rest, which recovers the injected latency to
    within one recording substep.

    Raises CalibrationError when no movement is reported within the horizon.
    """
    if plant.latency < 0:
        raise ConfigError("injected latency must be >= 0")
    params = plant.params
    curve = actuator.TorqueCurrentCurve.saturating(params.torque_constant)
    capacity = int(math.ceil(plant.latency / SUBSTEP)) + 64
    buffer = LatencyBuffer(capacity)

    q, qd, t = 0.0, 0.0, 0.0
    buffer.record_observation(t, np.array([q]))
    n_steps = int(round(plant.horizon / SUBSTEP))
    for _ in range(n_steps):
        v_pwm = plant.spike_voltage if t < plant.control_step else 0.0
        torque = float(actuator.dc_motor_torque(
            v_pwm, qd, params.torque_constant, params.armature_resistance,
            curve, params.motor_strength_scale))
        qd += SUBSTEP * torque / params.motor_rotor_inertia
        q += SUBSTEP * qd
        t += SUBSTEP
        buffer.record_observation(t, np.array([q]))
        reported = buffer.delayed_observation(t, plant.latency)
        if abs(reported[0]) > plant.movement_threshold:
            return t
    raise CalibrationError(
        f"no motor movement reported within {plant.horizon} s")
