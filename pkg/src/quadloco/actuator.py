"""Motor models and the leg-space/motor-space mapping.

Two actuator models are provided. The DC motor model runs a PD servo whose
output scales the battery voltage into a PWM drive; armature current follows
from the drive voltage minus back EMF, and torque follows from a piecewise
linear torque-current curve that saturates at high current. The constraint
model instead solves an implicit PD against the isolated rotor, which keeps
the motor angle and velocity on the commanded target at the end of every
step. The constraint model is artificially stable at large gains and exists
as the baseline for transfer-gap experiments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

_DEFAULT_SATURATION_KNEE_A = 20.0
_DEFAULT_SATURATION_MAX_A = 40.0


def leg_to_motor(swing, extension):
    """Map a leg pose (s, e) to the pair of motor angles (theta1, theta2).

    Extension rotates both motors together; swing rotates them in opposite
    directions: theta1 = e + s, theta2 = e - s.
    """
    return extension + swing, extension - swing


def motor_to_leg(theta1, theta2):
    """Inverse of leg_to_motor: s = (theta1 - theta2)/2, e = (theta1 + theta2)/2."""
    return 0.5 * (theta1 - theta2), 0.5 * (theta1 + theta2)


def leg_action_to_motor_targets(action: np.ndarray) -> np.ndarray:
    """Convert an 8-vector leg-space action to 8 motor angle targets.

    The action is laid out per leg as (s, e) pairs in the order front-left,
    back-left, front-right, back-right; motor targets use the same leg order
    with (theta1, theta2) pairs.
    """
    a = np.asarray(action, dtype=float).reshape(4, 2)
    targets = np.empty_like(a)
    targets[:, 0] = a[:, 1] + a[:, 0]
    targets[:, 1] = a[:, 1] - a[:, 0]
    return targets.reshape(8)


def motor_angles_to_leg(angles: np.ndarray) -> np.ndarray:
    """Convert 8 motor angles to the 8-vector leg-space layout."""
    q = np.asarray(angles, dtype=float).reshape(4, 2)
    out = np.empty_like(q)
    out[:, 0] = 0.5 * (q[:, 0] - q[:, 1])
    out[:, 1] = 0.5 * (q[:, 0] + q[:, 1])
    return out.reshape(8)


@dataclass
class MotorCommand:
    """Position-control target and PD gains for one motor (or all eight).

    The desired velocity is fixed at zero in every built-in controller; the
    field exists so the PD law reads naturally.
    """

    desired_angle: float | np.ndarray
    kp: float = 1.2
    kd: float = 0.02
    desired_velocity: float = 0.0

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise ConfigError("PD gains must be >= 0")


@dataclass
class TorqueCurrentCurve:
    """Piecewise linear torque-current relation, symmetric about zero.

    Knots start at (0, 0) with strictly increasing currents and
    non-decreasing torques; beyond the last knot the torque is flat
    (fully saturated). The first segment slope is the linear-regime torque
    constant.
    """

    currents: np.ndarray = field(default_factory=lambda: np.array([0.0, 1000.0]))
    torques: np.ndarray = field(default_factory=lambda: np.array([0.0, 100.0]))

    def __post_init__(self):
        self.currents = np.asarray(self.currents, dtype=float)
        self.torques = np.asarray(self.torques, dtype=float)
        if self.currents.shape != self.torques.shape or self.currents.ndim != 1:
            raise ConfigError("curve knots must be parallel 1-D arrays")
        if self.currents[0] != 0.0 or self.torques[0] != 0.0:
            raise ConfigError("curve must start at (0, 0)")
        if not np.all(np.diff(self.currents) > 0):
            raise ConfigError("knot currents must be strictly increasing")
        if not np.all(np.diff(self.torques) >= 0):
            raise ConfigError("knot torques must be non-decreasing")

    @classmethod
    def linear(cls, kt: float, max_current: float = 1000.0) -> "TorqueCurrentCurve":
        """Ideal motor: torque = kt * current up to max_current."""
        return cls(np.array([0.0, max_current]), np.array([0.0, kt * max_current]))

    @classmethod
    def saturating(cls, kt: float,
                   knee_current: float = _DEFAULT_SATURATION_KNEE_A,
                   max_current: float = _DEFAULT_SATURATION_MAX_A,
                   ) -> "TorqueCurrentCurve":
        """Default saturating curve: slope kt to the knee, kt/4 to the max
        current, flat beyond."""
        knee_torque = kt * knee_current
        top_torque = knee_torque + 0.25 * kt * (max_current - knee_current)
        return cls(np.array([0.0, knee_current, max_current]),
                   np.array([0.0, knee_torque, top_torque]))

    def lookup(self, current_magnitude):
        """Interpolated torque magnitude; clamps at the last knot."""
        return np.interp(current_magnitude, self.currents, self.torques)

    def slope_at_zero(self) -> float:
        return float(self.torques[1] / self.currents[1])


def pd_pwm(cmd: MotorCommand, q, qdot, battery_voltage: float):
    """PWM drive voltage from the PD servo, clamped to the supply rails.

    V_pwm = V * (kp * (q_des - q) + kd * (qdot_des - qdot)), with the
    result limited to [-V, +V] since the modulator cannot exceed the
    battery voltage.
    """
    if battery_voltage <= 0:
        raise ConfigError("battery voltage must be positive")
    raw = battery_voltage * (cmd.kp * (cmd.desired_angle - q)
                             + cmd.kd * (cmd.desired_velocity - qdot))
    return np.clip(raw, -battery_voltage, battery_voltage)


def dc_motor_torque(v_pwm, qdot, kt: float, resistance: float,
                    curve: TorqueCurrentCurve, strength_scale: float = 1.0):
    """Torque of a DC motor under a PWM drive voltage.

    Armature current is (V_pwm - V_emf) / R with back EMF V_emf = kt * qdot;
    the torque magnitude is read from the saturating torque-current curve and
    signed by the current direction. ``strength_scale`` models motor wear.
    """
    if resistance <= 0 or kt <= 0:
        raise ConfigError("kt and resistance must be strictly positive")
    current = (np.asarray(v_pwm, dtype=float) - kt * np.asarray(qdot, dtype=float)) / resistance
    return strength_scale * curve.lookup(np.abs(current)) * np.sign(current)


def constraint_actuator_torque(cmd: MotorCommand, q, qdot,
                               rotor_inertia: float, dt: float,
                               torque_limit: float | None = None):
    """Torque that zeroes the end-of-step PD error on the isolated rotor.

    Solves kp * (q_des - q') + kd * (0 - qdot') = 0 where (q', qdot') are
    the semi-implicit successor of (q, qdot) under the returned torque and
    the rotor inertia alone. Because the error is enforced at the end of
    the step, this actuator stays stable at gains where an explicit PD
    oscillates or diverges.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    denom = cmd.kp * dt * dt + cmd.kd * dt
    if denom == 0.0:
        return np.zeros_like(np.asarray(q, dtype=float))
    err = cmd.kp * (cmd.desired_angle - np.asarray(q, dtype=float)
                    - dt * np.asarray(qdot, dtype=float)) - cmd.kd * np.asarray(qdot, dtype=float)
    torque = rotor_inertia * err / denom
    if torque_limit is not None:
        torque = np.clip(torque, -torque_limit, torque_limit)
    return torque
