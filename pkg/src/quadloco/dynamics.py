"""Rigid-body simulation of a small direct-drive quadruped on flat ground.

The robot is a single rigid base driven by eight direct-drive motors, two per
leg. Legs are treated as low-mass: their inertia is lumped into the motor
rotor inertia, and ground reaction forces couple back into the motors through
the leg Jacobian transpose. Each point foot interacts with the ground plane
through a spring-damper normal force and regularized Coulomb friction.
Integration is semi-implicit Euler (velocities first, then positions) at a
fixed 1 ms substep; the control loop decides how many substeps elapse between
policy decisions.

Leg pose is described in leg space: extension sets the leg length through a
linear radius map and swing rotates the leg about the hip pitch axis. The
two motor angles of a leg relate to leg space as theta1 = e + s,
theta2 = e - s (see the actuator module for the mapping helpers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, SimulationDivergedError

NUM_LEGS = 4
NUM_MOTORS = 8
LEG_NAMES = ("front_left", "back_left", "front_right", "back_right")

# Fixed integrator substep (s). The control step is configurable and
# randomizable; the substep is not, so integrator accuracy stays constant.
SUBSTEP = 0.001

# Slip speed (m/s) over which Coulomb friction is regularized. Below this
# scale the friction force rolls off smoothly instead of switching sign.
_SLIP_REGULARIZATION = 0.01

# Motor speed (rad/s) over which dry friction torque is regularized.
_FRICTION_REGULARIZATION = 0.05


# ---------------------------------------------------------------------------
# Quaternion helpers (scalar-first convention: [w, x, y, z])


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector (axis * angle)."""
    angle = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if not math.isfinite(angle):
        raise SimulationDivergedError("non-finite rotation increment")
    if angle < 1e-12:
        # First-order expansion; renormalization handles the truncation.
        q = np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
        return q / np.linalg.norm(q)
    half = 0.5 * angle
    s = math.sin(half) / angle
    return np.array([math.cos(half), s * v[0], s * v[1], s * v[2]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix mapping body-frame vectors to the world frame."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_roll_pitch(q: np.ndarray) -> tuple[float, float]:
    """Roll and pitch (rad) of the base, ZYX Euler convention."""
    w, x, y, z = q
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    pitch = math.asin(max(-1.0, min(1.0, 2.0 * (w * y - z * x))))
    return roll, pitch


# ---------------------------------------------------------------------------
# Parameters and state


@dataclass
class LegGeometry:
    """Declared leg kinematic map.

    The leg radius varies linearly with extension over the joint-limit
    range: r(e) = r_min + (r_max - r_min) * (e - e_min) / (e_max - e_min),
    where [e_min, e_max] are the motor joint limits. ``swing_zero_axis`` is
    the body-frame direction the foot points at zero swing.
    """

    r_min: float = 0.10
    r_max: float = 0.30
    swing_zero_axis: tuple[float, float, float] = (0.0, 0.0, -1.0)


@dataclass
class DynamicsParams:
    """Physical parameters of the simulated robot.

    Defaults are the nominal (identified-system) values; the randomize
    module perturbs a subset of them per episode. Scales are dimensionless
    multipliers on the nominal quantity.
    """

    total_mass_scale: float = 1.0
    link_masses: tuple[float, ...] = (8.0,)
    inertia_scale: float = 1.0
    motor_friction_torque: float = 0.01
    motor_strength_scale: float = 1.0
    torque_constant: float = 0.1
    armature_resistance: float = 0.2
    battery_voltage: float = 16.0
    contact_friction_coefficient: float = 1.0
    contact_normal_stiffness: float = 5.0e4
    contact_normal_damping: float = 300.0
    latency: float = 0.015
    pd_latency: float = 0.003
    control_step: float = 0.006
    imu_bias: float = 0.0
    imu_noise_std: float = 0.0
    leg_geometry: LegGeometry = field(default_factory=LegGeometry)
    joint_limits: tuple[float, float] = (0.2, 3.5)
    motor_rotor_inertia: float = 0.004
    gravity: float = 9.81
    body_length: float = 0.54
    body_width: float = 0.28
    body_height: float = 0.12

    def validate(self) -> None:
        if self.total_mass_scale <= 0 or self.inertia_scale <= 0:
            raise ConfigError("mass and inertia scales must be strictly positive")
        if self.motor_strength_scale <= 0:
            raise ConfigError("motor strength scale must be strictly positive")
        if self.torque_constant <= 0 or self.armature_resistance <= 0:
            raise ConfigError("torque constant and resistance must be strictly positive")
        if self.battery_voltage <= 0:
            raise ConfigError("battery voltage must be strictly positive")
        if self.contact_friction_coefficient < 0:
            raise ConfigError("contact friction coefficient must be >= 0")
        if self.leg_geometry.r_min >= self.leg_geometry.r_max:
            raise ConfigError("leg geometry requires r_min < r_max")
        if self.joint_limits[0] >= self.joint_limits[1]:
            raise ConfigError("joint limits must be an increasing pair")
        if self.control_step < SUBSTEP:
            raise ConfigError("control step must be at least one substep")
        if self.latency < 0 or self.pd_latency < 0:
            raise ConfigError("latencies must be >= 0")
        if self.motor_rotor_inertia <= 0:
            raise ConfigError("motor rotor inertia must be strictly positive")

    @property
    def mass(self) -> float:
        return float(sum(self.link_masses)) * self.total_mass_scale

    def body_inertia_diag(self) -> np.ndarray:
        """Body-frame principal inertia of the base, modeled as a box."""
        m = self.mass
        lx, ly, lz = self.body_length, self.body_width, self.body_height
        box = m / 12.0 * np.array([ly * ly + lz * lz,
                                   lx * lx + lz * lz,
                                   lx * lx + ly * ly])
        return box * self.inertia_scale

    def hip_offsets(self) -> np.ndarray:
        """Body-frame hip positions, rows ordered as LEG_NAMES."""
        hx, hy = 0.5 * self.body_length, 0.5 * self.body_width
        return np.array([
            [hx, hy, 0.0],    # front_left
            [-hx, hy, 0.0],   # back_left
            [hx, -hy, 0.0],   # front_right
            [-hx, -hy, 0.0],  # back_right
        ])

    def copy(self) -> "DynamicsParams":
        return replace(self, leg_geometry=replace(self.leg_geometry))


@dataclass
class RobotState:
    """Full simulator state: 6-DoF base plus eight motor DoF."""

    base_position: np.ndarray
    base_orientation: np.ndarray
    base_linear_velocity: np.ndarray
    base_angular_velocity: np.ndarray  # world frame
    motor_angles: np.ndarray
    motor_velocities: np.ndarray
    time: float = 0.0

    def copy(self) -> "RobotState":
        return RobotState(
            self.base_position.copy(),
            self.base_orientation.copy(),
            self.base_linear_velocity.copy(),
            self.base_angular_velocity.copy(),
            self.motor_angles.copy(),
            self.motor_velocities.copy(),
            self.time,
        )

    def assert_finite(self) -> None:
        # Fast path: one scalar probe (NaN/inf propagate through the sum).
        probe = (self.base_position.sum() + self.base_orientation.sum()
                 + self.base_linear_velocity.sum()
                 + self.base_angular_velocity.sum()
                 + self.motor_angles.sum() + self.motor_velocities.sum())
        if math.isfinite(probe):
            return
        for name in ("base_position", "base_orientation", "base_linear_velocity",
                     "base_angular_velocity", "motor_angles", "motor_velocities"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise SimulationDivergedError(f"non-finite value in {name}")
        raise SimulationDivergedError("state overflow")


@dataclass
class ContactState:
    """Per-foot ground contact summary, rows ordered as LEG_NAMES."""

    in_contact: np.ndarray      # (4,) bool
    penetration_depth: np.ndarray  # (4,) m, 0 when airborne
    normal_force: np.ndarray    # (4,) N
    friction_force: np.ndarray  # (4, 2) N, world x/y


@dataclass
class FootKinematics:
    """Result of the leg forward kinematics, with a clamp diagnostic."""

    position: np.ndarray  # hip-frame foot position (3,)
    clamped: bool


# ---------------------------------------------------------------------------
# Kinematics


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Componentwise cross product for (..., 3) arrays.

    np.cross spends most of its time on axis bookkeeping at these sizes.
    """
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def extension_radius(extension: float | np.ndarray, params: DynamicsParams):
    """Leg radius for an extension angle under the declared linear map."""
    e_min, e_max = params.joint_limits
    geo = params.leg_geometry
    frac = (extension - e_min) / (e_max - e_min)
    return geo.r_min + (geo.r_max - geo.r_min) * frac


def leg_forward_kinematics(swing: float, extension: float,
                           params: DynamicsParams) -> FootKinematics:
    """Hip-frame foot position for a leg pose.

    Extension sets the leg length through the linear radius map; swing
    rotates the leg about the hip pitch axis (body +y), positive swing
    sweeping the foot toward body -x (rearward, so that an in-phase
    swing/extension gait propels the body forward). Out-of-limit inputs
    are clamped to the joint limits and flagged in the returned diagnostic.
    """
    lo, hi = params.joint_limits
    e = min(max(extension, lo), hi)
    s = min(max(swing, -(hi - lo)), hi - lo)
    clamped = (e != extension) or (s != swing)
    r = extension_radius(e, params)
    zero = np.asarray(params.leg_geometry.swing_zero_axis, dtype=float)
    zero = zero / np.linalg.norm(zero)
    c, sn = math.cos(s), math.sin(s)
    # Rotation by s about the body +y axis, applied to the zero direction.
    direction = np.array([
        c * zero[0] + sn * zero[2],
        zero[1],
        -sn * zero[0] + c * zero[2],
    ])
    return FootKinematics(position=r * direction, clamped=clamped)


def _leg_states(state: RobotState, params: DynamicsParams):
    """Foot positions, velocities, and motor Jacobians for all four legs.

    Returns (foot_world (4,3), foot_vel (4,3), jac (4,3,2)) where
    jac[i, :, k] is d(foot_world_i)/d(theta_k of leg i) with the base held
    fixed. Assumes the default downward swing_zero_axis.
    """
    q = state.motor_angles.reshape(NUM_LEGS, 2)
    qd = state.motor_velocities.reshape(NUM_LEGS, 2)
    s = 0.5 * (q[:, 0] - q[:, 1])
    e = 0.5 * (q[:, 0] + q[:, 1])
    r = extension_radius(e, params)
    e_min, e_max = params.joint_limits
    geo = params.leg_geometry
    dr_de = (geo.r_max - geo.r_min) / (e_max - e_min)

    sin_s, cos_s = np.sin(s), np.cos(s)
    # Hip-frame foot position r(e) * (-sin s, 0, -cos s) and its partials
    # (swing rotation about body +y; positive swing sweeps the foot rearward).
    foot_local = np.zeros((NUM_LEGS, 3))
    foot_local[:, 0] = -r * sin_s
    foot_local[:, 2] = -r * cos_s
    df_ds = np.zeros((NUM_LEGS, 3))
    df_ds[:, 0] = -r * cos_s
    df_ds[:, 2] = r * sin_s
    df_de = np.zeros((NUM_LEGS, 3))
    df_de[:, 0] = -dr_de * sin_s
    df_de[:, 2] = -dr_de * cos_s
    # theta1 = e + s, theta2 = e - s  =>  s = (t1 - t2)/2, e = (t1 + t2)/2.
    df_dt1 = 0.5 * (df_ds + df_de)
    df_dt2 = 0.5 * (df_de - df_ds)

    rot = quat_to_matrix(state.base_orientation)
    rel_local = params.hip_offsets() + foot_local
    rel_world = rel_local @ rot.T
    foot_world = state.base_position[None, :] + rel_world

    jac = np.empty((NUM_LEGS, 3, 2))
    jac[:, :, 0] = df_dt1 @ rot.T
    jac[:, :, 1] = df_dt2 @ rot.T
    joint_vel = jac[:, :, 0] * qd[:, :1] + jac[:, :, 1] * qd[:, 1:]
    omega = state.base_angular_velocity
    foot_vel = (state.base_linear_velocity[None, :]
                + _cross3(omega[None, :], rel_world) + joint_vel)
    return foot_world, foot_vel, jac, rel_world


def _contact_forces(foot_world, foot_vel, params: DynamicsParams):
    """Penalty normal force plus regularized Coulomb friction per foot."""
    depth = np.maximum(0.0, -foot_world[:, 2])
    in_contact = depth > 0.0
    approach = np.maximum(0.0, -foot_vel[:, 2])
    normal = (params.contact_normal_stiffness * depth
              + params.contact_normal_damping * approach)
    normal = np.where(in_contact, np.maximum(0.0, normal), 0.0)

    vt = foot_vel[:, :2]
    speed = np.sqrt(vt[:, 0] ** 2 + vt[:, 1] ** 2 + _SLIP_REGULARIZATION ** 2)
    friction = (-params.contact_friction_coefficient
                * (normal / speed)[:, None] * vt)
    return in_contact, depth, normal, friction


def compute_contacts(state: RobotState, params: DynamicsParams) -> ContactState:
    """Contact state of all four feet against the ground plane z = 0."""
    foot_world, foot_vel, _, _ = _leg_states(state, params)
    in_contact, depth, normal, friction = _contact_forces(foot_world, foot_vel, params)
    return ContactState(in_contact=in_contact, penetration_depth=depth,
                        normal_force=normal, friction_force=friction)


# ---------------------------------------------------------------------------
# Integration


def step_dynamics(state: RobotState, motor_torques: np.ndarray,
                  perturbation: np.ndarray | None, params: DynamicsParams,
                  dt: float) -> RobotState:
    """Advance the robot by one semi-implicit Euler step of length dt.

    Velocities are updated from forces evaluated at the current state, then
    positions are updated with the new velocities. The optional perturbation
    force acts at the base center of mass. Motor dynamics integrate the
    rotor model I_m * qdd = tau - tau_friction + J^T f_contact, so stance
    legs load their motors through the leg Jacobian.

    Raises SimulationDivergedError if any field of the result is non-finite.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")

    foot_world, foot_vel, jac, rel_world = _leg_states(state, params)
    in_contact, depth, normal, friction = _contact_forces(foot_world, foot_vel, params)
    f_contact = np.empty((NUM_LEGS, 3))
    f_contact[:, :2] = friction
    f_contact[:, 2] = normal

    mass = params.mass
    force = f_contact.sum(axis=0)
    force[2] -= mass * params.gravity
    if perturbation is not None:
        force = force + np.asarray(perturbation, dtype=float)
    torque_world = _cross3(rel_world, f_contact).sum(axis=0)

    rot = quat_to_matrix(state.base_orientation)
    inertia = params.body_inertia_diag()
    omega_b = rot.T @ state.base_angular_velocity
    torque_b = rot.T @ torque_world
    omega_dot_b = (torque_b - _cross3(omega_b, inertia * omega_b)) / inertia

    new_lin_vel = state.base_linear_velocity + dt * (force / mass)
    new_ang_vel = state.base_angular_velocity + dt * (rot @ omega_dot_b)
    new_pos = state.base_position + dt * new_lin_vel
    dq = quat_from_rotvec(dt * new_ang_vel)
    new_quat = quat_multiply(dq, state.base_orientation)
    new_quat = new_quat / np.linalg.norm(new_quat)

    qd = state.motor_velocities
    tau_friction = params.motor_friction_torque * np.clip(
        qd / _FRICTION_REGULARIZATION, -1.0, 1.0)
    # Generalized contact load per motor: J^T f, per leg pair.
    tau_contact = np.einsum("ljk,lj->lk", jac, f_contact).reshape(NUM_MOTORS)
    tau_net = np.asarray(motor_torques, dtype=float) - tau_friction + tau_contact
    new_qd = qd + dt * tau_net / params.motor_rotor_inertia
    new_q = state.motor_angles + dt * new_qd

    # Hard joint stops: clamp the angle and cancel velocity into the stop.
    lo, hi = params.joint_limits
    below, above = new_q < lo, new_q > hi
    if below.any() or above.any():
        new_q = np.clip(new_q, lo, hi)
        new_qd = np.where(below, np.maximum(new_qd, 0.0), new_qd)
        new_qd = np.where(above, np.minimum(new_qd, 0.0), new_qd)

    result = RobotState(new_pos, new_quat, new_lin_vel, new_ang_vel,
                        new_q, new_qd, state.time + dt)
    result.assert_finite()
    return result


def base_tilt(state: RobotState) -> float:
    """Largest of |roll| and |pitch| of the base (rad)."""
    roll, pitch = quat_roll_pitch(state.base_orientation)
    return max(abs(roll), abs(pitch))


def standing_state(params: DynamicsParams, extension: float = 2.0,
                   swing: float = 0.0) -> RobotState:
    """Robot at rest over the origin with all legs at the given pose.

    The base height puts the point feet exactly on the ground plane.
    """
    q = np.empty(NUM_MOTORS)
    q[0::2] = extension + swing
    q[1::2] = extension - swing
    height = extension_radius(extension, params) * math.cos(swing)
    return RobotState(
        base_position=np.array([0.0, 0.0, height]),
        base_orientation=quat_identity(),
        base_linear_velocity=np.zeros(3),
        base_angular_velocity=np.zeros(3),
        motor_angles=q,
        motor_velocities=np.zeros(NUM_MOTORS),
        time=0.0,
    )
