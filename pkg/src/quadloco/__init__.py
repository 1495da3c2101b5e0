"""Quadruped locomotion toolkit: simulation, training, gap evaluation."""

from .actuator import (
    MotorCommand,
    TorqueCurrentCurve,
    constraint_actuator_torque,
    dc_motor_torque,
    leg_to_motor,
    motor_to_leg,
    pd_pwm,
)
from .dynamics import (
    DynamicsParams,
    RobotState,
    base_tilt,
    compute_contacts,
    leg_forward_kinematics,
    standing_state,
    step_dynamics,
)
from .env import (
    EnvConfig,
    PerturbationConfig,
    QuadrupedEnv,
    StepResult,
    compose_action,
    gallop_config,
    open_loop_trot,
    perturbation_for_step,
    reward,
    trot_config,
)
from .errors import (
    CalibrationError,
    ConfigError,
    OrderingError,
    ProtocolError,
    QuadlocoError,
    SimulationDivergedError,
    TrainingDivergedError,
)
from .gapeval import (
    GapReport,
    PseudoRealConfig,
    evaluate_policy,
    gait_metrics,
    parameter_sweep,
    reality_gap,
    robustness_report,
    select_top_k,
)
from .nets import Adam, Agent, GaussianPolicy, ValueFunction
from .ppo import (
    TrainConfig,
    collect_rollouts,
    gae,
    gallop_train_config,
    load_checkpoint,
    ppo_update,
    save_checkpoint,
    train,
    trot_train_config,
)
from .randomize import RandomizationRanges, nominal_params, sample_params
from .sensing import (
    CalibrationPlant,
    LatencyBuffer,
    apply_imu_corruption,
    measure_latency,
)

__version__ = "0.1.0"
