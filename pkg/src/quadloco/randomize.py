"""Per-episode randomization of the physical parameters.

Each randomized quantity is drawn independently and uniformly from its
declared range at episode reset; everything else is copied from the nominal
parameter set. Ranges default to the measured-system bounds and can be
overridden per parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .dynamics import DynamicsParams
from .errors import ConfigError


@dataclass
class RandomizationRanges:
    """Uniform sampling ranges, one (lower, upper) pair per parameter."""

    mass_scale: tuple[float, float] = (0.8, 1.2)
    motor_friction: tuple[float, float] = (0.0, 0.05)       # Nm
    inertia_scale: tuple[float, float] = (0.5, 1.5)
    motor_strength: tuple[float, float] = (0.8, 1.2)
    control_step: tuple[float, float] = (0.003, 0.020)      # s
    latency: tuple[float, float] = (0.0, 0.040)             # s
    battery_voltage: tuple[float, float] = (14.0, 16.8)     # V
    contact_friction: tuple[float, float] = (0.5, 1.25)
    imu_bias: tuple[float, float] = (-0.05, 0.05)           # rad
    imu_noise_std: tuple[float, float] = (0.0, 0.05)        # rad

    def validate(self) -> None:
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if lo > hi:
                raise ConfigError(f"range for {f.name} has lower > upper")

    def as_dict(self) -> dict[str, tuple[float, float]]:
        return {f.name: tuple(getattr(self, f.name)) for f in fields(self)}


# Randomized parameter -> target field on DynamicsParams. Draw order is
# fixed by this table so a given seed always produces the same sample.
PARAMETER_FIELDS = (
    ("mass_scale", "total_mass_scale"),
    ("motor_friction", "motor_friction_torque"),
    ("inertia_scale", "inertia_scale"),
    ("motor_strength", "motor_strength_scale"),
    ("control_step", "control_step"),
    ("latency", "latency"),
    ("battery_voltage", "battery_voltage"),
    ("contact_friction", "contact_friction_coefficient"),
    ("imu_bias", "imu_bias"),
    ("imu_noise_std", "imu_noise_std"),
)

PARAMETER_NAMES = tuple(name for name, _ in PARAMETER_FIELDS)


def nominal_params() -> DynamicsParams:
    """The nominal (identified-system) parameter set."""
    return DynamicsParams()


def sample_params(ranges: RandomizationRanges, rng: np.random.Generator,
                  nominal: DynamicsParams | None = None) -> DynamicsParams:
    """Draw a fresh parameter set for one episode.

    Every randomized field is sampled uniformly from its range; fields not
    in the table keep their nominal values.
    """
    ranges.validate()
    base = (nominal or nominal_params()).copy()
    updates = {}
    for range_name, field_name in PARAMETER_FIELDS:
        lo, hi = getattr(ranges, range_name)
        updates[field_name] = float(rng.uniform(lo, hi))
    return replace(base, **updates)


def sample_value_matrix(ranges: RandomizationRanges, rng: np.random.Generator,
                        n: int) -> np.ndarray:
    """n parameter sets as an (n, 10) array, columns in table order.

    Uses the same per-row draw order as sample_params; row i of the matrix
    equals the values sample_params would produce on the i-th call.
    """
    ranges.validate()
    bounds = np.array([getattr(ranges, name) for name in PARAMETER_NAMES])
    draws = rng.uniform(size=(n, len(PARAMETER_NAMES)))
    return bounds[:, 0] + draws * (bounds[:, 1] - bounds[:, 0])
