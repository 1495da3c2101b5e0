"""Exception types shared across the toolkit."""


class QuadlocoError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(QuadlocoError):
    """Invalid or inconsistent configuration."""


class SimulationDivergedError(QuadlocoError):
    """A NaN or non-finite value appeared in the simulation state.

    The message names the offending field so divergences can be traced
    back to the force term that produced them.
    """


class ProtocolError(QuadlocoError):
    """An API was called out of order (e.g. stepping a finished episode)."""


class OrderingError(QuadlocoError):
    """A timestamped record was inserted out of order."""


class CalibrationError(QuadlocoError):
    """A calibration routine failed to detect the signal it was probing for."""


class TrainingDivergedError(QuadlocoError):
    """A training update produced a non-finite loss.

    Carries the latest update statistics for post-mortem inspection.
    """

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}
