class ErrfiltError(Exception):
    """Base class for simulator errors"""


class OpticsError(ErrfiltError, ValueError):
    """Invalid optical state or element input"""


class ConfigError(ErrfiltError):
    """Configuration problems, reported all at once"""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class CalibrationError(ErrfiltError):
    """A calibration target cannot be reached"""


class EstimationError(ErrfiltError, ValueError):
    """Missing or out-of-range data for a statistic or a protocol record"""
