"""Exception hierarchy shared by all modules."""


class AbsorbChaosError(Exception):
    pass


class ConfigError(AbsorbChaosError, ValueError):
    """Invalid configuration or input data."""


class KernelError(ConfigError):
    pass


class MeasureError(ConfigError):
    pass


class SimulationError(AbsorbChaosError):
    pass


class FpeError(AbsorbChaosError):
    """Raised when a Fokker-Planck solve violates a scheme guarantee."""


class QuadratureError(AbsorbChaosError):
    pass


class ConvergenceError(AbsorbChaosError):
    def __init__(self, message, last_distance=None, trace=None):
        super().__init__(message)
        self.last_distance = last_distance
        self.trace = trace
