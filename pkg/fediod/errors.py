"""Exception hierarchy shared by every layer of the simulator."""


class FediodError(Exception):
    """Root of all simulator errors."""


class ShapeError(FediodError):
    """Operand shapes do not fit the operation."""


class NumericalError(FediodError):
    """NaN/Inf produced, log of a non-positive value, division by zero."""


class OptimizerError(FediodError):
    """Optimizer asked to step a parameter without a gradient."""


class DataFormatError(FediodError):
    """Malformed IDX file or plain-text grid."""


class PartitionError(FediodError):
    """Partition cannot be built or is inconsistent."""


class ConfigError(FediodError):
    """Invalid run configuration. ``field`` names the offending key."""

    def __init__(self, message: str, field: str = None):
        super().__init__(message)
        self.field = field


class ProtocolError(FediodError):
    """Federation protocol violated (phase order, frozen teacher, ...)."""


class DistillationError(FediodError):
    """A distillation step produced a non-finite loss."""

    def __init__(self, message: str, step: int = None, loss: str = None):
        super().__init__(message)
        self.step = step
        self.loss = loss
