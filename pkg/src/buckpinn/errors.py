"""Typed failures raised across the package."""


class BuckPinnError(Exception):
    """Base class for all package errors."""


class ValidationError(BuckPinnError, ValueError):
    """Bad configuration or argument."""


class InvalidDuty(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class DegenerateVoltage(BuckPinnError):
    """Output voltage fell below the CPL guard floor."""


class NonFiniteState(BuckPinnError):
    pass


class SingularModel(BuckPinnError):
    pass


class NonFiniteLoss(BuckPinnError):
    def __init__(self, iteration, value):
        super().__init__(f"non-finite loss {value!r} at iteration {iteration}")
        self.iteration = iteration
        self.value = value


class SimulationDiverged(BuckPinnError):
    def __init__(self, scenario_id, cause):
        super().__init__(f"scenario {scenario_id}: {cause}")
        self.scenario_id = scenario_id
        self.cause = cause
