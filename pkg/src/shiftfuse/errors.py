"""Exception hierarchy shared by every module."""


class ShiftFuseError(Exception):
    """Base class; ``kind`` is the machine-readable tag used by the CLI."""

    kind = "error"
    experiment_id = None

    def to_dict(self):
        out = {"error": self.kind, "message": str(self)}
        if self.experiment_id is not None:
            out["experiment_id"] = self.experiment_id
        return out


class DimensionError(ShiftFuseError, ValueError):
    kind = "dimension"


class ConfigError(ShiftFuseError, ValueError):
    kind = "config"


class InputError(ShiftFuseError, ValueError):
    kind = "input"


class EmptyInputError(InputError):
    kind = "empty_input"


class InsufficientDataError(InputError):
    kind = "insufficient_data"


class BucketRangeError(ShiftFuseError, ValueError):
    kind = "range"


class ScheduleError(ShiftFuseError, ValueError):
    kind = "schedule"


class NumericalError(ShiftFuseError, ArithmeticError):
    kind = "numerical"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ReconciliationError(ShiftFuseError, AssertionError):
    kind = "reconciliation"

    def __init__(self, message, term=None):
        super().__init__(message)
        self.term = term
