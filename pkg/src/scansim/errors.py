"""Exception types raised across the simulator."""


class InvalidInputError(ValueError):
    pass


class PowerConstraintError(ValueError):
    pass


class FormatError(ValueError):
    """Malformed binary or text input. ``offset`` is the byte/row position, if known."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset


class InfeasibleBudgetError(ValueError):
    pass


class SearchSpaceTooLargeError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = list(trace)


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class DegenerateChannelWarning(UserWarning):
    pass
