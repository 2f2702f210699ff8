"""Exception hierarchy shared by the package."""


class AIITLError(Exception):
    """Base class for all errors raised by aiitl."""


class InputShapeError(AIITLError, ValueError):
    pass


class ParameterError(AIITLError, ValueError):
    pass


class NumericError(AIITLError, ArithmeticError):
    pass


class DataError(AIITLError, ValueError):
    pass


class LabelError(DataError):
    pass


class StructureError(AIITLError, ValueError):
    pass


class SpecError(AIITLError, ValueError):
    """Invalid domain specification."""


class SplitError(DataError):
    pass


class FormatError(AIITLError, ValueError):
    """Malformed file on disk (IDX, checkpoint, trace)."""


class BudgetError(DataError):
    """A domain cannot supply the instances a schedule asks for."""


class CalibrationError(AIITLError, ValueError):
    pass


class StateError(AIITLError, RuntimeError):
    pass


class ColdStartError(AIITLError, RuntimeError):
    """Gating model lacks labelled data for at least one domain."""


class SequencingError(StateError):
    pass


class ConfigError(AIITLError, ValueError):
    """Invalid experiment configuration; ``line`` points into the source file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)
