"""Exception hierarchy shared by all modules."""


class PqlaError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(PqlaError, ValueError):
    pass


class DomainError(PqlaError, ValueError):
    """A parameter or local coordinate lies outside its admissible set."""


class SimulationError(PqlaError, RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DataError(PqlaError, ValueError):
    """Malformed or invalid dataset file."""

    def __init__(self, message, line=None, path=None):
        if line is not None:
            message = f"line {line}: {message}"
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.line = line
        self.path = path


class EvaluationError(PqlaError, ArithmeticError):
    """The quasi-likelihood cannot be evaluated (non-PD or non-finite S)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class OptimizationError(PqlaError, RuntimeError):
    pass


class NonIdentifiableError(OptimizationError):
    pass


class StudyError(PqlaError, RuntimeError):
    pass
