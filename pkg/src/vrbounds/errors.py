"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class NumericalFault(ArithmeticError):
    """A component oracle returned a non-finite value."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class DivergenceError(ArithmeticError):
    """Iterates blew up (non-finite or norm above the guard)."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class InvalidChain(ValueError):
    pass


class HorizonExceeded(RuntimeError):
    pass


class UncoverablePattern(ValueError):
    pass


class OutOfWindow(ValueError):
    pass


class InsufficientTrace(ValueError):
    pass


class InvalidCombination(ValueError):
    pass


class ConfigError(ValueError):
    """Experiment config failed validation. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
