"""Exception types shared across the engine."""


class SingularEvaluationError(RuntimeError):
    """Raised when an evaluation hits a nodal surface or a singular configuration
    (division by zero, log of a non-positive value, exact particle coincidence)."""


class NanDivergenceError(RuntimeError):
    """Raised when optimization produces non-finite quantities repeatedly and aborts."""


class ConfigError(ValueError):
    """Raised for invalid run configurations; the message names the offending path."""
