class ParameterError(ValueError):
    """An argument is outside the domain an operation accepts."""


class DiagnosticError(RuntimeError):
    """A diagnostic cannot be computed from the given record."""


class ConfigError(ValueError):
    """An experiment spec is invalid; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
