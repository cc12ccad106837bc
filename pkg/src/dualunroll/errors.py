"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """A tensor axis does not match the problem dimensions."""

    def __init__(self, name: str, axis: str, expected, got):
        self.name = name
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"{name}: axis '{axis}' expected {expected}, got {got}")


class ContractViolationError(ValueError):
    """An input violates a documented precondition (e.g. negative multipliers)."""


class OracleError(RuntimeError):
    """A reference solver failed to certify its solution.

    Carries the residual report so callers can log what was achieved.
    """

    def __init__(self, message: str, residuals: dict | None = None):
        self.residuals = dict(residuals or {})
        if self.residuals:
            detail = ", ".join(f"{k}={v:.3e}" for k, v in self.residuals.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class TrainingDivergenceError(RuntimeError):
    """Training hit a non-finite loss; a diagnostic dump has been written."""

    def __init__(self, message: str, dump_path=None, checkpoint_path=None):
        self.dump_path = dump_path
        self.checkpoint_path = checkpoint_path
        super().__init__(message)
