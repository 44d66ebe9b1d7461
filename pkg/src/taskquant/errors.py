"""Exception types shared across the toolkit."""


class ConfigError(Exception):
    """Invalid, inconsistent, or missing experiment configuration."""


class NumericalError(Exception):
    """A numerical step failed or is too ill-conditioned to trust."""

    def __init__(self, message, condition_number=None):
        if condition_number is not None:
            message = f"{message} (condition number {condition_number:.3e})"
        super().__init__(message)
        self.condition_number = condition_number


class TrainingDiverged(NumericalError):
    """Training loss became non-finite."""
