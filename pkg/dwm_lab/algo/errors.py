class ConfigurationError(ValueError):
    """Invalid configuration, dimension mismatch or a scenario the model cannot honour."""


class DomainError(ValueError):
    """Argument outside the domain of a distribution function."""


class TrainingDivergedError(RuntimeError):
    """A training loss became non-finite."""
