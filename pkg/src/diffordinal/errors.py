class ConfigError(ValueError):
    """Invalid or inconsistent configuration; raised before any compute."""


class IngestionError(ValueError):
    """Malformed feature file."""


class NumericalError(RuntimeError):
    """Non-finite value during training or sampling."""
