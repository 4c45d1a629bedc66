"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid network, frequency, or simulation configuration."""


class IntegrationDivergedError(RuntimeError):
    """Phases became non-finite during integration."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"integration diverged at step {step}")


class NumericsError(RuntimeError):
    """Non-finite value inside the flow forward pass, gradients, or training."""


class SchemaError(ValueError):
    """A run configuration file failed schema validation."""


class DependencyError(RuntimeError):
    """A required upstream artifact (dataset, checkpoint) is missing."""
