"""Exception taxonomy shared by all sew modules."""


class SewError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SewError):
    """Operands have incompatible shapes; message names both."""


class NumericError(SewError):
    """A NaN or Inf showed up where only finite values are allowed."""


class GraphError(SewError):
    """Autodiff contract violation (e.g. backward from a non-scalar)."""


class ConditioningError(SewError):
    """A matrix is singular / not positive definite enough to proceed."""


class ConfigError(SewError):
    """Invalid or inconsistent configuration value."""


class DataError(SewError):
    """Ingestion failure or a dataset that violates its contract."""


class ExportError(SewError):
    """Deployment export requested from a model missing required blocks."""
