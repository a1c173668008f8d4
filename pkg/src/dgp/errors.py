class DegenerateTargetError(ValueError):
    """The target has zero variance, so NRMSE / R^2 are undefined."""


class DatasetError(ValueError):
    """Malformed or unusable input data."""
