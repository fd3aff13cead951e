"""Exception hierarchy. The CLI maps each family to its own exit code."""


class FedPoisonError(Exception):
    """Base class for all library errors."""


class ConfigError(FedPoisonError, ValueError):
    """Invalid configuration or parameter combination."""


class DataError(FedPoisonError, ValueError):
    """Bad input data: ingestion failures, out-of-range labels, infeasible partitions."""


class ShapeError(FedPoisonError, ValueError):
    """Array dimensions do not match what the operation expects."""
