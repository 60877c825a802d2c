"""Exception types shared across the pipeline."""


class TrajlensError(Exception):
    """Base class for all trajlens errors."""


class ConfigurationError(TrajlensError):
    """A run or operation was configured inconsistently. CLI exit code 2."""


class DataError(TrajlensError):
    """Input data violates a contract (bad record, missing row, ...). CLI exit code 3."""


class DegenerateInput(DataError):
    """A statistical input has no usable variation (single-class column, constant series)."""
