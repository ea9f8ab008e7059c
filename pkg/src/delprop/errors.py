"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class DelpropError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DelpropError):
    """Invalid hyperparameters, schedules, limits or method selection."""


class DataError(DelpropError):
    """Malformed datasets, files, or dataset/cache mismatches."""


class NumericError(DelpropError):
    """Numerical failure: divergence, singular systems, non-convergence."""


class TrainingDivergedError(NumericError):
    def __init__(self, iteration: int):
        super().__init__(f"parameters became non-finite at iteration {iteration}")
        self.iteration = iteration


class CacheFormatError(DataError):
    """Cache file rejected; ``code`` distinguishes the failure mode.

    Codes: ``bad-magic``, ``version``, ``truncated``, ``fingerprint``,
    ``missing-chunk``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class SymbolicLimitError(ConfigError):
    """Instance too large for the symbolic provenance oracle."""
