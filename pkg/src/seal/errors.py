"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataFormatError -> 3, everything else derived from SealError -> 4.
"""


class SealError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SealError):
    """Invalid configuration value, argument, or search-space definition."""


class DataFormatError(SealError):
    """Malformed bytes in a dataset file or checkpoint."""


class NumericError(SealError):
    """Non-finite values, divergence, or an undefined numeric quantity."""


class DimensionError(SealError):
    """Tensor shape mismatch; messages name the offending layer index."""


class UsageError(SealError):
    """API misuse, e.g. backward called with an eval-mode cache."""


class StateError(SealError):
    """A metric was requested before the entries it needs exist."""


class ConstraintError(SealError):
    """A search-space constraint was violated (e.g. all-zero growth vector)."""


class ExpansionExhaustedError(SealError):
    """No block has headroom left in a requested growth dimension."""


class LineageError(SealError):
    """Two encodings are not related by a single legal expansion step."""
