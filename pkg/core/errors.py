"""Exception types raised by the SFKT library.

Library code raises; the CLI maps these onto exit codes (see cli/commands.py).
"""


class SfktError(RuntimeError):
    """Base class for all library errors."""


class ConfigError(SfktError, ValueError):
    """Invalid configuration or input format (e.g. a missing CSV column)."""


class DataError(SfktError, ValueError):
    """Input data violates a domain rule (empty log, empty concept set, ...)."""


class ShapeError(SfktError, ValueError):
    """Operand shapes do not conform."""


class IndexRangeError(SfktError, IndexError):
    """Embedding index outside the table."""


class NonFiniteError(SfktError):
    """A loss or gradient became NaN/inf."""


class VocabMismatchError(SfktError):
    """Checkpoint vocabulary does not match the prepared dataset."""


class CacheMismatchError(SfktError):
    """Prepared cache was built with a different data configuration."""
