"""Error types shared across the package.

Four categories: shape problems, bad configuration values, malformed
files, and broken runtime invariants (e.g. stepping an optimizer over a
parameter that never received a gradient).
"""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(ValueError):
    """A configuration value is out of range or inconsistent."""


class FormatError(ValueError):
    """A file does not conform to its declared format."""


class InvariantError(RuntimeError):
    """A runtime invariant was violated."""
