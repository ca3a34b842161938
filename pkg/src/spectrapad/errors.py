"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, ProtocolError -> 3,
NumericError -> 4. Plain ValueError is reserved for programming errors
(bad shapes, out-of-range parameters) at the library level.
"""


class SpectraPadError(Exception):
    """Base class for package-specific failures."""


class ConfigError(SpectraPadError):
    """Invalid or inconsistent configuration / usage."""


class ProtocolError(SpectraPadError):
    """Data or experiment-protocol violation (bad splits, missing classes,
    incompatible checkpoint, empty score sets)."""


class NumericError(SpectraPadError):
    """Non-finite loss or otherwise numerically unusable state."""
