"""Exception types shared across the package.

Format errors cover everything the container loader can reject; they map to
CLI exit code 2. Configuration errors (bad bit-widths, missing statistics,
invalid grids) map to exit code 3. Everything else is an internal invariant
violation and maps to exit code 4.
"""


class SpiqError(Exception):
    """Base class for all package errors."""


class ShapeError(SpiqError, ValueError):
    """Tensor shapes do not compose or violate a layout constraint."""


class ConfigError(SpiqError, ValueError):
    """Invalid quantization or command configuration."""


class FormatError(SpiqError):
    """Base class for container-format problems."""


class BadMagicError(FormatError):
    """File does not start with the container magic."""


class UnsupportedVersionError(FormatError):
    """Magic is recognized but names a version this loader does not read."""


class TruncatedFileError(FormatError):
    """File ends before the data its header promises."""


class LengthMismatchError(FormatError):
    """Manifest-declared lengths disagree with the file contents."""


class ManifestError(FormatError):
    """Manifest is not valid JSON or is missing required structure."""


class UnknownLayerKindError(FormatError):
    """Manifest names a layer kind this loader does not implement."""
