"""Exception types shared across the package."""


class So3NetError(Exception):
    """Base class for package errors."""


class GridMismatchError(So3NetError, ValueError):
    pass


class BandLimitError(So3NetError, ValueError):
    pass


class OrderMismatchError(So3NetError, ValueError):
    """Signal or filter does not live in the expected equivariance class."""


class NotOrthogonalError(So3NetError, ValueError):
    pass


class NonFiniteLossError(So3NetError, FloatingPointError):
    pass


class TapeConsumedError(So3NetError, RuntimeError):
    pass


class FileFormatError(So3NetError):
    """Base for binary file format problems."""


class MagicMismatchError(FileFormatError):
    pass


class SizeMismatchError(FileFormatError):
    pass


class VersionMismatchError(FileFormatError):
    pass


class UnreadablePathError(FileFormatError, OSError):
    pass


class ConfigError(So3NetError, ValueError):
    """Malformed run configuration or command-line arguments."""
