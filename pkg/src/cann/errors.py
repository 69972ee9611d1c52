"""Exception types shared across the package."""


class CannError(Exception):
    """Base class for errors raised by this package."""


class FormatError(CannError, ValueError):
    """A file did not conform to one of the binary/text formats.

    Each failure mode carries a stable ``code`` so callers (and the CLI)
    can distinguish them without parsing messages.
    """

    code = "format"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionMismatchError(FormatError):
    code = "version_mismatch"


class TruncatedFileError(FormatError):
    code = "truncated"


class AlgorithmTagError(FormatError):
    """Index file holds a different algorithm than the loader expects."""

    code = "algorithm_tag"
