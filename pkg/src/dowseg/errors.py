"""Error taxonomy shared by the library and the CLI."""


class ValidationError(ValueError):
    """An input violates an operation precondition (CLI exit code 2)."""


class FormatError(IOError):
    """A file's content is malformed (CLI exit code 3)."""


class UnsupportedError(FormatError):
    """A file is well-formed but outside the supported subset (CLI exit code 3)."""
