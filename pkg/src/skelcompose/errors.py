"""Exception hierarchy shared across the package."""


class SkelComposeError(Exception):
    """Base class for package errors."""


class SchemaError(SkelComposeError):
    """Input data violates a structural contract (joint counts, shapes, ids)."""


class ParseError(SkelComposeError):
    """A text stream could not be parsed; message names the offending line."""


class FormatError(SkelComposeError):
    """A binary container is malformed; message carries the byte offset or record index."""


class NumericalError(SkelComposeError):
    """A numerical invariant failed at runtime (non-finite loss, degenerate variance)."""
