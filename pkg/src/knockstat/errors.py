"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class KnockError(Exception):
    exit_code = 4
    code = "numeric"


class FormatError(KnockError):
    """Input file does not follow the expected layout."""

    exit_code = 3
    code = "format"


class DomainError(KnockError, ValueError):
    """Argument outside the support of a function (e.g. KI <= 0)."""

    code = "domain"


class DegeneracyError(KnockError):
    code = "degenerate"


class InsufficientDataError(KnockError):
    code = "insufficient-data"


class PreconditionError(KnockError):
    """Nyquist violation, window outside the trace, and similar guards."""

    code = "precondition"
