"""Exception hierarchy. Every error raised by the library derives from CipError."""


class CipError(Exception):
    pass


class TraceParseError(CipError, ValueError):
    """A trace file could not be parsed (malformed row, bad JSON, missing key)."""


class TraceDomainError(CipError, ValueError):
    """A parsed trace violates a model invariant."""


class DimensionError(CipError, ValueError):
    pass


class SingularityError(CipError, ArithmeticError):
    """Factorization failed even at the largest allowed jitter."""


class ConvergenceError(CipError, ArithmeticError):
    pass


class BracketError(CipError, ArithmeticError):
    """Calibration could not bracket a feasible noise variance."""


class AuditCapError(CipError, ValueError):
    pass
