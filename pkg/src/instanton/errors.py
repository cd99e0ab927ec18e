"""Exception hierarchy.

Everything raised deliberately by the package derives from
:class:`InstantonError`; the CLI maps it to exit status 1.
"""


class InstantonError(Exception):
    """Base class for domain errors."""


class ParseError(InstantonError):
    def __init__(self, message, position=None, line=None):
        self.position = position
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if position is not None:
            where.append(f"column {position}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class FieldSpecError(InstantonError):
    """Arity, coordinate-index or domain declaration problems."""


class PeriodicityError(FieldSpecError):
    pass


class EvaluationError(InstantonError):
    """Overflow or domain error while evaluating an expression."""


class NotARestPoint(InstantonError):
    pass


class NonHyperbolicError(InstantonError):
    pass


class IntegrationError(InstantonError):
    """Step-size underflow and similar integrator failures."""

    def __init__(self, message, t=None, point=None):
        self.t = t
        self.point = point
        super().__init__(message)


class LevelNotReached(InstantonError):
    pass


class ContractionError(InstantonError):
    """Parameters outside the regime where the boundary map contracts."""

    def __init__(self, message, suggested_r_cut=None):
        self.suggested_r_cut = suggested_r_cut
        super().__init__(message)


class NoLyapunovFunction(InstantonError):
    pass


class IndexGapError(InstantonError):
    pass


class DegenerateFrame(InstantonError):
    pass


class ResolutionError(InstantonError):
    """Shooting could not resolve a connecting direction or family end."""


class RelationError(InstantonError):
    """The incidence relation or d∘d = 0 fails."""

    def __init__(self, message, violations=()):
        self.violations = list(violations)
        super().__init__(message)


class UnresolvedCellWarning(UserWarning):
    pass


class NonHyperbolicWarning(UserWarning):
    pass
