"""Exception hierarchy shared by every module.

All errors derive from :class:`RSDError` so the CLI can turn any of them
into a one-line machine-readable message. Most also subclass ``ValueError``
because they signal bad input rather than a bug.
"""


class RSDError(Exception):
    """Base class for all package errors."""

    @property
    def kind(self) -> str:
        return type(self).__name__


class MissingCovariate(RSDError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"missing covariate {self.name!r}"


class UnknownLevel(RSDError, ValueError):
    def __init__(self, name, value):
        super().__init__(f"{value!r} is not a level of categorical {name!r}")
        self.name = name
        self.value = value


class DimensionMismatch(RSDError, ValueError):
    pass


class DegenerateData(RSDError, ValueError):
    pass


class TooFewGroups(RSDError, ValueError):
    pass


class AsymmetricInput(RSDError, ValueError):
    pass


class SchemaMismatch(RSDError, ValueError):
    pass


class SchemaFingerprintMismatch(SchemaMismatch):
    pass


class SingularAfterEscalation(RSDError, ArithmeticError):
    pass


class NonPositiveDefinite(RSDError, ArithmeticError):
    pass


class NonPositiveDefinitePrior(NonPositiveDefinite):
    pass


class NonPositiveVariance(RSDError, ValueError):
    pass


class NonPositiveStdError(RSDError, ValueError):
    pass


class UnknownPredictor(RSDError, KeyError):
    def __init__(self, name):
        super().__init__(name)
        self.name = name

    def __str__(self):
        return f"predictor {self.name!r} does not name a schema coefficient"


class NoAttemptsThatDay(RSDError, LookupError):
    def __init__(self, day):
        super().__init__(f"no attempts on day {day}")
        self.day = day


class EmptyInput(RSDError, ValueError):
    pass


class InvalidConfig(RSDError, ValueError):
    pass


class CalibrationFailed(RSDError, RuntimeError):
    pass


class ParseError(RSDError, ValueError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column

    def __str__(self):
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.column is not None:
            where.append(f"column {self.column!r}")
        msg = self.args[0]
        return f"{msg} ({', '.join(where)})" if where else msg
