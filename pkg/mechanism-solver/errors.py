"""Exception types raised by the solver modules.

Input problems subclass ValueError, numerical failures subclass RuntimeError,
so callers that only know the builtin hierarchy still catch them sensibly.
"""


class MechanismError(Exception):
    """Base class for every error raised by this package."""


# Bad input

class InvalidInterval(MechanismError, ValueError):
    pass


class InvalidParameter(MechanismError, ValueError):
    pass


class OutOfSupport(MechanismError, ValueError):
    pass


class CurveDomainMismatch(MechanismError, ValueError):
    pass


class MalformedCurve(MechanismError, ValueError):
    pass


class MalformedRegion(MechanismError, ValueError):
    pass


class NoSignChange(MechanismError, ValueError):
    pass


class MassMismatch(MechanismError, ValueError):
    pass


class NotOnHyperplane(MechanismError, ValueError):
    pass


class SizeLimit(MechanismError, ValueError):
    pass


class InfeasibleInput(MechanismError, ValueError):
    pass


class ParseError(MechanismError, ValueError):
    pass


# Numerical failures

class NonConvergence(MechanismError, RuntimeError):
    pass


class NoSolution(MechanismError, RuntimeError):
    pass


class CurveNotFound(MechanismError, RuntimeError):
    pass


class NonConcaveAssembly(MechanismError, RuntimeError):
    pass


class SlopeOutOfRange(MechanismError, RuntimeError):
    pass


class Unbounded(MechanismError, RuntimeError):
    pass


class Infeasible(MechanismError, RuntimeError):
    pass


class IoError(MechanismError, OSError):
    pass
