"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FFCError(Exception):
    exit_code = 1


class ConfigError(FFCError, ValueError):
    exit_code = 2


class DataError(FFCError, ValueError):
    exit_code = 3


class NumericalError(FFCError, ArithmeticError):
    exit_code = 4


class SymmetryError(NumericalError):
    """Inverse transform of a spectrum that is not conjugate-symmetric."""
