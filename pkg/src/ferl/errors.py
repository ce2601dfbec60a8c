class FerlError(Exception):
    exit_code = 1


class ConfigError(FerlError, ValueError):
    exit_code = 1


class InvariantViolation(FerlError):
    exit_code = 2


class NumericalError(FerlError, FloatingPointError):
    exit_code = 3
