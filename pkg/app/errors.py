class ExtremalError(Exception):
    """Base error; `exit_code` is what the CLI returns for it."""

    exit_code = 1


class InputError(ExtremalError, ValueError):
    """Rejected input or configuration."""

    exit_code = 2


class NumericalError(ExtremalError, ArithmeticError):
    """A value went non-finite; `trace` holds whatever was recorded before the abort."""

    exit_code = 3

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
