"""Exception hierarchy shared across the package.

The CLI maps :class:`InputError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class DecoRemovalError(Exception):
    """Base class for all package errors."""


class InputError(DecoRemovalError, ValueError):
    """Invalid arguments, malformed data, or unknown identifiers."""


class NumericalError(DecoRemovalError, ArithmeticError):
    """An optimizer failed to converge or a factorization broke down."""


class ConvergenceError(NumericalError):
    def __init__(self, message, grad_norm):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm


class ModelFileError(InputError):
    """Malformed model file. ``offset`` is the byte/char position if known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)
        self.offset = offset


class VersionMismatchError(ModelFileError):
    pass
