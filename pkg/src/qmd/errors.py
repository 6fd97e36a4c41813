"""Exception hierarchy shared by all modules."""


class QmdError(Exception):
    """Base class for library errors."""


class ValidationError(QmdError, ValueError):
    """Input violates a documented invariant (bad shape, not a POVM, ...)."""


class DomainError(QmdError, ValueError):
    """A scalar function was applied outside its domain."""


class SizeLimitError(QmdError):
    """A dense operator would exceed the configured dimension cap."""


class DegenerateError(QmdError):
    """A construction has nothing to work with (e.g. an empty typical set)."""


class NumericalError(QmdError):
    """A numerical routine failed; ``residual`` records how badly."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (residual={residual:.3g})")
        self.residual = residual
