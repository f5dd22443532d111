"""Exception types shared by the library and mapped to CLI exit codes."""


class CuspEtaError(Exception):
    """Base class for library errors."""


class InvalidInputError(CuspEtaError, ValueError):
    """Input violates a documented precondition or file format."""


class DomainError(InvalidInputError):
    """Argument outside the domain of a function (e.g. x <= a)."""


class NonConvergenceError(CuspEtaError, RuntimeError):
    """A numerical procedure did not reach its tolerance.

    ``details`` carries whatever diagnostics the raiser had at hand
    (last iterates, residuals).
    """

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details
