"""Exception hierarchy shared by every module; the CLI maps these to exit codes."""


class StmfaError(Exception):
    """Base class for all package errors."""


class ContractError(StmfaError, ValueError):
    """A documented precondition was violated (bad shape, odd extent, ...)."""


class DomainError(StmfaError, ValueError):
    """An operation was evaluated outside its mathematical domain."""


class FormatError(StmfaError):
    """A binary or text file does not follow its declared format."""


class NumericalError(StmfaError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""
