"""Error types shared across the package."""


class NlabError(Exception):
    """Base class for all package errors."""


class InvalidArgument(NlabError, ValueError):
    """An argument violates a documented precondition."""


class NumericFailure(NlabError, ArithmeticError):
    """A computation produced non-finite values."""


class ContractViolation(NlabError, RuntimeError):
    """An API was used out of order (e.g. backward without a train-mode cache)."""


class FormatError(NlabError, ValueError):
    """A binary or text input does not match its documented layout."""


class DegenerateInput(NlabError, ValueError):
    """Input data has no usable structure (e.g. all loss values identical)."""
