"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not line up."""


class DomainError(ValueError):
    """An argument is outside the set of values an operation accepts."""


class ContractError(RuntimeError):
    """An object is used in a state its operation does not allow."""
