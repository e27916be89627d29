"""Shared exception types."""


class FormatError(ValueError):
    """Malformed input file (PLY, camera JSON, sprite, ...)."""


class ContractError(ValueError):
    """An operation was called with arguments violating its preconditions."""
