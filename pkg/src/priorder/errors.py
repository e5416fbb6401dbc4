"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when inputs violate a documented contract (bad matrix entry,
    dimension mismatch, malformed file schema, ...)."""


class SizeLimitError(ValidationError):
    """Raised when an exact method is asked for an instance above its hard
    player-count limit."""


class MissingUtilityError(LookupError):
    """Raised by a table-backed utility when a queried coalition mask has no
    row in the table."""
