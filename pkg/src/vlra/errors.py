"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Operands have incompatible or invalid dimensions."""


class DomainError(ValueError):
    """Numeric input outside the operation's domain (NaN/Inf, empty range)."""


class DegenerateInputError(ValueError):
    """Input is structurally degenerate for the requested computation."""


class StaleTapeError(RuntimeError):
    """A backward pass was given a tape recorded before a parameter update."""
