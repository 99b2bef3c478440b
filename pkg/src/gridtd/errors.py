"""Exception types shared across the package."""


class GridTDError(Exception):
    pass


class InvalidArgument(GridTDError, ValueError):
    """Bad shapes, lengths or parameter values."""


class OutOfDomain(GridTDError, ValueError):
    """A coordinate fell outside the half-open unit cube."""


class TapeStateError(GridTDError, RuntimeError):
    """Reverse pass requested on a tape with nothing recorded."""


class DivergenceError(GridTDError, RuntimeError):
    """An optimisation loss became non-finite."""
