"""Exception types raised across the package."""


class InvalidArgument(ValueError):
    pass


class InconsistentOverlapError(InvalidArgument):
    """An overlap table whose areas do not add up for some coarse unit."""

    def __init__(self, coarse_id, total, expected):
        self.coarse_id = coarse_id
        self.total = total
        self.expected = expected
        super().__init__(
            f"overlap areas for coarse unit {coarse_id!r} sum to {total!r}, "
            f"expected {expected!r}"
        )


class DisjointnessError(InvalidArgument):
    pass


class NumericalError(ArithmeticError):
    """A factorization or density evaluation failed.

    ``iteration`` and ``state`` are filled in when raised from inside a chain.
    """

    def __init__(self, message, iteration=None, state=None):
        super().__init__(message)
        self.iteration = iteration
        self.state = state


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted field path."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
