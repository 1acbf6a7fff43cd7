class InputError(ValueError):
    """Malformed or inconsistent input (shapes, ranges, indices)."""


class DomainError(ValueError):
    """Input outside an operation's mathematical domain, e.g. a KL support violation."""


class NumericalError(ArithmeticError):
    """A linear solve or factorization failed its accuracy guard."""
