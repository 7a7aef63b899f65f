"""Exception taxonomy shared by the CLI exit-code mapping."""


class DataError(Exception):
    """Missing or malformed input artifacts (exit code 2)."""


class NumericalError(Exception):
    """NaN, Inf, or divergence during computation (exit code 3)."""
