"""Shared exception bases.

Concrete errors live next to the code that raises them; the CLI maps
these bases onto exit codes (data problems vs. provider/budget problems).
"""


class RestoryError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RestoryError):
    """Invalid input data: bad source text, malformed files, broken invariants."""


class GatewayError(RestoryError):
    """Provider transport, rejection, or budget failures."""
