"""Exception hierarchy.

Usage errors (bad flags, malformed files) are raised by the CLI layer as
``UsageError``; everything else here signals a numeric or validation failure
and maps to exit code 2 in the CLI.
"""


class DpcovError(Exception):
    """Base class for all package errors."""


class InputError(DpcovError):
    """Invalid data passed to a library operation."""


class ConvergenceError(DpcovError):
    """An iterative solve failed to reach tolerance."""


class QuadratureError(DpcovError):
    """A quadrature did not stabilize at the requested tolerance."""


class CalibrationError(DpcovError):
    """Degenerate or unusable null calibration (covariance, critical value)."""


class SingularityError(DpcovError):
    """A statistic hit a singular point (e.g. log of a zero eigenvalue)."""


class UsageError(DpcovError):
    """Command-line usage problem; maps to exit code 1."""
