"""Exception types shared across the package.

Two families matter for the CLI exit codes: ConfigError (bad user input,
exit code 2) and NumericalError (the math gave up, exit code 3). Plain
ValueError is reserved for programmer-facing contract violations such as
dimension mismatches.
"""

from __future__ import annotations


class OdetrackError(Exception):
    """Base class for package-specific errors."""


class ConfigError(OdetrackError):
    """Invalid user input: unknown model names, bad config values, ..."""


class DataFormatError(ConfigError):
    """Malformed observation or constants file."""


class MissingConstantsError(ConfigError):
    """A model catalog entry needs a constants file that was not supplied."""


class NumericalError(OdetrackError):
    """Base class for numerical failures that abort a run."""


class DivergenceError(NumericalError):
    """Solver iterates blew up (non-finite or exploding trajectory)."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class SingularInitialCost(NumericalError):
    """R_0 is numerically singular, the profiled initial state is undefined.

    Carries a reciprocal-condition-number estimate so callers can report
    how close to singular the system was.
    """

    def __init__(self, message: str, rcond: float = 0.0):
        super().__init__(message)
        self.rcond = rcond


class EstimationFailed(NumericalError):
    """No optimizer start produced a finite objective value."""
