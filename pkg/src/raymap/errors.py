"""Exception types shared across the package.

Argument validation raises plain ValueError; the classes here mark failures
that callers may want to handle distinctly (and that the CLI maps to exit
codes: format/IO problems -> 4, numeric/training problems -> 3).
"""


class RaymapError(Exception):
    """Base class for package-specific failures."""


class GenerationError(RaymapError):
    """Scene generation exhausted its placement retries."""


class FormatError(RaymapError):
    """A binary file is truncated or carries the wrong magic."""


class DegenerateShiftError(RaymapError):
    """The estimated domain shift is numerically zero; no direction exists."""


class ConvergenceError(RaymapError):
    """An iterative numeric routine failed to converge."""


class TrainingDivergedError(RaymapError):
    """The training loss exploded past the divergence guard."""


class UndefinedMetricError(RaymapError):
    """A metric has no value for the given input (e.g. all-zero reference)."""


class NumericError(RaymapError):
    """A value left the range where a formula is well conditioned."""
