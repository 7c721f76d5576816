"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class SSLCoxError(Exception):
    exit_code = 1


class InputError(SSLCoxError, ValueError):
    """Malformed or invalid user input."""

    exit_code = 1


class DegeneratePredictorError(InputError):
    """Predictor has too few distinct values for the requested basis."""


class BasisConstructionError(SSLCoxError):
    """Penalty matrix does not have the expected null-space structure."""

    exit_code = 2


class NumericalError(SSLCoxError, ArithmeticError):
    """Non-finite quantities during fitting.

    Attributes
    ----------
    diagnostics : dict
        Iteration counters and the offending quantities.
    """

    exit_code = 2

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CalibrationError(SSLCoxError):
    """Censoring-scale bisection could not bracket the target."""

    exit_code = 2

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class TuningError(SSLCoxError):
    """No spike scale on the path produced a usable cross-validation score."""

    exit_code = 3


class UndefinedMetricError(SSLCoxError, ValueError):
    """Metric has no comparable pairs / events to be computed on."""

    exit_code = 1
