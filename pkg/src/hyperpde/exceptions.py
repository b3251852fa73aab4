"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericalError and subclasses -> 3, everything I/O related -> 4.
"""


class HyperPdeError(Exception):
    """Base class for package errors."""


class ConfigError(HyperPdeError):
    """Bad configuration: unknown keys, out-of-range values, schema mismatch."""


class ShapeError(HyperPdeError):
    """Array shape or dimension mismatch detected before compute."""


class NumericalError(HyperPdeError):
    """Numerical failure: non-finite values, factorization failure, blow-up."""


class NonFiniteError(NumericalError):
    """A tape node produced NaN or Inf; message names the node."""


class SolverError(NumericalError):
    """A reference solver violated its stability or growth bound."""


class DivergenceError(NumericalError):
    """Training loss exceeded the divergence threshold or went non-finite."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class UnknownPrimitiveError(HyperPdeError):
    """Attempt to record an operation that is not in the primitive registry."""


class FormatError(HyperPdeError):
    """Binary file does not conform to the documented layout."""
