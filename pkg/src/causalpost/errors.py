"""Exception and warning taxonomy shared across the package."""


class CausalPostError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(CausalPostError, ValueError):
    """A parameter value is outside its legal range (e.g. sd <= 0)."""


class DomainError(CausalPostError, ValueError):
    """Data values are outside the support a model requires."""


class ShapeError(CausalPostError, ValueError):
    """Array arguments have incompatible shapes or lengths."""


class SchemaError(CausalPostError, ValueError):
    """A dataset or config is missing, mistyping, or misnaming a column/key."""


class InitializationError(CausalPostError, RuntimeError):
    """The sampler could not start (non-finite posterior at the init point)."""


class SingularModelError(CausalPostError, RuntimeError):
    """A design matrix is rank deficient; reports the offending columns."""


class MissingStratumError(CausalPostError, ValueError):
    """A requested stratum has no observations."""


class UnsupportedKindError(CausalPostError, ValueError):
    """An estimand kind is not supported by the requested operation."""


class ToleranceUnreachableError(CausalPostError, RuntimeError):
    """An adaptive search exhausted its budget without meeting tolerance."""


class CholeskyError(CausalPostError, RuntimeError):
    """A covariance factorization failed; carries the hyperparameter values."""


class PositivityWarning(UserWarning):
    """Some treatment level has no observations; estimates extrapolate."""


class StuckChainWarning(UserWarning):
    """A sampler block rejected every proposal over a long window."""


class ClampWarning(UserWarning):
    """A standardized mean was clamped away from {0, 1} before odds."""


class SingleChainWarning(UserWarning):
    """Only one chain was run; split-chain diagnostics are unavailable."""


class OraclePrecisionWarning(UserWarning):
    """Monte Carlo budget too small to pin the truth to three digits."""
