"""Exception hierarchy.

Every error carries a short machine-readable ``code``. The CLI maps
:class:`ConfigError` to exit status 2 and :class:`DataError` to exit status 3.
"""


class OvsError(Exception):
    code = "error"


class ConfigError(OvsError, ValueError):
    """Invalid configuration or violated precondition on user-supplied knobs."""

    code = "config"


class DataError(OvsError, ValueError):
    """Malformed, inconsistent or missing input data."""

    code = "data"


class DegenerateInputError(DataError):
    code = "degenerate_input"


class ShapeError(DataError):
    code = "shape"


class EmptyRegionError(DataError):
    code = "empty_region"


class DegenerateColumnError(DataError):
    code = "degenerate_column"


class DivergenceError(ConfigError):
    code = "divergence"

    def __init__(self, message, iteration=None, spectral_radius=None):
        super().__init__(message)
        self.iteration = iteration
        self.spectral_radius = spectral_radius


class NonConvergentConfigError(ConfigError):
    """rho(omega^2 A) >= 1, so the Neumann series behind the closed form diverges."""

    code = "non_convergent"

    def __init__(self, message, lam=None, omega=None, spectral_radius=None):
        super().__init__(message)
        self.lam = lam
        self.omega = omega
        self.spectral_radius = spectral_radius


class SolverError(DataError):
    code = "solver"


class InsufficientPairsError(ConfigError):
    code = "insufficient_pairs"


class MissingLabelError(DataError):
    code = "missing_label"


class UnscoredCategoryError(DataError):
    code = "unscored_category"


class EmptyInputError(DataError):
    code = "empty_input"


class VocabularyError(DataError):
    code = "vocabulary"


class EmptyEvaluationError(DataError):
    code = "empty_evaluation"


class AmbiguityError(DataError):
    code = "ambiguous"

    def __init__(self, message, tied=()):
        super().__init__(message)
        self.tied = tuple(tied)


class InsufficientDistractorsError(ConfigError):
    code = "insufficient_distractors"


class FormatError(DataError):
    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class TruncatedFileError(FormatError):
    code = "truncated"

    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class TrailingBytesError(FormatError):
    code = "trailing_bytes"


class NonFiniteError(FormatError):
    code = "non_finite"
