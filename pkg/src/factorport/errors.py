"""Exception hierarchy shared by all factorport modules."""


class FactorportError(Exception):
    """Base class for all errors raised by this package."""


class PanelParseError(FactorportError):
    """Malformed or duplicated rows in a panel/factor CSV."""


class UniverseError(FactorportError):
    """Fewer than two assets survive the universe filters."""


class SplitError(FactorportError):
    """Train/validation split would leave an empty block."""


class RankError(FactorportError):
    """Requested component count exceeds the numerical rank."""


class DegenerateInputError(FactorportError):
    """Input carries no usable signal (e.g. zero cross-covariance)."""


class ShapeError(FactorportError):
    """Matrix dimensions do not line up."""


class CollinearityError(FactorportError):
    """Regressor matrix is rank deficient."""


class InsufficientDataError(FactorportError):
    """Too few observations for the requested estimate."""


class InputError(FactorportError):
    """Non-finite or otherwise invalid numeric input."""


class FitError(FactorportError):
    """An iterative estimator failed to converge."""


class DivergenceError(FitError):
    """Training loss became non-finite."""


class ConditioningError(FactorportError):
    """Matrix is too ill-conditioned to invert reliably."""


class AssemblyError(FactorportError):
    """A covariance assembly is missing a required ingredient."""


class ParameterError(FactorportError):
    """A parameter value is outside its documented range."""


class UndefinedError(FactorportError):
    """The requested statistic is undefined for this input."""


class ConfigError(FactorportError):
    """Run configuration is invalid; message lists all violations."""


class TuningError(FactorportError):
    """Every hyperparameter grid point failed."""


class MappingError(FactorportError):
    """A variable has no group assignment."""
