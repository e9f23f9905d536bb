"""Exception hierarchy shared by all spdecontrol modules."""


class SpdeControlError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateVariance(SpdeControlError):
    """Residual variance of the information variable is (numerically) zero."""


class QuadratureFailure(SpdeControlError):
    """Adaptive Fourier quadrature could not reach the requested tolerance."""


class UnknownMark(SpdeControlError):
    """A jump mark was requested that is not an atom of the Levy measure."""


class DivisionUnstable(SpdeControlError):
    """Conditional-density denominator below the safe division floor."""


class MissingDerivativeCallback(SpdeControlError):
    """A stochastic terminal-weight model was supplied without its derivative."""


class NonParabolic(SpdeControlError):
    """Second-order coefficient negative somewhere on the grid."""


class LinearSolveFailure(SpdeControlError):
    """The implicit banded system was singular or the solve did not finish."""


class StepTooLarge(SpdeControlError):
    """A perturbation step would push the control outside the admissible set."""


class DegenerateVolatility(SpdeControlError):
    """Volatility coefficient not bounded away from zero."""


class WealthNonpositive(SpdeControlError):
    """A wealth path hit a nonpositive value where log-utility is required."""


class MassCollapse(SpdeControlError):
    """Unnormalized filter density has (numerically) no mass left."""


class WeightDegeneracy(SpdeControlError):
    """Particle weights collapsed; effective sample size below threshold."""


class DegenerateCurvature(SpdeControlError):
    """Feedback-control denominator (curvature moment) too close to zero."""


class BoundaryViolation(SpdeControlError):
    """A grid function that must vanish at the boundary does not."""


class ConfigError(SpdeControlError):
    """Experiment configuration failed schema or constraint validation."""


class NumericalCheckFailure(SpdeControlError):
    """A configured numerical acceptance check did not pass."""
