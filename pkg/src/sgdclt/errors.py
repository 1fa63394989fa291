"""Exception hierarchy shared by all modules."""


class SgdCltError(Exception):
    """Base class for failures raised by this package."""


class ConfigError(SgdCltError):
    """Malformed or inconsistent experiment configuration."""


class NonConvergent(SgdCltError):
    """A numerical limit estimate did not settle within tolerance."""


class InvalidRange(SgdCltError):
    """Inputs leave the validity range of a check (e.g. 1 - h0*alpha_k <= 0)."""


class IncompatiblePair(SgdCltError):
    """Learning-rate / damping pair violates the vanishing-damping preconditions."""


class NotSPD(SgdCltError):
    """Matrix expected to be symmetric positive definite is not."""


class DegenerateSigma(SgdCltError):
    """Gradient-noise covariance is (numerically) singular."""


class NonFinite(SgdCltError):
    """An iterate overflowed to inf/nan (diverging run)."""


class NotHurwitz(SgdCltError):
    """System matrix has an eigenvalue with nonpositive real part."""


class NotStable(SgdCltError):
    """Shifted Lyapunov coefficient matrix is not stable."""


class SingularSystem(SgdCltError):
    """Linearized Lyapunov system is numerically singular."""


class DenominatorVanishes(SgdCltError):
    """A closed-form eigenvalue denominator is (numerically) zero."""


class NonCommuting(SgdCltError):
    """A and Sigma do not commute, so the block-diagonal limit form is invalid."""


class NoConvergence(SgdCltError):
    """Iterative procedure exhausted its budget before reaching tolerance."""


class SampleSizeOutOfRange(SgdCltError):
    """Sample size outside the validity range of the W-statistic approximation."""


class DegenerateSample(SgdCltError):
    """Sample has (numerically) zero variance."""


class TooManyFailures(SgdCltError):
    """More than the tolerated fraction of replicas went non-finite."""


class WrongRegime(SgdCltError):
    """Schedule exponent outside the regime required by the experiment."""
