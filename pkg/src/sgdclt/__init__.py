"""Numerical laboratory for the asymptotic normality of SGD-type iterations:
step-size schedules and their certificates, strongly convex test problems with
stochastic gradient oracles, vanilla/momentum/Nesterov iterations, limit
covariances from Lyapunov equations, ensemble simulation, and multivariate
normality testing.
"""

from . import ensemble, lyapunov, optimizers, problems, schedules, stats  # noqa: F401
from .errors import SgdCltError  # noqa: F401

__version__ = "0.1.0"
