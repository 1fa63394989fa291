"""The four stochastic iterations under study, each as a pure step function on
an immutable state:

  vanilla:            x_k = x_{k-1} - a_k g_k
  momentum (const):   v_k = v_{k-1} - mu~ a_k v_{k-1} - a_k g_k ;  x_k = x_{k-1} + a_k v_k
  Nesterov (const):   v_k = (1 - mu~ a_k) v_{k-1} - a_k g(x_{k-1} + b_k v_{k-1}) ; x_k = x_{k-1} + a_k v_k
  momentum (vanish):  as constant damping with mu_k from a vanishing schedule

with g_k a stochastic gradient at the indicated point.  The same array-level
update kernels drive both the single-state steps here and the vectorized
ensemble runner.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import NonFinite, NotHurwitz
from .problems import NoiseModel, Problem
from .schedules import DampingSchedule, Schedule, alpha_at

__all__ = [
    "Method",
    "OptState",
    "SystemMatrices",
    "init_state",
    "step_vsgd",
    "step_msgd_const",
    "step_nasgd_const",
    "step_msgd_vanishing",
    "system_matrices",
    "nesterov_beta",
    "hamiltonian",
]


class Method(str, Enum):
    VSGD = "vsgd"
    MSGD_CONST = "msgd_const"
    NASGD_CONST = "nasgd_const"
    MSGD_VANISHING = "msgd_vanishing"

    @property
    def uses_momentum(self) -> bool:
        return self is not Method.VSGD

    @property
    def scale_rule(self) -> str:
        """Normalization under which the iterate covariance has a limit."""
        return "beta" if self is Method.MSGD_VANISHING else "alpha"


@dataclass(frozen=True)
class OptState:
    """Iterate (and velocity, for momentum methods) after step k."""

    x: np.ndarray
    v: np.ndarray | None
    k: int
    method: Method

    def __post_init__(self):
        if self.method.uses_momentum != (self.v is not None):
            raise ValueError("v must be present exactly for momentum methods")


def init_state(method: Method, x0, v0=None) -> OptState:
    x0 = np.asarray(x0, dtype=float)
    if method.uses_momentum:
        v0 = np.zeros_like(x0) if v0 is None else np.asarray(v0, dtype=float)
    else:
        v0 = None
    return OptState(x=x0, v=v0, k=0, method=method)


# ---------------------------------------------------------------------------
# array-level update kernels (shared with the vectorized ensemble runner)

def update_vsgd(x, g, a):
    return x - a * g


def update_msgd(x, v, g, a, mu):
    v_new = v - mu * a * v - a * g
    return x + a * v_new, v_new


def update_nasgd(x, v, g_at_lookahead, a, mu_tilde):
    v_new = (1.0 - mu_tilde * a) * v - a * g_at_lookahead
    return x + a * v_new, v_new


def nesterov_beta(mu_tilde: float, a_k: float, a_prev: float) -> float:
    """Momentum coefficient b_k = (1 - mu~ a_k) a_k / a_{k-1}; the first step
    uses a_0 := a_1."""
    return (1.0 - mu_tilde * a_k) * a_k / a_prev


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise NonFinite("iterate overflowed (diverging run)")


def step_vsgd(state: OptState, p: Problem, noise: NoiseModel, s: Schedule, rng) -> OptState:
    """One vanilla step x_k = x_{k-1} - a_k g with g stochastic at x_{k-1}."""
    k = state.k + 1
    with np.errstate(over="ignore", invalid="ignore"):
        g = noise.sample_gradient(p, state.x, rng)
        x = update_vsgd(state.x, g, alpha_at(s, k))
    _check_finite(x)
    return replace(state, x=x, k=k)


def step_msgd_const(
    state: OptState, p: Problem, noise: NoiseModel, s: Schedule, mu_tilde: float, rng
) -> OptState:
    """Constant-damping momentum step; the velocity updates first and the new
    velocity moves the iterate."""
    k = state.k + 1
    with np.errstate(over="ignore", invalid="ignore"):
        g = noise.sample_gradient(p, state.x, rng)
        x, v = update_msgd(state.x, state.v, g, alpha_at(s, k), mu_tilde)
    _check_finite(x)
    _check_finite(v)
    return replace(state, x=x, v=v, k=k)


def step_nasgd_const(
    state: OptState, p: Problem, noise: NoiseModel, s: Schedule, mu_tilde: float, rng
) -> OptState:
    """Nesterov step: the gradient is sampled at the lookahead point
    x_{k-1} + b_k v_{k-1}."""
    k = state.k + 1
    a_k = alpha_at(s, k)
    a_prev = alpha_at(s, k - 1) if k > 1 else a_k
    b_k = nesterov_beta(mu_tilde, a_k, a_prev)
    with np.errstate(over="ignore", invalid="ignore"):
        y = state.x + b_k * state.v
        g = noise.sample_gradient(p, y, rng)
        x, v = update_nasgd(state.x, state.v, g, a_k, mu_tilde)
    _check_finite(x)
    _check_finite(v)
    return replace(state, x=x, v=v, k=k)


def step_msgd_vanishing(
    state: OptState, p: Problem, noise: NoiseModel, s: Schedule, d: DampingSchedule, rng
) -> OptState:
    """Momentum step with damping mu_k taken from the damping schedule; the
    recursion is identical to the constant-damping one."""
    k = state.k + 1
    mu_k = float(d.mu(np.asarray(float(k))))
    with np.errstate(over="ignore", invalid="ignore"):
        g = noise.sample_gradient(p, state.x, rng)
        x, v = update_msgd(state.x, state.v, g, alpha_at(s, k), mu_k)
    _check_finite(x)
    _check_finite(v)
    return replace(state, x=x, v=v, k=k)


def hamiltonian(p: Problem, state: OptState) -> float:
    """f(x_k) - f(x*) + |v_k|^2 / 2, the energy that decays under momentum
    dynamics with zero noise and small constant steps."""
    if state.v is None:
        raise ValueError("hamiltonian is defined for momentum methods")
    return float(p.f(state.x) - p.f(p.x_star) + 0.5 * np.sum(state.v**2))


@dataclass(frozen=True)
class SystemMatrices:
    """Block matrices of the linearized joint dynamics of Z = (x - x*, v),
    their spectral abscissa, and the checkable damping constant."""

    D: np.ndarray
    E: np.ndarray
    Dtilde: np.ndarray | None
    Etilde: np.ndarray | None
    lambda_D: float
    h_D: float | None


def _h_d_msgd(mu: float, L: float, mu_tilde: float) -> float:
    zeta = mu / (2.0 * L + mu_tilde**2)
    return min(2.0 / (zeta * mu), 2.0 * (1.0 + mu * zeta**2) / mu_tilde)


def _h_d_nasgd(mu: float, L: float, mu_tilde: float) -> float:
    zeta = (mu + mu_tilde) / (2.0 * L + mu_tilde**2)
    return min(2.0 / zeta, 2.0 * (1.0 + mu * zeta**2) / mu_tilde)


def system_matrices(
    p: Problem,
    method: Method,
    mu_tilde: float | None = None,
    damping: DampingSchedule | None = None,
) -> SystemMatrices:
    """Assemble the joint-dynamics blocks for the requested method.

    Constant-damping methods get D = [[0, -I], [A, mu~ I (+A for Nesterov)]]
    and E = [[A, mu~ I], [0, 0]]; the spectral abscissa lambda_D must be
    positive (otherwise :class:`NotHurwitz`).  Vanishing damping gets the
    split Dt = [[0, -I], [A, 0]], Et = blockdiag(0, I); Dt is only neutrally
    stable (lambda_D = 0 up to roundoff), the damping arriving through the
    mu_k Et term, so no Hurwitz check applies.  For the vanilla method D = A.
    """
    A = p.hessian
    d = A.shape[0]
    Z, eye = np.zeros((d, d)), np.eye(d)

    if method is Method.VSGD:
        lam = float(np.min(np.linalg.eigvals(A).real))
        return SystemMatrices(D=A.copy(), E=Z.copy(), Dtilde=None, Etilde=None,
                              lambda_D=lam, h_D=None)

    if method is Method.MSGD_VANISHING:
        Dt = np.block([[Z, -eye], [A, Z]])
        Et = np.block([[Z, Z], [Z, eye]])
        lam = float(np.min(np.linalg.eigvals(Dt).real))
        return SystemMatrices(D=Dt.copy(), E=Et.copy(), Dtilde=Dt, Etilde=Et,
                              lambda_D=lam, h_D=None)

    if mu_tilde is None or mu_tilde <= 0:
        raise ValueError("constant-damping methods need mu_tilde > 0")
    if method is Method.MSGD_CONST:
        D = np.block([[Z, -eye], [A, mu_tilde * eye]])
        h_d = _h_d_msgd(p.mu, p.L, mu_tilde)
    elif method is Method.NASGD_CONST:
        D = np.block([[Z, -eye], [A, mu_tilde * eye + A]])
        h_d = _h_d_nasgd(p.mu, p.L, mu_tilde)
    else:
        raise ValueError(f"unsupported method {method}")
    E = np.block([[A, mu_tilde * eye], [Z, Z]])
    lam = float(np.min(np.linalg.eigvals(D).real))
    if lam <= 0:
        raise NotHurwitz(f"spectral abscissa {lam:.3e} <= 0")
    return SystemMatrices(D=D, E=E, Dtilde=None, Etilde=None, lambda_D=lam, h_D=h_d)
