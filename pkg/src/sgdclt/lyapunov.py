"""Limit covariances of SGD-type iterations as solutions of (damped) Lyapunov
equations  M W + W M^T - d0 W = S,  plus eigendecomposition closed forms,
inverse matrix square roots for whitening, and a matrix-exponential integral
oracle used for cross-validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import (
    DenominatorVanishes,
    NoConvergence,
    NonCommuting,
    NotSPD,
    NotStable,
    SingularSystem,
)

__all__ = [
    "LyapunovSolution",
    "solve_general",
    "vsgd_limit_cov",
    "msgd_limit_cov",
    "vanishing_limit_cov",
    "inv_sqrt",
    "integral_oracle",
]

# Residual certificate threshold; chosen to sit >= 3 orders of magnitude below
# any Monte Carlo error this solver's output is compared against.
RESIDUAL_TOL = 1e-9
MAX_DIM = 64


def _as_square(M) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    return M


def _require_symmetric(S, name="S", tol=1e-12):
    S = _as_square(S)
    if not np.allclose(S, S.T, atol=tol * max(1.0, float(np.abs(S).max()))):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (S + S.T)


def residual_norm(M, W, S, d0=0.0) -> float:
    """Frobenius norm of M W + W M^T - d0 W - S."""
    M, W, S = map(np.asarray, (M, W, S))
    return float(np.linalg.norm(M @ W + W @ M.T - d0 * W - S, ord="fro"))


@dataclass
class LyapunovSolution:
    W: np.ndarray
    residual: float
    method: str

    def __post_init__(self):
        self.W = 0.5 * (self.W + self.W.T)


def solve_general(M, S, d0: float = 0.0) -> LyapunovSolution:
    """Solve M W + W M^T - d0 W = S by dense linearization over the n^2
    unknowns (vec form).

    Requires the shifted matrix M - (d0/2) I to have spectrum in the open
    right half plane; raises :class:`NotStable` otherwise and
    :class:`SingularSystem` when an eigenvalue pairing lambda_i + lambda_j
    equals d0, which makes the linear system singular.
    """
    M = _as_square(M)
    S = _require_symmetric(S)
    n = M.shape[0]
    if n > MAX_DIM:
        raise ValueError(f"dimension {n} exceeds supported maximum {MAX_DIM}")
    shifted = M - 0.5 * d0 * np.eye(n)
    eigs = np.linalg.eigvals(shifted)
    if np.min(eigs.real) <= 0:
        raise NotStable(
            f"M - (d0/2) I has an eigenvalue with real part {np.min(eigs.real):.3e} <= 0"
        )
    K = np.kron(np.eye(n), shifted) + np.kron(shifted, np.eye(n))
    try:
        w = np.linalg.solve(K, S.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    W = 0.5 * (w.reshape(n, n) + w.reshape(n, n).T)
    res = residual_norm(M, W, S, d0)
    if not np.isfinite(res) or res > RESIDUAL_TOL * max(1.0, np.linalg.norm(S, "fro")):
        raise SingularSystem(
            f"linear system numerically singular (residual {res:.3e}); "
            "an eigenvalue pairing lambda_i + lambda_j is too close to d0"
        )
    return LyapunovSolution(W=W, residual=res, method="Kronecker")


def _eigh_spd(A, name="A"):
    A = _require_symmetric(A, name)
    lam, U = np.linalg.eigh(A)
    if lam.min() <= 0:
        raise NotSPD(f"{name} has eigenvalue {lam.min():.3e} <= 0")
    return lam, U


def vsgd_limit_cov(A, Sigma, d0: float = 0.0, convention: str = "equation") -> LyapunovSolution:
    """Closed-form limit covariance for the vanilla iteration via the
    eigendecomposition of A.

    ``convention="equation"`` solves A W + W A^T - d0 W = Sigma, i.e. the
    component form W'_ij = Sigma'_ij / (lambda_i + lambda_j - d0) in the
    eigenbasis.  ``convention="remark"`` uses denominators
    lambda_i + lambda_j - 2*d0 instead (equivalent to the equation form at
    2*d0).  The two readings coincide at d0 = 0; the equation form is what the
    ensemble normalization converges to, and both are exposed so the
    discrepancy stays visible in tests rather than being silently resolved.
    """
    lam, U = _eigh_spd(A)
    Sigma = _require_symmetric(Sigma, "Sigma")
    shift = d0 if convention == "equation" else 2.0 * d0
    if convention not in ("equation", "remark"):
        raise ValueError("convention must be 'equation' or 'remark'")
    denom = lam[:, None] + lam[None, :] - shift
    if np.min(denom) <= 1e-10:
        raise DenominatorVanishes(
            f"lambda_i + lambda_j - {shift:g} has minimum {np.min(denom):.3e}"
        )
    Sp = U.T @ Sigma @ U
    W = U @ (Sp / denom) @ U.T
    res = residual_norm(A, W, Sigma, shift)
    return LyapunovSolution(W=W, residual=res, method="ClosedFormVSGD")


def msgd_limit_cov(A, Sigma, mu_tilde: float) -> LyapunovSolution:
    """Closed-form 2d x 2d limit covariance for constant-damping momentum with
    d0 = 0, assembled blockwise in the eigenbasis of A:

        H_ij = 2 mu~ S_ij / q_ij,   J_ij = mu~ (l_i + l_j) S_ij / q_ij,
        B_ij = (l_j - l_i) S_ij / q_ij,   q_ij = 2 mu~^2 (l_i + l_j) + (l_i - l_j)^2,

    with W = [[H, B^T], [B, J]] mapped back by diag(U, U).  Solves
    D W + W D^T = blockdiag(0, Sigma) for D = [[0, -I], [A, mu~ I]].
    """
    if mu_tilde <= 0:
        raise ValueError("mu_tilde must be positive")
    lam, U = _eigh_spd(A)
    Sigma = _require_symmetric(Sigma, "Sigma")
    Sp = U.T @ Sigma @ U
    li, lj = lam[:, None], lam[None, :]
    q = 2.0 * mu_tilde**2 * (li + lj) + (li - lj) ** 2
    if np.min(q) <= 1e-12:
        raise DenominatorVanishes(f"denominator minimum {np.min(q):.3e}")
    H = 2.0 * mu_tilde * Sp / q
    J = mu_tilde * (li + lj) * Sp / q
    B = (lj - li) * Sp / q
    d = len(lam)
    Wp = np.block([[H, B.T], [B, J]])
    T = np.block([[U, np.zeros((d, d))], [np.zeros((d, d)), U]])
    W = T @ Wp @ T.T
    D = np.block([[np.zeros((d, d)), -np.eye(d)], [A, mu_tilde * np.eye(d)]])
    St = np.block([[np.zeros((d, d)), np.zeros((d, d))], [np.zeros((d, d)), Sigma]])
    res = residual_norm(D, W, St)
    return LyapunovSolution(W=W, residual=res, method="ClosedFormMSGD")


def vanishing_limit_cov(A, Sigma) -> LyapunovSolution:
    """Limit covariance (1/2) blockdiag(A^{-1} Sigma, Sigma) for vanishing
    damping; valid only when A and Sigma commute (checked), which makes
    A^{-1} Sigma symmetric.

    The result satisfies the two stationarity conditions Dt W + W Dt^T = 0 and
    Et W + W Et = blockdiag(0, Sigma) for Dt = [[0, -I], [A, 0]],
    Et = blockdiag(0, I); both residuals are folded into the certificate.
    """
    lam, _ = _eigh_spd(A)
    Sigma = _require_symmetric(Sigma, "Sigma")
    comm = np.linalg.norm(A @ Sigma - Sigma @ A, "fro")
    bound = 1e-10 * np.linalg.norm(A, "fro") * np.linalg.norm(Sigma, "fro")
    if comm > bound:
        raise NonCommuting(f"|A Sigma - Sigma A| = {comm:.3e} exceeds {bound:.3e}")
    d = A.shape[0]
    Ainv_S = np.linalg.solve(A, Sigma)
    Ainv_S = 0.5 * (Ainv_S + Ainv_S.T)
    W = np.zeros((2 * d, 2 * d))
    W[:d, :d] = 0.5 * Ainv_S
    W[d:, d:] = 0.5 * Sigma
    Dt = np.block([[np.zeros((d, d)), -np.eye(d)], [A, np.zeros((d, d))]])
    Et = np.zeros((2 * d, 2 * d))
    Et[d:, d:] = np.eye(d)
    St = np.zeros((2 * d, 2 * d))
    St[d:, d:] = Sigma
    res = max(
        residual_norm(Dt, W, np.zeros_like(W)),
        float(np.linalg.norm(Et @ W + W @ Et - St, "fro")),
    )
    return LyapunovSolution(W=W, residual=res, method="ClosedFormVanishing")


def inv_sqrt(S) -> np.ndarray:
    """Symmetric inverse square root S^{-1/2} via eigendecomposition."""
    S = _require_symmetric(S)
    lam, U = np.linalg.eigh(S)
    if lam.min() <= 1e-12:
        raise NotSPD(f"matrix has eigenvalue {lam.min():.3e} <= 1e-12")
    return U @ np.diag(1.0 / np.sqrt(lam)) @ U.T


def integral_oracle(M, S, tol: float = 1e-6, max_refine: int = 8) -> np.ndarray:
    """Quadrature oracle for W = integral_0^inf exp(-t M) S exp(-t M^T) dt,
    the unique solution of M W + W M^T = S for stable M.

    Integrates one short panel [0, dt] with Simpson's rule, then doubles the
    horizon exactly via W(2t) = W(t) + E W(t) E^T, E(2t) = E(t)^2 (a geometric
    time grid), and Richardson-refines dt until the Lyapunov residual drops
    below ``tol * max(1, |S|_F)``.  Independent of :func:`solve_general` by
    construction; intended for cross-validation.
    """
    M = _as_square(M)
    S = _require_symmetric(S)
    eigs = np.linalg.eigvals(M)
    if np.min(eigs.real) <= 0:
        raise NotStable("integral diverges: M has an eigenvalue with Re <= 0")
    target = tol * max(1.0, np.linalg.norm(S, "fro"))
    dt = 0.5 / max(1.0, float(np.linalg.norm(M, 2)))
    for _ in range(max_refine):
        E_half = expm(-0.5 * dt * M)
        E = E_half @ E_half
        mid = E_half @ S @ E_half.T
        W = dt / 6.0 * (S + 4.0 * mid + E @ S @ E.T)
        # exact horizon doubling until the propagator dies out
        for _ in range(200):
            W = W + E @ W @ E.T
            E = E @ E
            if np.linalg.norm(E, "fro") < 1e-300:
                break
            if residual_norm(M, W, S) <= target and np.linalg.norm(E, "fro") < 1e-14:
                break
        W = 0.5 * (W + W.T)
        if residual_norm(M, W, S) <= target:
            return W
        dt *= 0.5
    raise NoConvergence(
        f"residual {residual_norm(M, W, S):.3e} above target {target:.3e} "
        f"after {max_refine} refinements"
    )
