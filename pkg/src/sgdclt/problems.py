"""Strongly convex test objectives with exact minimizers, Hessians, and
stochastic gradient oracles whose noise statistics are known in closed form:
quadratics with additive noise, penalized logistic regression with single-item
mini-batch noise, and the scalar cubic-perturbation objective used to break
the time-average normality claim.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import DegenerateSigma, NoConvergence, NotSPD

__all__ = [
    "Problem",
    "NoiseModel",
    "AdditiveNoise",
    "MiniBatchNoise",
    "LogisticDataset",
    "CounterexampleProblem",
    "make_quadratic",
    "generate_logistic",
    "logistic_problem",
    "solve_minimizer",
    "sample_stochastic_gradient",
    "sigma_at_min",
    "load_logistic_csv",
    "save_logistic_csv",
]

def default_feature_scales(d: int) -> np.ndarray:
    """Per-coordinate feature scales for synthetic logistic data: a few strong
    directions with a fast-decaying tail.  Real design matrices are rarely
    isotropic; this profile keeps the limit covariance concentrated on
    large-curvature directions, the regime in which desk-scale ensembles are
    sampling-error dominated rather than schedule-bias dominated.
    """
    strong = 5.0 * 0.6 ** np.arange(min(3, d))
    tail = 0.25 * 0.5 ** np.arange(max(0, d - 3))
    return np.concatenate([strong, tail])


@dataclass(frozen=True)
class Problem:
    """Twice-differentiable objective with known minimizer.

    ``f`` and ``grad`` accept arrays of shape (..., dim) and evaluate
    batchwise over leading axes.
    """

    dim: int
    f: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    x_star: np.ndarray
    hessian: np.ndarray
    mu: float
    L: float
    name: str = "problem"

    def __post_init__(self):
        g0 = np.linalg.norm(self.grad(self.x_star))
        if g0 > 1e-8:
            raise ValueError(f"gradient at x_star has norm {g0:.3e} > 1e-8")
        lam = np.linalg.eigvalsh(0.5 * (self.hessian + self.hessian.T))
        if lam.min() < self.mu - 1e-8 or lam.max() > self.L + 1e-8:
            raise ValueError("hessian eigenvalues leave the [mu, L] interval")


class NoiseModel:
    """Source of the stochastic-gradient perturbation xi_k."""

    def sigma(self, problem: Problem) -> np.ndarray:
        raise NotImplementedError

    def sample_gradient(self, problem, x, rng):
        """Stochastic gradient g with E[g | x] = grad f(x); x is (..., d)."""
        raise NotImplementedError


@dataclass(frozen=True)
class AdditiveNoise(NoiseModel):
    """g = grad f(x) - xi with xi drawn independently of x.

    ``dist`` is "gaussian" or "uniform"; the uniform variant draws iid
    components on [-sqrt(3), sqrt(3)] (unit variance, bounded) before the
    covariance transform, so both have E xi = 0 and Cov xi = Sigma exactly.
    """

    sigma_matrix: np.ndarray
    dist: str = "gaussian"

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.sigma_matrix, dtype=float))
        if not np.allclose(S, S.T):
            raise NotSPD("Sigma must be symmetric")
        if np.linalg.eigvalsh(S).min() <= 0:
            raise NotSPD("Sigma must be positive definite")
        object.__setattr__(self, "sigma_matrix", S)
        object.__setattr__(self, "_chol", np.linalg.cholesky(S))
        if self.dist not in ("gaussian", "uniform"):
            raise ValueError("dist must be 'gaussian' or 'uniform'")

    def sigma(self, problem) -> np.ndarray:
        return self.sigma_matrix

    def sample_xi(self, shape, rng) -> np.ndarray:
        if self.dist == "gaussian":
            z = rng.standard_normal(shape)
        else:
            z = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)
        return z @ self._chol.T

    def sample_gradient(self, problem, x, rng):
        xi = self.sample_xi(x.shape, rng)
        return problem.grad(x) - xi


@dataclass(frozen=True)
class MiniBatchNoise(NoiseModel):
    """Uniform without-replacement mini-batch gradient of a finite sum."""

    dataset: "LogisticDataset"
    batch_size: int = 1

    def __post_init__(self):
        if not 1 <= self.batch_size <= self.dataset.N:
            raise ValueError("batch_size must lie in [1, N]")

    def sigma(self, problem) -> np.ndarray:
        return sigma_at_min(problem, self)

    def sample_gradient(self, problem, x, rng):
        ds, B = self.dataset, self.batch_size
        if B == ds.N:
            return problem.grad(x)
        lead = x.shape[:-1]
        m = int(np.prod(lead)) if lead else 1
        xs = x.reshape(m, -1)
        if B == 1:
            idx = rng.integers(0, ds.N, size=m)
            g = ds.per_sample_grad(xs, idx)
        else:
            g = np.empty_like(xs)
            for r in range(m):
                sel = rng.choice(ds.N, size=B, replace=False)
                g[r] = ds.per_sample_grad(xs[r : r + 1].repeat(B, axis=0), sel).mean(axis=0)
        return g.reshape(x.shape)


@dataclass(frozen=True)
class LogisticDataset:
    """Finite-sum penalized logistic regression:

    f(x) = (1/N) sum_i [ln(1 + exp(w_i^T x)) - y_i w_i^T x] + (beta/2)|x|^2.
    """

    features: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,), values in {0, 1}
    penalty: float

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels, dtype=float)
        if W.shape[0] != y.shape[0]:
            raise ValueError("features and labels disagree on the sample count")
        if self.penalty <= 0:
            raise ValueError("penalty must be positive")
        object.__setattr__(self, "features", W)
        object.__setattr__(self, "labels", y)

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def f(self, x):
        x = np.asarray(x, dtype=float)
        z = x @ self.features.T  # (..., N)
        loss = np.logaddexp(0.0, z) - self.labels * z
        return loss.mean(axis=-1) + 0.5 * self.penalty * np.sum(x * x, axis=-1)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        z = x @ self.features.T
        r = expit(z) - self.labels  # (..., N)
        return r @ self.features / self.N + self.penalty * x

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        z = self.features @ x
        s = expit(z)
        Wd = self.features * (s * (1.0 - s))[:, None]
        return Wd.T @ self.features / self.N + self.penalty * np.eye(self.dim)

    def per_sample_grad(self, xs, idx):
        """Gradients of f_idx at rows of xs; xs is (m, d), idx is (m,)."""
        w = self.features[idx]  # (m, d)
        z = np.sum(w * xs, axis=-1)
        r = expit(z) - self.labels[idx]
        return w * r[:, None] + self.penalty * xs

    def smoothness_bound(self) -> float:
        """Global L: sigmoid curvature is at most 1/4."""
        gram = self.features.T @ self.features / self.N
        return 0.25 * float(np.linalg.eigvalsh(gram).max()) + self.penalty


def make_quadratic(A, noise: NoiseModel | None = None, name: str = "quadratic") -> Problem:
    """Problem with f(x) = x^T A x / 2 for SPD A; minimizer at the origin."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.allclose(A, A.T):
        raise NotSPD("A must be symmetric")
    lam = np.linalg.eigvalsh(A)
    if lam.min() <= 0:
        raise NotSPD(f"A has eigenvalue {lam.min():.3e} <= 0")
    d = A.shape[0]

    def f(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum((x @ A.T) * x, axis=-1)

    def grad(x):
        return np.asarray(x, dtype=float) @ A.T

    return Problem(
        dim=d,
        f=f,
        grad=grad,
        x_star=np.zeros(d),
        hessian=A,
        mu=float(lam.min()),
        L=float(lam.max()),
        name=name,
    )


def generate_logistic(
    d: int,
    N: int,
    beta: float,
    seed: int,
    feature_scales=None,
) -> LogisticDataset:
    """Synthesize a logistic dataset: features have independent centered
    normal entries scaled per coordinate (default
    :func:`default_feature_scales`), labels are Bernoulli draws from a hidden
    parameter aligned with the leading coordinates.  Deterministic per seed.
    """
    if d < 1 or N < d:
        raise ValueError("need d >= 1 and N >= d")
    rng = np.random.default_rng(seed)
    scales = default_feature_scales(d) if feature_scales is None \
        else np.asarray(feature_scales, dtype=float)
    if scales.shape != (d,):
        raise ValueError("feature_scales must have length d")
    W = rng.standard_normal((N, d)) * scales
    theta = np.zeros(d)
    theta[: min(3, d)] = np.array([1.0, -0.5, 0.25])[: min(3, d)]
    p = expit(W @ theta)
    y = (rng.random(N) < p).astype(float)
    return LogisticDataset(features=W, labels=y, penalty=beta)


def solve_minimizer(
    ds: LogisticDataset,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic full-gradient minimization of the logistic objective to
    |grad f(x*)| <= tol via damped Newton steps; returns (x*, hessian at x*).
    """
    x = np.zeros(ds.dim)
    fx = float(ds.f(x))
    for _ in range(max_iter):
        g = ds.grad(x)
        gnorm = np.linalg.norm(g)
        if gnorm <= tol:
            return x, ds.hess(x)
        step = np.linalg.solve(ds.hess(x), g)
        if gnorm <= 1e-5:
            # quadratic-convergence basin; Armijo would stall on roundoff here
            x = x - step
            fx = float(ds.f(x))
            continue
        t = 1.0
        while t > 1e-8:
            x_new = x - t * step
            f_new = float(ds.f(x_new))
            if f_new <= fx - 1e-4 * t * float(g @ step):
                x, fx = x_new, f_new
                break
            t *= 0.5
        else:
            break
    g = ds.grad(x)
    if np.linalg.norm(g) > tol:
        raise NoConvergence(f"gradient norm {np.linalg.norm(g):.3e} above {tol:g}")
    return x, ds.hess(x)


def logistic_problem(ds: LogisticDataset) -> Problem:
    """Problem view of a logistic dataset with computed minimizer."""
    x_star, H = solve_minimizer(ds)
    return Problem(
        dim=ds.dim,
        f=ds.f,
        grad=ds.grad,
        x_star=x_star,
        hessian=H,
        mu=ds.penalty,
        L=ds.smoothness_bound(),
        name="logistic",
    )


def sample_stochastic_gradient(problem: Problem, noise: NoiseModel, x, rng):
    """One stochastic gradient draw; returns (g, xi) with xi = grad f(x) - g."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    g = noise.sample_gradient(problem, x, rng)
    return g, problem.grad(x) - g


def sigma_at_min(problem: Problem, noise: NoiseModel) -> np.ndarray:
    """Exact noise covariance at the minimizer.

    Additive noise returns its defining matrix.  Mini-batch noise enumerates
    the per-sample gradients at x*; without-replacement batches of size B get
    the finite-population factor (N - B) / (N - 1) on Sigma_1 / B.  Raises
    :class:`DegenerateSigma` when the result is numerically singular, since
    every limit-covariance statement requires Sigma > 0.
    """
    if isinstance(noise, AdditiveNoise):
        S = noise.sigma_matrix
    elif isinstance(noise, MiniBatchNoise):
        ds = noise.dataset
        G = ds.per_sample_grad(
            np.repeat(problem.x_star[None, :], ds.N, axis=0), np.arange(ds.N)
        )
        Gc = G - G.mean(axis=0)
        S1 = Gc.T @ Gc / ds.N
        B = noise.batch_size
        if B == ds.N:
            S = np.zeros_like(S1)
        else:
            S = S1 / B * (ds.N - B) / (ds.N - 1.0)
    else:
        raise TypeError(f"unsupported noise model {type(noise).__name__}")
    S = 0.5 * (S + S.T)
    if np.linalg.eigvalsh(S).min() <= 1e-12:
        raise DegenerateSigma("noise covariance at the minimizer is singular")
    return S


@dataclass(frozen=True)
class CounterexampleProblem:
    """Scalar objective f(x) = x^2/2 + x^3/sqrt(1 + x^6) with bounded additive
    gradient noise b(w) ~ Uniform[-b_bound, b_bound].

    The perturbation R(x) = f'(x) - x = 3 x^2 / (1 + x^6)^{3/2} is nonnegative
    with R(x) <= 3 x^2 everywhere and R(x) >= x^2 on |x| <= 1, which is what
    defeats the time-average normality.  The mean objective is not globally
    convex (f'' dips below zero near x = -0.5), so this type deliberately does
    not claim a strong-convexity constant.
    """

    b_bound: float = 1.0
    dim: int = field(default=1, init=False)

    def __post_init__(self):
        if self.b_bound <= 0:
            raise ValueError("b_bound must be positive")

    @staticmethod
    def phi(x):
        x = np.asarray(x, dtype=float)
        return x**3 / np.sqrt(1.0 + x**6)

    @staticmethod
    def R(x):
        x = np.asarray(x, dtype=float)
        return 3.0 * x**2 / (1.0 + x**6) ** 1.5

    def f(self, x):
        x = np.asarray(x, dtype=float)[..., 0]
        return 0.5 * x**2 + self.phi(x)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        return x + self.R(x[..., 0])[..., None]

    @property
    def x_star(self):
        return np.zeros(1)

    @property
    def hessian(self):
        return np.ones((1, 1))  # phi''(0) = 0

    def noise(self) -> AdditiveNoise:
        var = self.b_bound**2 / 3.0
        return AdditiveNoise(sigma_matrix=np.array([[var]]), dist="uniform")


def save_logistic_csv(ds: LogisticDataset, path) -> None:
    """Write the dataset with header w_1,...,w_d,y (one row per sample)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"w_{j + 1}" for j in range(ds.dim)] + ["y"])
        for w, y in zip(ds.features, ds.labels):
            writer.writerow([format(float(v), ".17g") for v in w] + [int(y)])


def load_logistic_csv(path, penalty: float) -> LogisticDataset:
    """Read a dataset written by :func:`save_logistic_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "y" or header[0] != "w_1":
            raise ValueError("expected header w_1,...,w_d,y")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float)
    return LogisticDataset(features=data[:, :-1], labels=data[:, -1], penalty=penalty)
