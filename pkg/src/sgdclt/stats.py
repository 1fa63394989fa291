"""Multivariate normality testing of whitened iterate ensembles.

The univariate substrate is the Shapiro-Wilk W statistic with Royston's 1992
polynomial weights and normalizing transform (valid for 12 <= n <= 5000); the
multivariate combination is Royston's H statistic, which maps per-coordinate
W values to approximately chi-square variables and corrects the degrees of
freedom for the average inter-coordinate correlation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import chi2

from .errors import DegenerateSample, SampleSizeOutOfRange
from .lyapunov import inv_sqrt

__all__ = [
    "NormalityReport",
    "HistogramSummary",
    "shapiro_wilk",
    "shapiro_wilk_z",
    "royston_test",
    "whiten_and_test",
    "histogram_summary",
]

SW_MIN_N = 12
SW_MAX_N = 5000


@dataclass
class NormalityReport:
    statistic: float
    p_value: float
    rho: float
    passed: bool
    per_dimension_W: list[float]
    n: int
    d: int

    def to_json_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "rho": self.rho,
            "passed": self.passed,
            "per_dimension_W": list(self.per_dimension_W),
            "n": self.n,
            "d": self.d,
        }


def _sw_weights(n: int) -> np.ndarray:
    """Order-statistic weights a_1..a_n (Royston 1992 polynomial fit)."""
    i = np.arange(1, n + 1)
    m = ndtri((i - 3.0 / 8.0) / (n + 0.25))
    c = m / np.linalg.norm(m)
    x = 1.0 / np.sqrt(n)
    a = np.zeros(n)
    a[-1] = c[-1] + 0.221157 * x - 0.147981 * x**2 - 2.071190 * x**3 \
        + 4.434685 * x**4 - 2.706056 * x**5
    a[-2] = c[-2] + 0.042981 * x - 0.293762 * x**2 - 1.752461 * x**3 \
        + 5.682633 * x**4 - 3.582663 * x**5
    phi = (np.sum(m * m) - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (
        1.0 - 2.0 * a[-1] ** 2 - 2.0 * a[-2] ** 2
    )
    a[2:-2] = m[2:-2] / np.sqrt(phi)
    a[0], a[1] = -a[-1], -a[-2]
    return a


def _sw_statistic(sample: np.ndarray) -> float:
    y = np.sort(sample)
    a = _sw_weights(len(y))
    denom = np.sum((y - y.mean()) ** 2)
    if denom <= 1e-300 or y[-1] == y[0]:
        raise DegenerateSample("sample variance is numerically zero")
    return float((a @ y) ** 2 / denom)


def shapiro_wilk_z(W: float, n: int) -> float:
    """Normalizing transform of W to an approximately standard normal deviate
    (large-sample branch, n >= 12); large z means strong non-normality."""
    y = np.log(n)
    mu = -1.5861 - 0.31082 * y - 0.083751 * y**2 + 0.0038915 * y**3
    sigma = np.exp(-0.4803 - 0.082676 * y + 0.0030302 * y**2)
    w1 = max(1.0 - W, 1e-300)
    return float((np.log(w1) - mu) / sigma)


def shapiro_wilk(sample) -> tuple[float, float]:
    """Shapiro-Wilk test; returns (W, p).

    The polynomial approximations are valid for 12 <= n <= 5000; sizes outside
    that range raise :class:`SampleSizeOutOfRange`.
    """
    sample = np.asarray(sample, dtype=float).ravel()
    n = len(sample)
    if not SW_MIN_N <= n <= SW_MAX_N:
        raise SampleSizeOutOfRange(f"n = {n} outside [{SW_MIN_N}, {SW_MAX_N}]")
    W = _sw_statistic(sample)
    z = shapiro_wilk_z(W, n)
    return W, float(ndtr(-z))


def _royston_edf(samples: np.ndarray) -> float:
    """Equivalent degrees of freedom from the average sample correlation."""
    n, d = samples.shape
    if d == 1:
        return 1.0
    ln_n = np.log(n)
    u = 0.715
    v = 0.21364 + 0.015124 * ln_n**2 - 0.0018034 * ln_n**3
    C = np.corrcoef(samples, rowvar=False)
    NC = C**5 * (1.0 - u * (1.0 - C) ** u / v)
    T = float(np.sum(NC) - d)
    mean_c = T / (d * d - d)
    return d / (1.0 + (d - 1.0) * mean_c)


def _deterministic_subsample(samples: np.ndarray, cap: int = SW_MAX_N) -> np.ndarray:
    n = samples.shape[0]
    if n <= cap:
        return samples
    stride = int(np.ceil(n / cap))
    return samples[::stride]


def royston_test(samples, sigma_level: float = 0.05) -> NormalityReport:
    """Royston's multivariate normality H test on an (n, d) sample.

    Per-coordinate W statistics are transformed to normal deviates z_j, mapped
    to R_j = ndtri(Phi(-z_j)/2)^2, and H = e * mean(R) is referred to a
    chi-square with the correlation-corrected equivalent degrees of freedom e.
    The report's rho = p - sigma_level is positive exactly when the sample
    passes.  Ensembles larger than 5000 are subsampled deterministically.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.ndim != 2:
        raise ValueError("samples must be an (n, d) matrix")
    samples = _deterministic_subsample(samples)
    n, d = samples.shape
    if n < 20:
        raise ValueError("need at least 20 observations")

    Ws, Rs = [], []
    for j in range(d):
        W, _ = shapiro_wilk(samples[:, j])
        z = shapiro_wilk_z(W, n)
        # upper-tail p of the coordinate test folded into a chi-square(1) pull
        pj = max(float(ndtr(-z)), 1e-300)
        Rs.append(float(ndtri(pj / 2.0) ** 2))
        Ws.append(W)

    e = _royston_edf(samples)
    H = e * float(np.mean(Rs))
    p = float(chi2.sf(H, e))
    rho = p - sigma_level
    return NormalityReport(
        statistic=H,
        p_value=p,
        rho=rho,
        passed=bool(rho > 0),
        per_dimension_W=Ws,
        n=n,
        d=d,
    )


def whiten_and_test(samples, reference, sigma_level: float = 0.05) -> NormalityReport:
    """Center an (n, d) ensemble snapshot, whiten with reference^{-1/2}, and
    run the multivariate normality test.  ``reference`` is either the
    empirical snapshot covariance or a theoretical limit covariance times its
    scale; it must be SPD."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    root = inv_sqrt(np.atleast_2d(np.asarray(reference, dtype=float)))
    centered = samples - samples.mean(axis=0)
    return royston_test(centered @ root.T, sigma_level=sigma_level)


@dataclass
class HistogramSummary:
    edges: np.ndarray
    counts: np.ndarray
    fitted_mean: float
    fitted_sd: float

    def rows(self) -> list[tuple[float, float, int]]:
        return [
            (float(self.edges[i]), float(self.edges[i + 1]), int(self.counts[i]))
            for i in range(len(self.counts))
        ]


def histogram_summary(sample, bins: int) -> HistogramSummary:
    """Equal-width histogram plus fitted normal parameters, for external
    plotting of marginal distributions."""
    if bins < 10:
        raise ValueError("bins must be >= 10")
    sample = np.asarray(sample, dtype=float).ravel()
    counts, edges = np.histogram(sample, bins=bins)
    return HistogramSummary(
        edges=edges,
        counts=counts,
        fitted_mean=float(sample.mean()),
        fitted_sd=float(sample.std(ddof=1)) if len(sample) > 1 else 0.0,
    )
