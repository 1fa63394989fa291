"""Learning-rate and damping schedules plus numeric certification of their
asymptotic properties (decay, divergence of partial sums, slow-decay and
sufficient-decrease conditions).

All certification here is numeric: limit conditions are sampled on a finite
horizon with tail-window averaging, so a passing certificate is evidence, not
proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IncompatiblePair, InvalidRange, NonConvergent

__all__ = [
    "Schedule",
    "PowerLaw",
    "PowerLawLog",
    "CustomSchedule",
    "DampingSchedule",
    "ConstantDamping",
    "PowerLawDamping",
    "InversePartialSumDamping",
    "ScheduleCertificate",
    "alpha_at",
    "estimate_d0",
    "check_h0_slow",
    "slow_condition_ratio",
    "check_divergence",
    "check_vanishing_damping",
    "certify_schedule",
]

# Tail window used by every limit estimate: last 20% of the horizon.
_TAIL_FRACTION = 0.2
# Log-log slope of partial sums below which a series is called convergent.
_DIVERGENCE_SLOPE = 0.05
# Tolerance on the fitted slope of log(ratio/product) vs accumulated step size.
_SLOW_SLOPE_TOL = 0.02


class Schedule:
    """Base class: a positive step-size sequence alpha_k, k >= 1."""

    horizon_hint: int = 10**6

    def alpha(self, k):
        """Vectorized alpha_k; `k` may be an int, float or ndarray (k >= 1)."""
        raise NotImplementedError


@dataclass(frozen=True)
class PowerLaw(Schedule):
    """alpha_k = K * k**(-a) with K > 0 and a in [0, 1]."""

    K: float
    a: float
    horizon_hint: int = 10**6

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("a must lie in [0, 1]")

    def alpha(self, k):
        return self.K * np.asarray(k, dtype=float) ** (-self.a)


@dataclass(frozen=True)
class PowerLawLog(Schedule):
    """alpha_k = C * k**(-a) * ln(k) with C > 0 and a in (0, 1].

    The k = 1 value would vanish, so the logarithm is clamped at ln(2) there;
    the sequence is exact for every k >= 2.
    """

    C: float
    a: float
    horizon_hint: int = 10**6

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not 0.0 < self.a <= 1.0:
            raise ValueError("a must lie in (0, 1]")

    def alpha(self, k):
        k = np.asarray(k, dtype=float)
        return self.C * k ** (-self.a) * np.log(np.maximum(k, 2.0))


@dataclass(frozen=True)
class CustomSchedule(Schedule):
    """User-supplied sequence; `fn` must accept a float ndarray of indices."""

    fn: Callable[[np.ndarray], np.ndarray]
    horizon_hint: int = 10**5

    def alpha(self, k):
        k = np.asarray(k, dtype=float)
        out = np.asarray(self.fn(k), dtype=float)
        if out.shape != k.shape:
            raise ValueError("custom schedule callable must be vectorized")
        return out


class DampingSchedule:
    """Base class: a positive damping sequence mu_k, k >= 1."""

    is_vanishing: bool = True

    def mu(self, k):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantDamping(DampingSchedule):
    """mu_k = mu_tilde > 0 for all k."""

    mu_tilde: float
    is_vanishing: bool = field(default=False, init=False)

    def __post_init__(self):
        if not self.mu_tilde > 0:
            raise ValueError("mu_tilde must be positive")

    def mu(self, k):
        return np.full_like(np.asarray(k, dtype=float), self.mu_tilde)


@dataclass(frozen=True)
class PowerLawDamping(DampingSchedule):
    """mu_k = K_mu * k**(-b) with K_mu > 0 and b in (0, 1)."""

    K_mu: float
    b: float

    def __post_init__(self):
        if not self.K_mu > 0:
            raise ValueError("K_mu must be positive")
        if not 0.0 < self.b < 1.0:
            raise ValueError("b must lie in (0, 1)")

    def mu(self, k):
        return self.K_mu * np.asarray(k, dtype=float) ** (-self.b)


@dataclass(frozen=True)
class InversePartialSumDamping(DampingSchedule):
    """mu_k = K_mu / sum_{j<=k} alpha_j for a base step-size schedule."""

    K_mu: float
    base: Schedule

    def __post_init__(self):
        if not self.K_mu > 0:
            raise ValueError("K_mu must be positive")

    def mu(self, k):
        k = np.asarray(k, dtype=float)
        kmax = int(np.max(k))
        csum = np.cumsum(self.base.alpha(np.arange(1, kmax + 1, dtype=float)))
        idx = np.asarray(np.round(k), dtype=int) - 1
        return self.K_mu / csum[idx]


@dataclass
class ScheduleCertificate:
    """Numeric evidence for the schedule assumptions on a finite horizon."""

    d0_estimate: float
    h0_witness: float
    Ks_witness: float
    divergence_ok: bool
    sufficient_decrease_ok: bool
    details: list[tuple[str, object]] = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return bool(self.divergence_ok and self.sufficient_decrease_ok)

    def to_json_dict(self) -> dict:
        return {
            "d0_estimate": self.d0_estimate,
            "h0_witness": self.h0_witness,
            "Ks_witness": self.Ks_witness,
            "divergence_ok": self.divergence_ok,
            "sufficient_decrease_ok": self.sufficient_decrease_ok,
            "conditions": [{"name": n, "value": v} for n, v in self.details],
        }


def alpha_at(s: Schedule, k: int) -> float:
    """alpha_k for a single index k >= 1."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(s.alpha(np.asarray(float(k))))


def _log_spaced_ints(lo: int, hi: int, n: int) -> np.ndarray:
    """Unique integers, roughly log-spaced in [lo, hi]."""
    if hi < lo:
        raise ValueError("empty range")
    pts = np.unique(np.round(np.geomspace(lo, hi, num=n)).astype(np.int64))
    return pts


def estimate_d0(
    s: Schedule,
    k_range: tuple[int, int],
    rel_tol: float = 0.1,
    num_samples: int = 512,
) -> float:
    """Tail estimate of the sufficient-decrease constant
    d0 = lim (alpha_k - alpha_{k+1}) / alpha_k**2.

    Samples the quotient on the last 20% of ``k_range`` and averages; raises
    :class:`NonConvergent` when the early and late halves of the window
    disagree by more than ``rel_tol`` (relative to max(1, |estimate|), so
    limits equal to zero are measured on an absolute scale).
    """
    k_lo, k_hi = int(k_range[0]), int(k_range[1])
    if k_hi - k_lo + 1 < 100:
        raise ValueError("k_range must contain at least 100 indices")
    w_lo = max(k_lo, int(k_hi - _TAIL_FRACTION * (k_hi - k_lo)))
    ks = _log_spaced_ints(w_lo, k_hi - 1, num_samples).astype(float)
    a_k = s.alpha(ks)
    a_k1 = s.alpha(ks + 1.0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        est = (a_k - a_k1) / a_k**2
    if not np.all(np.isfinite(est)):
        raise NonConvergent("quotient overflow/underflow on the tail window")
    half = len(est) // 2
    m_early, m_late = float(np.mean(est[:half])), float(np.mean(est[half:]))
    if abs(m_early - m_late) > rel_tol * max(1.0, abs(m_late)):
        raise NonConvergent(
            f"d0 tail estimates did not settle: {m_early:.6g} vs {m_late:.6g}"
        )
    return m_late


def slow_condition_ratio(s: Schedule, m: int, n: int, h0: float) -> float:
    """(alpha_n/alpha_m) / prod_{k=m+1}^n (1 - h0*alpha_k); equals 1 at m == n."""
    if n < m:
        raise ValueError("need n >= m")
    if n == m:
        return 1.0
    ks = np.arange(m + 1, n + 1, dtype=float)
    terms = 1.0 - h0 * s.alpha(ks)
    if np.any(terms <= 0):
        raise InvalidRange("1 - h0*alpha_k <= 0 inside the tested range")
    log_prod = float(np.sum(np.log(terms)))
    return float(np.exp(np.log(alpha_at(s, n)) - np.log(alpha_at(s, m)) - log_prod))


def check_h0_slow(
    s: Schedule,
    h0: float,
    samples: int = 256,
    horizon: int = 10**5,
    slope_tol: float = _SLOW_SLOPE_TOL,
) -> tuple[bool, float]:
    """Sampled check of the slow-decay condition
    alpha_n/alpha_m >= Ks * prod_{k=m+1}^n (1 - h0*alpha_k), n > m large.

    Evaluates the ratio r(m, n) = (alpha_n/alpha_m)/prod(...) on ~``samples``
    log-spaced pairs with m >= horizon/10 and regresses log r against the
    accumulated step size T(m, n) = sum alpha_k.  A negative trend means the
    required Ks decays to zero, i.e. the condition fails; otherwise the
    smallest sampled r is returned as a Ks witness.
    """
    if h0 <= 0:
        raise ValueError("h0 must be positive")
    ks = np.arange(1, horizon + 1, dtype=float)
    alphas = s.alpha(ks)
    tail0 = max(1, horizon // 10)
    tail_terms = 1.0 - h0 * alphas[tail0 - 1 :]
    if np.any(tail_terms <= 0):
        raise InvalidRange("1 - h0*alpha_k <= 0 on the tested tail")

    # cumulative logs over the tail only; index i corresponds to k = tail0 + i
    cum_log = np.concatenate([[0.0], np.cumsum(np.log(tail_terms))])
    cum_alpha = np.concatenate([[0.0], np.cumsum(alphas[tail0 - 1 :])])
    log_alpha = np.log(alphas)

    n_m = max(4, int(np.sqrt(samples)))
    ms = _log_spaced_ints(tail0, max(tail0 + 1, horizon // 2), n_m)
    log_r, T = [], []
    for m in ms:
        ns = _log_spaced_ints(min(m + 1, horizon), horizon, n_m)
        ns = ns[ns > m]
        i_m, i_n = m - tail0, ns - tail0
        lp = cum_log[i_n + 1] - cum_log[i_m + 1]
        lr = log_alpha[ns - 1] - log_alpha[m - 1] - lp
        log_r.extend(lr.tolist())
        T.extend((cum_alpha[i_n + 1] - cum_alpha[i_m + 1]).tolist())
    log_r = np.asarray(log_r)
    T = np.asarray(T)

    slope = float(np.polyfit(T, log_r, 1)[0]) if len(T) > 1 else 0.0
    passed = slope >= -slope_tol
    ks_witness = float(np.exp(np.min(log_r)))
    return passed, ks_witness


def check_divergence(s: Schedule, horizon: int) -> bool:
    """Numeric proxy for ``alpha_k -> 0`` and ``sum alpha_k = inf``.

    True iff alpha_horizon < alpha_1/10 and the log-log slope of the partial
    sums over the tail window stays >= 0.05.  This separates sum k**(-a)
    (slope 1-a) from convergent series (slope -> 0); it is a proxy, not a
    proof.
    """
    if horizon < 10**3:
        raise ValueError("horizon must be >= 1000")
    ks = np.arange(1, horizon + 1, dtype=float)
    alphas = s.alpha(ks)
    decay_ok = alphas[-1] < alphas[0] / 10.0
    psums = np.cumsum(alphas)
    w_lo = int((1.0 - _TAIL_FRACTION) * horizon)
    idx = _log_spaced_ints(w_lo, horizon, 64) - 1
    slope = float(np.polyfit(np.log(ks[idx]), np.log(psums[idx]), 1)[0])
    return bool(decay_ok and slope >= _DIVERGENCE_SLOPE)


def _tail_window(horizon: int) -> np.ndarray:
    lo = max(2, int((1.0 - _TAIL_FRACTION) * horizon))
    return _log_spaced_ints(lo, horizon - 1, 256)


def check_vanishing_damping(
    s: Schedule,
    d: DampingSchedule,
    horizon: int = 10**6,
    h0: float = 1.0,
) -> ScheduleCertificate:
    """Certify the vanishing-damping conditions for the pair (alpha_k, mu_k).

    Checks, on the horizon tail: alpha_k -> 0, mu_k -> 0, beta_k =
    alpha_k/mu_k -> 0, divergence of sum alpha_k*mu_k, existence of the
    damping-decrease constant L_mu with mu_{k-1}-mu_k = L_mu*alpha_k*mu_k +
    o(alpha_k*mu_k), the slow-decay condition for {beta_k} driven by
    (1 - h0*alpha_k*mu_k) products, and the sufficient-decrease requirement
    that (beta_k - beta_{k+1})/(alpha_k*mu_k*beta_k) vanishes.

    Raises :class:`IncompatiblePair` when the damping is not a vanishing kind
    or beta_k fails to decay on the tail.
    """
    if not d.is_vanishing:
        raise IncompatiblePair("damping schedule is not a vanishing kind")
    ks = np.arange(1, horizon + 1, dtype=float)
    alphas = s.alpha(ks)
    mus = d.mu(ks)
    betas = alphas / mus

    details: list[tuple[str, object]] = []

    alpha_ok = bool(alphas[-1] < alphas[0] / 10.0)
    mu_tail = mus[int(0.5 * horizon) :]
    mu_ok = bool(mus[-1] < mus[0] / 2.0 and np.all(np.diff(mu_tail) <= 1e-15))
    details.append(("alpha_to_zero", alpha_ok))
    details.append(("mu_to_zero", mu_ok))

    beta_tail = betas[int(0.5 * horizon) :]
    beta_decays = bool(
        betas[-1] < betas[max(0, horizon // 10 - 1)] and np.all(np.diff(beta_tail) <= 1e-15)
    )
    details.append(("beta_to_zero", beta_decays))
    if not beta_decays:
        raise IncompatiblePair("alpha_k/mu_k does not decay on the tail")

    am = alphas * mus
    psums = np.cumsum(am)
    w_lo = int((1.0 - _TAIL_FRACTION) * horizon)
    idx = _log_spaced_ints(w_lo, horizon, 64) - 1
    div_slope = float(np.polyfit(np.log(ks[idx]), np.log(psums[idx]), 1)[0])
    sum_ok = div_slope >= _DIVERGENCE_SLOPE
    details.append(("sum_alpha_mu_loglog_slope", div_slope))

    # L_mu = lim (mu_{k-1} - mu_k) / (alpha_k * mu_k)
    win = _tail_window(horizon)
    lmu_est = (mus[win - 2] - mus[win - 1]) / (alphas[win - 1] * mus[win - 1])
    half = len(lmu_est) // 2
    lmu_early, lmu_late = float(np.mean(lmu_est[:half])), float(np.mean(lmu_est[half:]))
    lmu_ok = abs(lmu_early - lmu_late) <= 0.2 * max(1.0, abs(lmu_late)) and lmu_late >= -1e-9
    details.append(("L_mu_estimate", lmu_late))
    details.append(("L_mu_converged", bool(lmu_ok)))

    # slow condition for beta with products of (1 - h0*alpha_k*mu_k)
    tail0 = max(1, horizon // 10)
    terms = 1.0 - h0 * am[tail0 - 1 :]
    if np.any(terms <= 0):
        raise InvalidRange("1 - h0*alpha_k*mu_k <= 0 on the tested tail")
    cum_log = np.concatenate([[0.0], np.cumsum(np.log(terms))])
    cum_am = np.concatenate([[0.0], np.cumsum(am[tail0 - 1 :])])
    log_beta = np.log(betas)
    ms = _log_spaced_ints(tail0, horizon // 2, 16)
    log_r, T = [], []
    for m in ms:
        ns = _log_spaced_ints(m + 1, horizon, 16)
        ns = ns[ns > m]
        lp = cum_log[ns - tail0 + 1] - cum_log[m - tail0 + 1]
        log_r.extend((log_beta[ns - 1] - log_beta[m - 1] - lp).tolist())
        T.extend((cum_am[ns - tail0 + 1] - cum_am[m - tail0 + 1]).tolist())
    slow_slope = float(np.polyfit(np.asarray(T), np.asarray(log_r), 1)[0])
    slow_ok = slow_slope >= -_SLOW_SLOPE_TOL
    ks_witness = float(np.exp(np.min(log_r)))
    details.append(("beta_slow_slope", slow_slope))
    details.append(("beta_slow_ok", bool(slow_ok)))

    # sufficient decrease: q_k = (beta_k - beta_{k+1})/(alpha_k*mu_k*beta_k) -> 0
    q = (betas[win - 1] - betas[win]) / (am[win - 1] * betas[win - 1])
    q_end = float(np.mean(q[-max(4, len(q) // 8) :]))
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = q > 0
        if np.count_nonzero(pos) >= 8:
            q_slope = float(np.polyfit(np.log(win[pos].astype(float)), np.log(q[pos]), 1)[0])
        else:
            q_slope = 0.0
    decrease_ok = bool(q_end <= 1e-3 or q_slope <= -0.01)
    details.append(("beta_decrease_ratio_end", q_end))
    details.append(("beta_decrease_loglog_slope", q_slope))

    divergence_ok = bool(alpha_ok and mu_ok and beta_decays and sum_ok and lmu_ok)
    return ScheduleCertificate(
        d0_estimate=max(q_end, 0.0),
        h0_witness=h0,
        Ks_witness=ks_witness,
        divergence_ok=divergence_ok,
        sufficient_decrease_ok=decrease_ok,
        details=details,
    )


def certify_schedule(
    s: Schedule,
    horizon: int = 10**6,
    h0: float | None = None,
) -> ScheduleCertificate:
    """Full certificate for a plain step-size schedule: d0 estimate,
    divergence proxy and the slow-decay check at ``h0`` (default: slightly
    above the estimated d0, the smallest rate at which the condition can
    hold)."""
    details: list[tuple[str, object]] = []
    try:
        d0 = estimate_d0(s, (1, horizon))
        decrease_ok = True
    except NonConvergent as exc:
        d0 = float("nan")
        decrease_ok = False
        details.append(("d0_error", str(exc)))
    details.append(("d0_estimate", d0))

    div_ok = check_divergence(s, horizon)
    details.append(("divergence_ok", div_ok))

    if h0 is None:
        h0 = max(1.2 * d0, 1.0) if np.isfinite(d0) else 1.0
    slow_ok, ks_witness = check_h0_slow(s, h0, horizon=min(horizon, 10**5))
    details.append(("h0_used", h0))
    details.append(("h0_slow_ok", slow_ok))
    details.append(("Ks_witness", ks_witness))

    return ScheduleCertificate(
        d0_estimate=d0 if np.isfinite(d0) else float("nan"),
        h0_witness=h0,
        Ks_witness=ks_witness,
        divergence_ok=bool(div_ok and slow_ok),
        sufficient_decrease_ok=decrease_ok,
        details=details,
    )
