"""Ensemble simulation: run many independent replicas of a configured
iteration, track the empirical covariance of the (joint) iterate under the
method's normalization, compare against the theoretical limit covariance, and
run the time-average experiments.

Replicas are grouped into fixed-size chunks; each chunk owns a spawned RNG
stream and is advanced vectorized, checkpoint segment by checkpoint segment.
Chunk boundaries and the reduction order are fixed by the configuration, so
results are bit-identical across thread counts.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import TooManyFailures, WrongRegime
from .lyapunov import LyapunovSolution, solve_general, vanishing_limit_cov
from .optimizers import Method, nesterov_beta, system_matrices
from .problems import NoiseModel, Problem, sigma_at_min
from .schedules import DampingSchedule, PowerLaw, Schedule

__all__ = [
    "EnsembleSpec",
    "Checkpoint",
    "EnsembleTrace",
    "TimeAverageReport",
    "limit_covariance",
    "run_ensemble",
    "sampling_error_scaling",
    "time_average_experiment",
    "lp_bound_diagnostic",
    "covariance_recursion",
]

DEFAULT_CHUNK = 512
FAILURE_BUDGET = 0.01  # abort when more than 1% of replicas go non-finite


@dataclass(frozen=True)
class EnsembleSpec:
    """Everything needed to reproduce one ensemble run."""

    problem: Problem
    noise: NoiseModel
    method: Method
    schedule: Schedule
    mu_tilde: float | None = None
    damping: DampingSchedule | None = None
    init_dist: str = "normal"  # "normal" or "point"
    init_scale: float = 1.0
    master_seed: int = 0
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.method in (Method.MSGD_CONST, Method.NASGD_CONST) and not self.mu_tilde:
            raise ValueError("constant-damping methods need mu_tilde")
        if self.method is Method.MSGD_VANISHING and self.damping is None:
            raise ValueError("vanishing-damping method needs a damping schedule")
        if self.init_dist not in ("normal", "point"):
            raise ValueError("init_dist must be 'normal' or 'point'")


@dataclass
class Checkpoint:
    k: int
    scale: float
    V: np.ndarray  # centered, unbiased empirical covariance of Z_k
    W: np.ndarray  # V / scale
    rel_err: float
    mean: np.ndarray
    norm_moments: dict[float, float]  # p -> E |Z_k|^{2p}


@dataclass
class EnsembleTrace:
    checkpoints: list[Checkpoint]
    scale_rule: str
    M: int
    failed_replicas: int
    wstar: np.ndarray | None
    final_snapshot: np.ndarray | None = None  # (alive, dim_z) at the last checkpoint

    @property
    def final(self) -> Checkpoint:
        return self.checkpoints[-1]

    @property
    def degenerate(self) -> bool:
        """True when the final covariance carries no noise signal at all."""
        return float(np.linalg.norm(self.final.V, "fro")) < 1e-14

    def uncentered_rel_err(self, index: int = -1) -> float:
        """Relative error of the uncentered estimator
        W~ = sum_m Z Z^T / (M_alive * scale) against the limit covariance."""
        cp = self.checkpoints[index]
        if self.wstar is None:
            return float("nan")
        m_alive = self.M - self.failed_replicas
        S2 = cp.V * (m_alive - 1) / m_alive + np.outer(cp.mean, cp.mean)
        Wt = S2 / cp.scale
        return float(
            np.linalg.norm(Wt - self.wstar, "fro") / np.linalg.norm(self.wstar, "fro")
        )


def limit_covariance(
    problem: Problem,
    method: Method,
    sigma: np.ndarray,
    d0: float = 0.0,
    mu_tilde: float | None = None,
) -> LyapunovSolution:
    """Theoretical limit covariance for the configured method.

    Vanilla solves A W + W A^T - d0 W = Sigma; the constant-damping methods
    solve D W + W D^T - d0 W = blockdiag(0, Sigma) with their joint-dynamics
    D; vanishing damping returns (1/2) blockdiag(A^{-1} Sigma, Sigma), which
    requires A Sigma = Sigma A.
    """
    A = problem.hessian
    if method is Method.VSGD:
        return solve_general(A, sigma, d0)
    if method is Method.MSGD_VANISHING:
        return vanishing_limit_cov(A, sigma)
    mats = system_matrices(problem, method, mu_tilde=mu_tilde)
    d = A.shape[0]
    St = np.zeros((2 * d, 2 * d))
    St[d:, d:] = sigma
    return solve_general(mats.D, St, d0)


class _Chunk:
    __slots__ = ("x", "v", "rng", "alive", "wsum", "extra")

    def __init__(self, x, v, rng):
        self.x = x
        self.v = v
        self.rng = rng
        self.alive = np.ones(x.shape[0], dtype=bool)
        self.wsum = None  # running alpha-weighted iterate sum (time average)
        self.extra = None


def _make_chunks(spec: EnsembleSpec, M: int) -> list[_Chunk]:
    d = spec.problem.dim
    sizes = [spec.chunk_size] * (M // spec.chunk_size)
    if M % spec.chunk_size:
        sizes.append(M % spec.chunk_size)
    seeds = np.random.SeedSequence(spec.master_seed).spawn(len(sizes))
    chunks = []
    for m, ss in zip(sizes, seeds):
        rng = np.random.default_rng(ss)
        if spec.init_dist == "normal" and spec.init_scale > 0:
            x = spec.problem.x_star + spec.init_scale * rng.standard_normal((m, d))
        else:
            x = np.repeat(spec.problem.x_star[None, :], m, axis=0)
        v = np.zeros((m, d)) if spec.method.uses_momentum else None
        chunks.append(_Chunk(x=x, v=v, rng=rng))
    return chunks


def _advance(chunk: _Chunk, spec: EnsembleSpec, alphas, mus, k0: int, k1: int,
             track_average: bool = False) -> None:
    """Advance one chunk from step k0 (exclusive) to k1 (inclusive)."""
    p, noise, method = spec.problem, spec.noise, spec.method
    x, v, rng = chunk.x, chunk.v, chunk.rng
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for k in range(k0 + 1, k1 + 1):
            a = alphas[k - 1]
            if track_average:
                chunk.wsum += a * x  # weights multiply the pre-step iterate
            if method is Method.VSGD:
                g = noise.sample_gradient(p, x, rng)
                x = x - a * g
            elif method is Method.NASGD_CONST:
                a_prev = alphas[k - 2] if k > 1 else a
                b_k = nesterov_beta(spec.mu_tilde, a, a_prev)
                g = noise.sample_gradient(p, x + b_k * v, rng)
                v = (1.0 - spec.mu_tilde * a) * v - a * g
                x = x + a * v
            else:  # momentum, constant or vanishing damping
                mu_k = spec.mu_tilde if method is Method.MSGD_CONST else mus[k - 1]
                g = noise.sample_gradient(p, x, rng)
                v = v - mu_k * a * v - a * g
                x = x + a * v
    chunk.x, chunk.v = x, v
    ok = np.all(np.isfinite(x), axis=1)
    if v is not None:
        ok &= np.all(np.isfinite(v), axis=1)
    chunk.alive &= ok


def _snapshot(chunks: list[_Chunk], spec: EnsembleSpec) -> tuple[np.ndarray, int]:
    """Joint centered-state matrix over alive replicas, in chunk order."""
    xs = np.concatenate([c.x for c in chunks], axis=0)
    alive = np.concatenate([c.alive for c in chunks])
    Z = xs - spec.problem.x_star
    if spec.method.uses_momentum:
        vs = np.concatenate([c.v for c in chunks], axis=0)
        Z = np.concatenate([Z, vs], axis=1)
    return Z[alive], int(np.sum(~alive))


def _scale_at(rule: str, alphas, mus, k: int) -> float:
    a = alphas[k - 1]
    if rule == "beta":
        return float(a / mus[k - 1])
    return float(a)


def run_ensemble(
    spec: EnsembleSpec,
    M: int,
    n_steps: int,
    checkpoint_every: int = 10**4,
    threads: int = 1,
    wstar: np.ndarray | None = None,
    d0: float = 0.0,
    scale_override: str | None = None,
    on_checkpoint=None,
) -> EnsembleTrace:
    """Run M replicas for n_steps and record covariance checkpoints.

    The empirical covariance V_k of the joint state Z_k is centered at the
    empirical mean (unbiased, over alive replicas) and normalized by the
    method's scale rule: alpha_k for the vanilla/constant-damping methods,
    beta_k = alpha_k/mu_k for vanishing damping (``scale_override`` forces one
    rule, used by the negative-control experiment).  ``wstar`` defaults to the
    limit covariance computed from the problem's exact noise covariance.
    Raises :class:`TooManyFailures` when more than 1% of replicas go
    non-finite.
    """
    if M < 2:
        raise ValueError("need at least two replicas")
    ks = np.arange(1, n_steps + 1, dtype=float)
    alphas = spec.schedule.alpha(ks)
    mus = spec.damping.mu(ks) if spec.damping is not None else None

    if wstar is None:
        sigma = sigma_at_min(spec.problem, spec.noise)
        wstar = limit_covariance(
            spec.problem, spec.method, sigma, d0=d0, mu_tilde=spec.mu_tilde
        ).W
    rule = scale_override or spec.method.scale_rule
    if rule not in ("alpha", "beta"):
        raise ValueError("scale rule must be 'alpha' or 'beta'")
    if rule == "beta" and mus is None:
        raise ValueError("beta scaling needs a damping schedule")

    chunks = _make_chunks(spec, M)
    check_ks = list(range(checkpoint_every, n_steps + 1, checkpoint_every))
    if not check_ks or check_ks[-1] != n_steps:
        check_ks.append(n_steps)

    checkpoints: list[Checkpoint] = []
    k_prev = 0
    snapshot = None
    for k in check_ks:
        _advance_all(chunks, spec, alphas, mus, k_prev, k, threads)
        k_prev = k
        Z, failed = _snapshot(chunks, spec)
        if failed > FAILURE_BUDGET * M:
            raise TooManyFailures(f"{failed} of {M} replicas diverged")
        scale = _scale_at(rule, alphas, mus, k)
        cp = _make_checkpoint(Z, k, scale, wstar)
        checkpoints.append(cp)
        snapshot = Z
        if on_checkpoint is not None:
            on_checkpoint(cp, Z)
    return EnsembleTrace(
        checkpoints=checkpoints,
        scale_rule=rule,
        M=M,
        failed_replicas=failed,
        wstar=wstar,
        final_snapshot=snapshot,
    )


def _advance_all(chunks, spec, alphas, mus, k0, k1, threads, track_average=False):
    if threads <= 1 or len(chunks) == 1:
        for c in chunks:
            _advance(c, spec, alphas, mus, k0, k1, track_average)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(
                lambda c: _advance(c, spec, alphas, mus, k0, k1, track_average), chunks
            ))


def _make_checkpoint(Z: np.ndarray, k: int, scale: float, wstar) -> Checkpoint:
    # replicas may be huge-but-finite one segment before the failure budget
    # trips, so the moment arithmetic is allowed to overflow quietly here
    with np.errstate(over="ignore", invalid="ignore"):
        m = Z.shape[0]
        mean = Z.mean(axis=0)
        Zc = Z - mean
        V = Zc.T @ Zc / (m - 1)
        W = V / scale
        if wstar is not None:
            rel = float(np.linalg.norm(W - wstar, "fro") / np.linalg.norm(wstar, "fro"))
        else:
            rel = float("nan")
        norms = np.linalg.norm(Z, axis=1)
        moments = {1.0: float(np.mean(norms**2)), 1.5: float(np.mean(norms**3))}
    return Checkpoint(k=k, scale=scale, V=V, W=W, rel_err=rel, mean=mean,
                      norm_moments=moments)


@dataclass
class ScalingRow:
    M: int
    rel_err: float


@dataclass
class ScalingTable:
    rows: list[ScalingRow]
    doubling_ratios: list[float]
    mean_ratio: float


def sampling_error_scaling(traces: list[tuple[int, EnsembleTrace]]) -> ScalingTable:
    """Table of uncentered-estimator relative errors over replica counts, plus
    the error ratios across exact doublings of M (expected near sqrt(2)/2 when
    sampling error dominates)."""
    rows = sorted(
        (ScalingRow(M=m, rel_err=t.uncentered_rel_err()) for m, t in traces),
        key=lambda r: r.M,
    )
    by_m = {r.M: r.rel_err for r in rows}
    ratios = [
        by_m[2 * m] / by_m[m] for m in sorted(by_m) if 2 * m in by_m and by_m[m] > 0
    ]
    mean_ratio = float(np.mean(ratios)) if ratios else float("nan")
    return ScalingTable(rows=rows, doubling_ratios=ratios, mean_ratio=mean_ratio)


@dataclass
class TimeAverageReport:
    T_n: float
    S_n: float
    scaled_mean: np.ndarray  # mean over replicas of (T_n/sqrt(S_n)) * xbar_n
    empirical_cov_of_scaled: np.ndarray
    target: np.ndarray  # A^{-1} Sigma A^{-1}
    drift_stat: float
    drift_se: float
    drift_curve: list[tuple[int, float, float]]  # (k, drift, standard error)
    M: int
    n_steps: int


def time_average_experiment(
    problem,
    s: Schedule,
    M: int,
    n_steps: int,
    noise: NoiseModel | None = None,
    master_seed: int = 0,
    checkpoint_every: int | None = None,
    init_scale: float = 0.0,
    chunk_size: int = DEFAULT_CHUNK,
    threads: int = 1,
) -> TimeAverageReport:
    """Track the step-size-weighted running average
    xbar_n = sum_k alpha_k x_{k-1} / sum_k alpha_k under the vanilla iteration
    and report the rescaled statistic (T_n/sqrt(S_n)) (xbar_n - x*).

    In the linear regime its covariance approaches A^{-1} Sigma A^{-1}; the
    drift statistic (replica mean of the scaled average; signed for scalar
    problems, Euclidean norm otherwise) stays at the Monte Carlo noise floor
    for linear problems and grows without bound for the cubic counterexample.
    Requires the square-summability to fail on the horizon (step exponent
    a <= 1/2); raises :class:`WrongRegime` otherwise.
    """
    if isinstance(s, PowerLaw) and s.a > 0.5:
        raise WrongRegime(f"a = {s.a} > 1/2: sum alpha_k^2 converges, no limit law")
    ks = np.arange(1, n_steps + 1, dtype=float)
    alphas = s.alpha(ks)
    sq_sums = np.cumsum(alphas**2)
    if not isinstance(s, PowerLaw):
        idx = np.unique(np.geomspace(max(2, 0.8 * n_steps), n_steps, 32).astype(int)) - 1
        slope = float(np.polyfit(np.log(ks[idx]), np.log(sq_sums[idx]), 1)[0])
        if slope < 0.05:
            raise WrongRegime("sum alpha_k^2 appears to converge on the horizon")
    if noise is None:
        noise = getattr(problem, "noise", None)
        noise = noise() if callable(noise) else noise
    if noise is None:
        raise ValueError("a noise model is required")

    spec = EnsembleSpec(
        problem=problem,
        noise=noise,
        method=Method.VSGD,
        schedule=s,
        init_dist="point" if init_scale == 0 else "normal",
        init_scale=init_scale,
        master_seed=master_seed,
        chunk_size=chunk_size,
    )
    d = problem.dim
    chunks = _make_chunks(spec, M)
    for c in chunks:
        c.wsum = np.zeros_like(c.x)

    if checkpoint_every is None:
        checkpoint_every = max(1, n_steps // 10)
    check_ks = sorted(set(
        list(range(checkpoint_every, n_steps + 1, checkpoint_every)) + [n_steps]
    ))

    cum_T = np.cumsum(alphas)
    x_star = np.asarray(problem.x_star, dtype=float)
    curve: list[tuple[int, float, float]] = []
    k_prev = 0
    scaled = None
    for k in check_ks:
        _advance_all(chunks, spec, alphas, None, k_prev, k, threads, track_average=True)
        k_prev = k
        T_n, S_n = float(cum_T[k - 1]), float(sq_sums[k - 1])
        wsums = np.concatenate([c.wsum for c in chunks], axis=0)
        alive = np.concatenate([c.alive for c in chunks])
        xbar = wsums[alive] / T_n
        scaled = (T_n / np.sqrt(S_n)) * (xbar - x_star)
        mean_scaled = scaled.mean(axis=0)
        drift = float(mean_scaled[0]) if d == 1 else float(np.linalg.norm(mean_scaled))
        se = float(np.linalg.norm(scaled.std(axis=0, ddof=1)) / np.sqrt(scaled.shape[0]))
        curve.append((k, drift, se))

    sc_centered = scaled - scaled.mean(axis=0)
    cov = sc_centered.T @ sc_centered / (scaled.shape[0] - 1)
    sigma = np.atleast_2d(noise.sigma(problem))
    A = np.atleast_2d(problem.hessian)
    Ainv = np.linalg.inv(A)
    return TimeAverageReport(
        T_n=T_n,
        S_n=S_n,
        scaled_mean=scaled.mean(axis=0),
        empirical_cov_of_scaled=np.atleast_2d(cov),
        target=Ainv @ sigma @ Ainv,
        drift_stat=curve[-1][1],
        drift_se=curve[-1][2],
        drift_curve=curve,
        M=M,
        n_steps=n_steps,
    )


def lp_bound_diagnostic(trace: EnsembleTrace, p_list=(1.0, 1.5)) -> dict[float, dict]:
    """Moment-growth diagnostic: for each p, the curve
    E |Z_k|^{2p} / scale_k^p over checkpoints must stay bounded (operational
    check: final value at most twice the median)."""
    if len(trace.checkpoints) < 5:
        raise ValueError("need at least 5 checkpoints")
    out: dict[float, dict] = {}
    for p in p_list:
        ratios = np.array(
            [cp.norm_moments[p] / cp.scale**p for cp in trace.checkpoints]
        )
        med = float(np.median(ratios))
        out[p] = {
            "ratios": ratios,
            "max": float(ratios.max()),
            "median": med,
            "bounded": bool(ratios[-1] <= 2.0 * med + 1e-30),
        }
    return out


def covariance_recursion(
    A: np.ndarray,
    sigma: np.ndarray,
    method: Method,
    schedule: Schedule,
    n_steps: int,
    mu_tilde: float | None = None,
    damping: DampingSchedule | None = None,
    V0: np.ndarray | None = None,
    checkpoint_every: int | None = None,
) -> list[tuple[int, np.ndarray]]:
    """Exact second-moment recursion of the linear (quadratic-objective)
    dynamics with additive noise covariance ``sigma``; an independent,
    Monte-Carlo-free oracle for what the ensemble covariance must follow.

    Returns checkpoints (k, V_k) of the joint state Z = (x - x*, v).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = A.shape[0]
    ks = np.arange(1, n_steps + 1, dtype=float)
    alphas = schedule.alpha(ks)
    mus = damping.mu(ks) if damping is not None else None
    eye = np.eye(d)

    dim = d if method is Method.VSGD else 2 * d
    V = np.zeros((dim, dim)) if V0 is None else np.asarray(V0, dtype=float).copy()
    if checkpoint_every is None:
        checkpoint_every = n_steps
    out: list[tuple[int, np.ndarray]] = []
    for k in range(1, n_steps + 1):
        a = alphas[k - 1]
        if method is Method.VSGD:
            T = eye - a * A
            V = T @ V @ T.T + a * a * sigma
        else:
            if method is Method.MSGD_CONST:
                mu_k, la = mu_tilde, 0.0
            elif method is Method.MSGD_VANISHING:
                mu_k, la = mus[k - 1], 0.0
            else:  # Nesterov: lookahead adds -a*b_k*A to the velocity map
                a_prev = alphas[k - 2] if k > 1 else a
                mu_k = mu_tilde
                la = nesterov_beta(mu_tilde, a, a_prev)
            Mv = (1.0 - mu_k * a) * eye - a * la * A
            T = np.block([[eye - a * a * A, a * Mv], [-a * A, Mv]])
            load = np.block([[a * a * a * a * sigma, a * a * a * sigma],
                             [a * a * a * sigma, a * a * sigma]])
            V = T @ V @ T.T + load
        if k % checkpoint_every == 0 or k == n_steps:
            out.append((k, V.copy()))
    return out
