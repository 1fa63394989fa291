"""Config-driven experiment runner.

Subcommands:
  run <config> [--check] [--threads N] [--out DIR]   full pipeline
  certify <config>                                   schedule certificate only
  wstar <config>                                     limit covariance only

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 threshold
violation in --check mode.  SGDCLT_THREADS sets the default worker count.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, jsonio
from .config import ExperimentConfig, load_config
from .ensemble import (
    EnsembleSpec,
    limit_covariance,
    lp_bound_diagnostic,
    run_ensemble,
    sampling_error_scaling,
    time_average_experiment,
)
from .errors import ConfigError, SgdCltError, WrongRegime
from .optimizers import Method, system_matrices
from .problems import sigma_at_min
from .schedules import PowerLaw, certify_schedule, check_vanishing_damping, estimate_d0
from .stats import histogram_summary, whiten_and_test

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("SGDCLT_THREADS", "1"))


def _schedule_d0(cfg: ExperimentConfig) -> float:
    sched = cfg.build_schedule()
    if isinstance(sched, PowerLaw):
        return 1.0 / sched.K if sched.a == 1.0 else 0.0
    return estimate_d0(sched, (1, 10**6))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_certify(cfg: ExperimentConfig, out_dir: Path | None = None) -> dict:
    sched = cfg.build_schedule()
    if cfg.damping is not None:
        damping = cfg.build_damping(sched)
        if damping.is_vanishing:
            cert = check_vanishing_damping(sched, damping)
        else:
            cert = certify_schedule(sched)
    else:
        cert = certify_schedule(sched)
    doc = cert.to_json_dict()
    print(jsonio.dumps(doc))
    if out_dir is not None:
        (out_dir / "certificate.json").write_text(jsonio.dumps(doc) + "\n")
    return doc


def cmd_wstar(cfg: ExperimentConfig, out_dir: Path | None = None) -> dict:
    problem, noise = cfg.build_problem()
    method = cfg.build_method()
    sigma = sigma_at_min(problem, noise)
    d0 = _schedule_d0(cfg)
    mu_tilde = cfg.method.get("mu_tilde")
    sol = limit_covariance(problem, method, sigma, d0=d0, mu_tilde=mu_tilde)
    doc = {
        "method": method.value,
        "solver": sol.method,
        "d0": d0,
        "W_star": jsonio.dump_matrix(sol.W),
        "residual": sol.residual,
    }
    if method is Method.VSGD:
        doc["admissible"] = bool(d0 < 2.0 * problem.mu)
        doc["admissibility"] = "d0 < 2*mu"
    elif method in (Method.MSGD_CONST, Method.NASGD_CONST):
        mats = system_matrices(problem, method, mu_tilde=mu_tilde)
        doc["lambda_D"] = mats.lambda_D
        doc["h_D"] = mats.h_D
        doc["admissible"] = bool(d0 < 2.0 * mats.lambda_D)
        doc["admissibility"] = "d0 < 2*lambda_D"
    print(jsonio.dumps(doc))
    if out_dir is not None:
        (out_dir / "wstar.json").write_text(jsonio.dumps(doc) + "\n")
    return doc


def _run_single(cfg, problem, noise, method, sched, damping, out_dir, threads):
    rc = cfg.run
    mu_tilde = cfg.method.get("mu_tilde")
    sigma = sigma_at_min(problem, noise)
    d0 = _schedule_d0(cfg)
    wsol = limit_covariance(problem, method, sigma, d0=d0, mu_tilde=mu_tilde)
    spec = EnsembleSpec(
        problem=problem,
        noise=noise,
        method=method,
        schedule=sched,
        mu_tilde=mu_tilde,
        damping=damping,
        init_dist=cfg.init.get("dist", "normal"),
        init_scale=cfg.init.get("scale", 1.0),
        master_seed=rc["master_seed"],
        chunk_size=rc.get("chunk_size", 512),
    )
    normality_rows = []
    want_normality = cfg.toggles.get("normality_test", False)

    def on_checkpoint(cp, Z):
        if want_normality and Z.shape[0] >= 20:
            rep = whiten_and_test(Z, wsol.W * cp.scale)
            normality_rows.append((cp.k, rep))

    trace = run_ensemble(
        spec,
        M=rc["replicas"],
        n_steps=rc["n_steps"],
        checkpoint_every=rc.get("checkpoint_every", 10**4),
        threads=threads,
        wstar=wsol.W,
        d0=d0,
        on_checkpoint=on_checkpoint,
    )
    outputs = []
    problem_json = out_dir / "problem.json"
    problem_json.write_text(jsonio.dumps({
        "dim": problem.dim,
        "x_star": np.asarray(problem.x_star),
        "hessian": jsonio.dump_matrix(problem.hessian),
        "sigma": jsonio.dump_matrix(sigma),
        "mu": problem.mu,
        "L": problem.L,
    }) + "\n")
    outputs.append(problem_json)
    trace_csv = out_dir / "trace.csv"
    jsonio.write_csv(
        trace_csv,
        ["k", "scale_k", "rel_err", "frob_Vk", "mean_norm"],
        [
            (cp.k, cp.scale, cp.rel_err, float(np.linalg.norm(cp.V, "fro")),
             float(np.linalg.norm(cp.mean)))
            for cp in trace.checkpoints
        ],
    )
    outputs.append(trace_csv)

    final = trace.final
    final_json = out_dir / "trace_final.json"
    final_json.write_text(jsonio.dumps({
        "k": final.k,
        "scale": final.scale,
        "rel_err": final.rel_err,
        "V": jsonio.dump_matrix(final.V),
        "W": jsonio.dump_matrix(final.W),
        "W_star": jsonio.dump_matrix(trace.wstar),
        "residual": wsol.residual,
        "failed_replicas": trace.failed_replicas,
        "scale_rule": trace.scale_rule,
    }) + "\n")
    outputs.append(final_json)

    if normality_rows:
        norm_json = out_dir / "normality.json"
        norm_json.write_text(jsonio.dumps({
            "sigma_level": 0.05,
            "reports": [dict(k=k, **rep.to_json_dict()) for k, rep in normality_rows],
        }) + "\n")
        outputs.append(norm_json)

    if cfg.toggles.get("histogram", False) and trace.final_snapshot is not None:
        hist = histogram_summary(trace.final_snapshot[:, 0], bins=40)
        hist_csv = out_dir / "histogram.csv"
        jsonio.write_csv(
            hist_csv,
            ["bin_lo", "bin_hi", "count", "fitted_mean", "fitted_sd"],
            [(lo, hi, c, hist.fitted_mean, hist.fitted_sd) for lo, hi, c in hist.rows()],
        )
        outputs.append(hist_csv)

    if cfg.toggles.get("lp_diagnostic", False) and len(trace.checkpoints) >= 5:
        diag = lp_bound_diagnostic(trace)
        lp_csv = out_dir / "lp_diagnostic.csv"
        jsonio.write_csv(
            lp_csv,
            ["p", "max_ratio", "median_ratio", "bounded"],
            [(p, row["max"], row["median"], row["bounded"]) for p, row in diag.items()],
        )
        outputs.append(lp_csv)

    return trace, normality_rows, outputs


def _run_sweep(cfg, problem, noise, method, sched, out_dir, threads):
    rc = cfg.run
    window = cfg.sweep.get("window", 4) if cfg.sweep else 4
    rows = []
    traces = []
    for i, M in enumerate(cfg.sweep["M_list"]):
        spec = EnsembleSpec(
            problem=problem,
            noise=noise,
            method=method,
            schedule=sched,
            init_dist=cfg.init.get("dist", "point"),
            init_scale=cfg.init.get("scale", 0.0),
            master_seed=rc["master_seed"] + 7919 * i,
            chunk_size=rc.get("chunk_size", 2048),
        )
        tr = run_ensemble(spec, M=int(M), n_steps=rc["n_steps"],
                          checkpoint_every=rc.get("checkpoint_every", 10**4),
                          threads=threads)
        traces.append((int(M), tr))
        rows.append((int(M), table_cell_error(tr, window)))
    table = sampling_error_scaling(traces)
    sweep_csv = out_dir / "table1.csv"
    jsonio.write_csv(sweep_csv, ["M", "rel_err_windowed", "rel_err_final"],
                     [(m, v, dict((r.M, r.rel_err) for r in table.rows)[m]) for m, v in rows])
    return rows, table, [sweep_csv]


def table_cell_error(trace, window: int = 4) -> float:
    """Relative error of the uncentered estimator averaged over the trailing
    ``window`` checkpoints, the settled-table reading of one sweep cell."""
    m_alive = trace.M - trace.failed_replicas
    wstar = trace.wstar
    mats = []
    for cp in trace.checkpoints[-window:]:
        S2 = cp.V * (m_alive - 1) / m_alive + np.outer(cp.mean, cp.mean)
        mats.append(S2 / cp.scale)
    avg = np.mean(mats, axis=0)
    return float(np.linalg.norm(avg - wstar, "fro") / np.linalg.norm(wstar, "fro"))


def cmd_run(cfg: ExperimentConfig, out_dir: Path, threads: int, check: bool) -> int:
    problem, noise = cfg.build_problem()
    method = cfg.build_method()
    sched = cfg.build_schedule()
    damping = cfg.build_damping(sched)

    # certify before running; a failing certificate is reported, not fatal
    if method is Method.MSGD_VANISHING:
        cert = check_vanishing_damping(sched, damping)
    else:
        cert = certify_schedule(sched, horizon=min(10**6, max(10**4, cfg.run["n_steps"])))
    (out_dir / "certificate.json").write_text(jsonio.dumps(cert.to_json_dict()) + "\n")
    outputs = [out_dir / "certificate.json"]

    check_failures: list[str] = []
    thresholds = cfg.check or {}

    if cfg.toggles.get("time_average", False):
        report = time_average_experiment(
            problem,
            sched,
            M=cfg.run["replicas"],
            n_steps=cfg.run["n_steps"],
            noise=noise,
            master_seed=cfg.run["master_seed"],
            init_scale=cfg.init.get("scale", 0.0),
            threads=threads,
        )
        ta_csv = out_dir / "timeaverage.csv"
        jsonio.write_csv(ta_csv, ["k", "drift_stat", "drift_se"],
                         [(k, drift, se) for k, drift, se in report.drift_curve])
        ta_json = out_dir / "timeaverage.json"
        ta_json.write_text(jsonio.dumps({
            "T_n": report.T_n,
            "S_n": report.S_n,
            "scaled_mean": report.scaled_mean,
            "empirical_cov_of_scaled": jsonio.dump_matrix(report.empirical_cov_of_scaled),
            "target": jsonio.dump_matrix(report.target),
            "drift_stat": report.drift_stat,
            "drift_se": report.drift_se,
        }) + "\n")
        outputs += [ta_csv, ta_json]
        first = next((abs(d) for _, d, _ in report.drift_curve if d), 0.0)
        last = abs(report.drift_stat)
        ratio = last / max(first, 4.0 * report.drift_se)
        if "min_drift_ratio" in thresholds and ratio < thresholds["min_drift_ratio"]:
            check_failures.append(f"drift ratio {ratio:.2f} < {thresholds['min_drift_ratio']}")
        if "max_drift_ratio" in thresholds and ratio > thresholds["max_drift_ratio"]:
            check_failures.append(f"drift ratio {ratio:.2f} > {thresholds['max_drift_ratio']}")
    elif cfg.toggles.get("table1_sweep", False):
        if cfg.sweep is None:
            raise ConfigError("table1_sweep needs a [sweep] section")
        rows, table, files = _run_sweep(cfg, problem, noise, method, sched, out_dir, threads)
        outputs += files
        if "max_rel_err" in thresholds:
            worst = max(v for _, v in rows)
            if worst > thresholds["max_rel_err"]:
                check_failures.append(f"sweep rel_err {worst:.4f} > {thresholds['max_rel_err']}")
    else:
        trace, normality_rows, files = _run_single(
            cfg, problem, noise, method, sched, damping, out_dir, threads
        )
        outputs += files
        if "max_rel_err" in thresholds and trace.final.rel_err > thresholds["max_rel_err"]:
            check_failures.append(
                f"final rel_err {trace.final.rel_err:.4f} > {thresholds['max_rel_err']}"
            )
        if "min_rho" in thresholds and normality_rows:
            rho = normality_rows[-1][1].rho
            if rho < thresholds["min_rho"]:
                check_failures.append(f"final rho {rho:.4f} < {thresholds['min_rho']}")

    manifest = {
        "name": cfg.name,
        "config_sha256": hashlib.sha256(cfg.source_bytes).hexdigest(),
        "master_seed": cfg.run["master_seed"],
        "versions": {"sgdclt": __version__, "numpy": np.__version__},
        "outputs": [
            {"file": p.name, "sha256": _sha256(p)} for p in outputs if p.exists()
        ],
    }
    (out_dir / "manifest.json").write_text(jsonio.dumps(manifest) + "\n")

    if check and check_failures:
        for msg in check_failures:
            print(f"CHECK FAIL: {msg}", file=sys.stderr)
        return EXIT_CHECK
    print(f"wrote {len(outputs) + 1} files to {out_dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sgdclt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "certify", "wstar"):
        p = sub.add_parser(name)
        p.add_argument("config", type=Path)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", type=Path, default=None)
        if name == "run":
            p.add_argument("--check", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = args.out or Path(cfg.output.get("directory", f"out/{cfg.name}"))
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "certify":
            cmd_certify(cfg, out_dir)
            return EXIT_OK
        if args.command == "wstar":
            cmd_wstar(cfg, out_dir)
            return EXIT_OK
        return cmd_run(cfg, out_dir, threads=_threads(args), check=args.check)
    except (ConfigError, WrongRegime) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SgdCltError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
