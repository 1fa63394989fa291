"""Strict TOML experiment configuration: every key is validated, unknown keys
are rejected, and referenced files must exist at load time.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .optimizers import Method
from .problems import (
    AdditiveNoise,
    CounterexampleProblem,
    MiniBatchNoise,
    generate_logistic,
    load_logistic_csv,
    logistic_problem,
    make_quadratic,
)
from .schedules import (
    ConstantDamping,
    InversePartialSumDamping,
    PowerLaw,
    PowerLawDamping,
    PowerLawLog,
)

__all__ = ["ExperimentConfig", "load_config"]


def _take(table: dict, section: str, allowed: dict) -> dict:
    """Validate one config table against {key: (required, type)}."""
    out = {}
    unknown = set(table) - set(allowed)
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys: {sorted(unknown)}")
    for key, (required, types) in allowed.items():
        if key in table:
            val = table[key]
            if types is float and isinstance(val, int) and not isinstance(val, bool):
                val = float(val)
            if not isinstance(val, types if isinstance(types, tuple) else (types,)):
                raise ConfigError(f"[{section}] {key} has wrong type")
            out[key] = val
        elif required:
            raise ConfigError(f"[{section}] missing required key '{key}'")
    return out


@dataclass
class ExperimentConfig:
    name: str
    problem: dict
    method: dict
    schedule: dict
    damping: dict | None
    init: dict
    run: dict
    output: dict
    toggles: dict
    sweep: dict | None
    check: dict | None
    source_path: Path
    source_bytes: bytes

    # -- construction of runtime objects ------------------------------------

    def build_schedule(self):
        sc = self.schedule
        kind = sc["kind"]
        if kind == "power":
            return PowerLaw(K=sc["K"], a=sc["a"])
        if kind == "power_log":
            return PowerLawLog(C=sc["K"], a=sc["a"])
        raise ConfigError(f"unknown schedule kind '{kind}'")

    def build_damping(self, base_schedule):
        if self.damping is None:
            return None
        dc = self.damping
        kind = dc["kind"]
        if kind == "constant":
            return ConstantDamping(mu_tilde=dc["K_mu"])
        if kind == "power":
            return PowerLawDamping(K_mu=dc["K_mu"], b=dc["b"])
        if kind == "inverse_partial_sum":
            return InversePartialSumDamping(K_mu=dc["K_mu"], base=base_schedule)
        raise ConfigError(f"unknown damping kind '{kind}'")

    def build_problem(self):
        pc = self.problem
        kind = pc["kind"]
        if kind == "quadratic":
            diag = pc.get("hessian_diag")
            if diag is None:
                raise ConfigError("[problem] quadratic needs hessian_diag")
            A = np.diag([float(v) for v in diag])
            noise_sigma = pc.get("noise_sigma_diag")
            if noise_sigma is None:
                raise ConfigError("[problem] quadratic needs noise_sigma_diag")
            S = np.diag([float(v) for v in noise_sigma])
            problem = make_quadratic(A)
            noise = AdditiveNoise(S, dist=pc.get("noise_dist", "gaussian"))
            return problem, noise
        if kind == "logistic":
            if "dataset_csv" in pc:
                ds = load_logistic_csv(pc["dataset_csv"], penalty=pc["penalty"])
            else:
                ds = generate_logistic(
                    d=pc["dimension"],
                    N=pc["n_samples"],
                    beta=pc["penalty"],
                    seed=pc.get("dataset_seed", 0),
                )
            problem = logistic_problem(ds)
            noise = MiniBatchNoise(ds, batch_size=pc.get("batch_size", 1))
            return problem, noise
        if kind == "counterexample":
            problem = CounterexampleProblem(b_bound=pc.get("noise_bound", 1.0))
            return problem, problem.noise()
        raise ConfigError(f"unknown problem kind '{kind}'")

    def build_method(self) -> Method:
        try:
            return Method(self.method["kind"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_PROBLEM_KEYS = {
    "kind": (True, str),
    "dimension": (False, int),
    "n_samples": (False, int),
    "penalty": (False, float),
    "dataset_seed": (False, int),
    "dataset_csv": (False, str),
    "batch_size": (False, int),
    "hessian_diag": (False, list),
    "noise_sigma_diag": (False, list),
    "noise_dist": (False, str),
    "noise_bound": (False, float),
}
_METHOD_KEYS = {"kind": (True, str), "mu_tilde": (False, float)}
_SCHEDULE_KEYS = {"kind": (True, str), "K": (True, float), "a": (True, float)}
_DAMPING_KEYS = {"kind": (True, str), "K_mu": (True, float), "b": (False, float)}
_INIT_KEYS = {"dist": (False, str), "scale": (False, float)}
_RUN_KEYS = {
    "replicas": (True, int),
    "n_steps": (True, int),
    "checkpoint_every": (False, int),
    "master_seed": (True, int),
    "chunk_size": (False, int),
}
_OUTPUT_KEYS = {"directory": (False, str)}
_TOGGLE_KEYS = {
    "normality_test": (False, bool),
    "time_average": (False, bool),
    "lp_diagnostic": (False, bool),
    "table1_sweep": (False, bool),
    "histogram": (False, bool),
}
_SWEEP_KEYS = {"M_list": (True, list), "window": (False, int)}
_CHECK_KEYS = {
    "max_rel_err": (False, float),
    "min_rho": (False, float),
    "max_drift_ratio": (False, float),
    "min_drift_ratio": (False, float),
}
_TOP_KEYS = {"name", "problem", "method", "schedule", "damping", "init", "run",
             "output", "toggles", "sweep", "check"}


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = path.read_bytes()
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML parse error: {exc}") from exc

    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "name" not in data or not isinstance(data["name"], str):
        raise ConfigError("missing top-level 'name'")
    for req in ("problem", "method", "schedule", "run"):
        if req not in data:
            raise ConfigError(f"missing required section [{req}]")

    cfg = ExperimentConfig(
        name=data["name"],
        problem=_take(data["problem"], "problem", _PROBLEM_KEYS),
        method=_take(data["method"], "method", _METHOD_KEYS),
        schedule=_take(data["schedule"], "schedule", _SCHEDULE_KEYS),
        damping=_take(data["damping"], "damping", _DAMPING_KEYS) if "damping" in data else None,
        init=_take(data.get("init", {}), "init", _INIT_KEYS),
        run=_take(data["run"], "run", _RUN_KEYS),
        output=_take(data.get("output", {}), "output", _OUTPUT_KEYS),
        toggles=_take(data.get("toggles", {}), "toggles", _TOGGLE_KEYS),
        sweep=_take(data["sweep"], "sweep", _SWEEP_KEYS) if "sweep" in data else None,
        check=_take(data["check"], "check", _CHECK_KEYS) if "check" in data else None,
        source_path=path,
        source_bytes=raw,
    )
    if cfg.problem["kind"] == "logistic":
        for req in ("penalty",):
            if req not in cfg.problem:
                raise ConfigError(f"[problem] logistic needs '{req}'")
        if "dataset_csv" in cfg.problem:
            csv_path = Path(cfg.problem["dataset_csv"])
            if not csv_path.is_absolute():
                csv_path = path.parent / csv_path
                cfg.problem["dataset_csv"] = str(csv_path)
            if not csv_path.exists():
                raise ConfigError(f"dataset file not found: {csv_path}")
        elif "dimension" not in cfg.problem or "n_samples" not in cfg.problem:
            raise ConfigError("[problem] logistic needs dimension and n_samples")
    method = cfg.method.get("kind")
    if method in ("msgd_const", "nasgd_const") and "mu_tilde" not in cfg.method:
        raise ConfigError(f"[method] {method} needs mu_tilde")
    if method == "msgd_vanishing" and cfg.damping is None:
        raise ConfigError("[method] msgd_vanishing needs a [damping] section")
    return cfg
