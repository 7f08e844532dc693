"""Experiment harness: scenario configuration, seeded Monte-Carlo sweeps and
CSV persistence.

Configs are flat UTF-8 ``key = value`` files ('#' starts a comment).  Physical
quantities accept linear or dB-suffixed forms ("40 dBm", "4.15 dBW", "6 dB")
and are stored in watts; absolute "dB" values are read as dBW.  Unknown keys
are hard errors.  Each preset names one experiment axis; the sweep list holds
the values of that axis.

Determinism: channels (and, unless frozen, user positions) for trial i are
drawn from a counter-based stream keyed by (seed, i) alone, so results are
identical for any worker count and sweep arms are channel-paired.  Wall-clock
times are only recorded with ``timing = wall``; the default keeps reruns
byte-identical.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channels import PathLossParams, draw_geometry, generate_channels, trial_rng
from .model import (Precoder, SystemDims, SystemParams, build_reflection_operator,
                    bs_power, ris_power)
from .powermin import run_power_min
from .sumrate import AlgoOptions, run_sum_rate_max

SUMRATE_PRESETS = ("sumrate_vs_pbs", "sumrate_vs_pris", "sumrate_vs_L",
                   "sumrate_vs_K", "sumrate_vs_x")
POWER_PRESETS = ("power_vs_gamma", "power_vs_L", "power_vs_K", "power_vs_x")
PRESETS = SUMRATE_PRESETS + POWER_PRESETS + ("convergence_trace",)

RESULT_COLUMNS = ("preset", "architecture", "sweep", "trial", "seed", "metric",
                  "value", "status", "wall_ms")
AGGREGATE_COLUMNS = ("preset", "architecture", "sweep", "metric", "mean",
                     "stderr", "n_ok", "n_total")


class ConfigError(ValueError):
    pass


def parse_quantity(text: str) -> float:
    """'40 dBm' -> 10.0, '4.15 dBW' or '4.15 dB' -> watts, plain floats pass."""
    parts = text.strip().split()
    if len(parts) == 1:
        return float(parts[0])
    if len(parts) != 2:
        raise ConfigError(f"cannot parse quantity {text!r}")
    val = float(parts[0])
    unit = parts[1].lower()
    if unit in ("db", "dbw"):
        return 10.0 ** (val / 10.0)
    if unit == "dbm":
        return 10.0 ** (val / 10.0) * 1e-3
    if unit == "w":
        return val
    if unit == "mw":
        return val * 1e-3
    if unit == "m":
        return val
    raise ConfigError(f"unknown unit {parts[1]!r} in {text!r}")


@dataclass
class ExperimentConfig:
    preset: str
    sweep: list
    architectures: list          # tokens: "sub:<L>" or "fully"
    trials: int
    seed: int
    N: int
    K: int
    M: int
    P_BS: float
    P_RIS_tot: float
    W_BS: float
    W_PS: float
    W_PA: float
    sigma_sq: float
    sigma_z_sq: float
    nu1: float
    nu2: float
    gamma: float
    rho: float = 1.0
    user_center_x: float = 200.0
    user_radius: float = 10.0
    freeze_users: bool = False
    workers: int = 1
    timing: str = "off"          # "off" keeps reruns byte-identical
    algorithm: str = "sumrate"   # convergence_trace only
    outer_tol: float = 1e-4
    outer_max_iter: int = 30
    admm_tol: float = 1e-3
    admm_max_iter: int = 100
    theta_step_tol: float = 3e-4

    def validate(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.sweep:
            raise ConfigError("sweep must be non-empty")
        if self.timing not in ("off", "wall"):
            raise ConfigError("timing must be 'off' or 'wall'")
        if self.algorithm not in ("sumrate", "powermin"):
            raise ConfigError("algorithm must be 'sumrate' or 'powermin'")
        for arch in self.architectures:
            self._arch_L(arch, self.M)
        if self.preset.endswith("_vs_L"):
            for v in self.sweep:
                self._check_L(int(v), self.M)
        # base dims must construct
        SystemDims(self.N, self.K, self.M, self._arch_L(self.architectures[0], self.M))
        return self

    @staticmethod
    def _check_L(L, M):
        if L < 1 or M % L != 0:
            raise ConfigError(f"L = {L} does not divide M = {M}")

    @classmethod
    def _arch_L(cls, token: str, M: int) -> int:
        if token == "fully":
            return M
        if token.startswith("sub:"):
            L = int(token[4:])
            cls._check_L(L, M)
            return L
        raise ConfigError(f"unknown architecture token {token!r}")

    def algo_options(self) -> AlgoOptions:
        return AlgoOptions(outer_tol=self.outer_tol, outer_max_iter=self.outer_max_iter,
                           admm_tol=self.admm_tol, admm_max_iter=self.admm_max_iter,
                           theta_step_tol=self.theta_step_tol, rho=self.rho)


def default_config(preset: str, scale: str = "desk") -> ExperimentConfig:
    """Built-in §-style parameterisations: "paper" is the full-size setting,
    "desk" scales the array down (and static powers with it) for fast runs."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    if scale not in ("desk", "paper"):
        raise ConfigError("scale must be 'desk' or 'paper'")
    w_unit = 10 ** 0.7 * 1e-3  # 7 dBm
    paper = dict(N=16, K=4, M=256, trials=100,
                 P_BS=parse_quantity("40 dBm"),
                 P_RIS_tot=parse_quantity("4.15 dBW"),
                 W_BS=parse_quantity("6 dBW"), W_PS=w_unit, W_PA=w_unit,
                 sigma_sq=parse_quantity("-80 dBm"),
                 sigma_z_sq=parse_quantity("-80 dBm"),
                 nu1=1 / 1.1, nu2=1 / 1.1, gamma=parse_quantity("8 dB"))
    cfg = dict(paper)
    if scale == "desk":
        ratio = 64 / 256
        cfg.update(N=8, K=2, M=64, trials=50,
                   P_RIS_tot=paper["P_RIS_tot"] * ratio,
                   W_PS=w_unit * ratio, W_PA=w_unit * ratio)

    M = cfg["M"]
    sweeps = {
        "sumrate_vs_pbs": ([parse_quantity(f"{v} dBm") for v in (20, 30, 40)],
                           [f"sub:{M // 8}", "fully"]),
        "sumrate_vs_pris": ([cfg["P_RIS_tot"] * f for f in (0.5, 1.0, 2.0)],
                            [f"sub:{M // 8}", "fully"]),
        "sumrate_vs_L": ([M // 16, M // 8, M // 4, M // 2, M], ["sub:0"]),
        "sumrate_vs_K": ([1, 2, cfg["K"]], [f"sub:{M // 8}", "fully"]),
        "sumrate_vs_x": ([100.0, 200.0, 300.0], [f"sub:{M // 8}", "fully"]),
        "power_vs_gamma": ([parse_quantity(f"{v} dB") for v in (4, 8, 12)],
                           [f"sub:{M // 8}", "fully"]),
        "power_vs_L": ([M // 16, M // 8, M // 4, M // 2, M], ["sub:0"]),
        "power_vs_K": ([1, 2, cfg["K"]], [f"sub:{M // 8}", "fully"]),
        "power_vs_x": ([100.0, 200.0, 300.0], [f"sub:{M // 8}", "fully"]),
        "convergence_trace": ([0.0], [f"sub:{M // 8}"]),
    }
    sweep, archs = sweeps[preset]
    if preset.endswith("_vs_L"):
        archs = []  # the sweep itself enumerates architectures
    return ExperimentConfig(preset=preset, sweep=list(sweep),
                            architectures=archs or ["sub:%d" % (M // 8)],
                            seed=1234, **cfg)


_INT_KEYS = {"trials", "seed", "N", "K", "M", "workers", "outer_max_iter",
             "admm_max_iter"}
_FLOAT_KEYS = {"P_BS", "P_RIS_tot", "W_BS", "W_PS", "W_PA", "sigma_sq",
               "sigma_z_sq", "nu1", "nu2", "gamma", "rho", "user_center_x",
               "user_radius", "outer_tol", "admm_tol", "theta_step_tol"}
_BOOL_KEYS = {"freeze_users"}
_STR_KEYS = {"preset", "timing", "algorithm", "scale"}
_LIST_KEYS = {"sweep", "architectures"}


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate a config file; see the module docstring for the format."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            known = _INT_KEYS | _FLOAT_KEYS | _BOOL_KEYS | _STR_KEYS | _LIST_KEYS
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in entries:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            entries[key] = (lineno, val)

    if "preset" not in entries:
        raise ConfigError(f"{path}: missing required key 'preset'")
    preset = entries.pop("preset")[1]
    scale = entries.pop("scale", (0, "desk"))[1]
    cfg = default_config(preset, scale)

    updates = {}
    for key, (lineno, val) in entries.items():
        try:
            if key in _INT_KEYS:
                updates[key] = int(val)
            elif key in _FLOAT_KEYS:
                updates[key] = parse_quantity(val)
            elif key in _BOOL_KEYS:
                if val.lower() not in ("true", "false"):
                    raise ConfigError(f"expected true/false, got {val!r}")
                updates[key] = val.lower() == "true"
            elif key in _STR_KEYS:
                updates[key] = val
            elif key == "architectures":
                updates[key] = [tok.strip() for tok in val.split(",") if tok.strip()]
            elif key == "sweep":
                vals = [tok.strip() for tok in val.split(",") if tok.strip()]
                if preset.endswith("_vs_L") or preset.endswith("_vs_K"):
                    updates[key] = [int(parse_quantity(v)) for v in vals]
                else:
                    updates[key] = [parse_quantity(v) for v in vals]
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    cfg = replace(cfg, **updates)
    return cfg.validate()


# ---------------------------------------------------------------------------
# experiment execution
# ---------------------------------------------------------------------------

def _arm_settings(cfg: ExperimentConfig, sweep_val, arch: str):
    """Dims/params for one (sweep value, architecture) arm."""
    N, K, M = cfg.N, cfg.K, cfg.M
    P_BS, P_RIS_tot, gamma, center_x = cfg.P_BS, cfg.P_RIS_tot, cfg.gamma, cfg.user_center_x
    preset = cfg.preset
    if preset in ("sumrate_vs_pbs",):
        P_BS = float(sweep_val)
    elif preset in ("sumrate_vs_pris",):
        P_RIS_tot = float(sweep_val)
    elif preset.endswith("_vs_K"):
        K = int(sweep_val)
    elif preset.endswith("_vs_x"):
        center_x = float(sweep_val)
    elif preset == "power_vs_gamma":
        gamma = float(sweep_val)

    if preset.endswith("_vs_L"):
        L = int(sweep_val)
    else:
        L = ExperimentConfig._arch_L(arch, M)
    dims = SystemDims(N=N, K=K, M=M, L=L)
    params = SystemParams(P_BS=P_BS, P_RIS_tot=P_RIS_tot, W_BS=cfg.W_BS,
                          W_PS=cfg.W_PS, W_PA=cfg.W_PA, nu1=cfg.nu1, nu2=cfg.nu2,
                          sigma_k_sq=np.full(K, cfg.sigma_sq),
                          sigma_z_sq=cfg.sigma_z_sq, gamma=np.full(K, gamma))
    return dims, params, center_x


def _run_trial(cfg: ExperimentConfig, sweep_val, arch: str, trial: int):
    """One (sweep, architecture, trial) cell; returns (metrics, status, trace)."""
    dims, params, center_x = _arm_settings(cfg, sweep_val, arch)
    rng = trial_rng(cfg.seed, trial)
    if cfg.freeze_users:
        geom = draw_geometry(dims, trial_rng(cfg.seed, 0), user_center_x=center_x,
                             user_radius=cfg.user_radius)
    else:
        geom = draw_geometry(dims, rng, user_center_x=center_x,
                             user_radius=cfg.user_radius)
    channels = generate_channels(dims, geom, PathLossParams(), rng)
    opts = cfg.algo_options()

    algo = cfg.algorithm if cfg.preset == "convergence_trace" \
        else ("sumrate" if cfg.preset in SUMRATE_PRESETS else "powermin")
    if algo == "sumrate":
        prec, state, trace = run_sum_rate_max(channels, dims, params, opts)
        op = build_reflection_operator(state, dims)
        metrics = {
            "sum_rate": trace.outer_sum_rate[-1],
            "bs_power_w": bs_power(prec, params),
            "ris_power_w": ris_power(channels, op, prec, params, dims),
            "outer_iters": float(len(trace.outer_sum_rate)),
        }
        status = "infeasible_budget" if trace.budget_infeasible else "ok"
        return metrics, status, trace
    prec, state, trace = run_power_min(channels, dims, params, opts)
    if not trace.feasible:
        return {"total_power_w": float("nan")}, "infeasible", trace
    op = build_reflection_operator(state, dims)
    metrics = {
        "total_power_w": trace.outer_power[-1],
        "bs_power_w": bs_power(prec, params),
        "ris_power_w": ris_power(channels, op, prec, params, dims),
        "outer_iters": float(len(trace.outer_power)),
        "min_sinr_slack": trace.min_sinr_slack[-1],
    }
    return metrics, "ok", trace


def _run_cell(args):
    cfg_dict, sweep_val, arch, trial = args
    cfg = ExperimentConfig(**cfg_dict)
    t0 = time.perf_counter()
    try:
        metrics, status, trace = _run_trial(cfg, sweep_val, arch, trial)
        err = None
    except Exception as exc:  # recorded as data, reraised policy-wise by caller
        metrics, status, trace = {}, f"error:{type(exc).__name__}", None
        err = repr(exc)
    wall_ms = (time.perf_counter() - t0) * 1e3 if cfg.timing == "wall" else 0.0
    return metrics, status, trace, wall_ms, err


def _format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def _trace_rows(trace):
    if hasattr(trace, "outer_sum_rate"):
        header = ["outer_iter", "f2", "sum_rate", "admm_iters", "admm_last_resid"]
        rows = []
        for i, (f2, rate) in enumerate(zip(trace.outer_f2, trace.outer_sum_rate)):
            res = trace.admm_residuals[i] if i < len(trace.admm_residuals) else []
            rows.append([i, _format_value(f2), _format_value(rate), len(res),
                         _format_value(res[-1]) if res else ""])
        return header, rows
    header = ["outer_iter", "total_power_w", "min_sinr_slack", "admm_iters",
              "admm_last_resid"]
    rows = []
    for i, p in enumerate(trace.outer_power):
        res = trace.admm_residuals[i] if i < len(trace.admm_residuals) else []
        rows.append([i, _format_value(p), _format_value(trace.min_sinr_slack[i]),
                     len(res), _format_value(res[-1]) if res else ""])
    return header, rows


def run_experiment(cfg: ExperimentConfig, out_dir: str) -> int:
    """Run all (sweep x architecture x trial) cells and write results.csv,
    aggregate.csv and (for convergence_trace) per-trial trace files.

    Returns the number of cells whose run raised (0 means a clean run;
    infeasible trials are data, not failures).
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    archs = ["sub:%d" % int(v) for v in cfg.sweep] if cfg.preset.endswith("_vs_L") \
        else list(cfg.architectures)
    cells = []
    if cfg.preset.endswith("_vs_L"):
        for v in cfg.sweep:
            for t in range(cfg.trials):
                cells.append((v, "sub:%d" % int(v), t))
    else:
        for v in cfg.sweep:
            for arch in archs:
                for t in range(cfg.trials):
                    cells.append((v, arch, t))

    cfg_dict = {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}
    jobs = [(cfg_dict, v, arch, t) for (v, arch, t) in cells]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_run_cell, jobs, chunksize=1))
    else:
        outcomes = [_run_cell(job) for job in jobs]

    n_errors = 0
    rows = []
    grouped = {}
    for (sweep_val, arch, trial), (metrics, status, trace, wall_ms, err) in zip(cells, outcomes):
        if status.startswith("error:"):
            n_errors += 1
        for metric, value in sorted(metrics.items()):
            rows.append([cfg.preset, arch, _format_value(sweep_val), trial, cfg.seed,
                         metric, _format_value(float(value)), status,
                         _format_value(wall_ms)])
            key = (arch, _format_value(sweep_val), metric)
            grouped.setdefault(key, []).append((value, status))
        grouped.setdefault((arch, _format_value(sweep_val), "__status__"),
                           []).append((0.0, status))
        if cfg.preset == "convergence_trace" and trace is not None:
            header, trows = _trace_rows(trace)
            with open(os.path.join(out_dir, f"trace_{trial}.csv"), "w",
                      newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                writer.writerows(trows)

    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        writer.writerows(rows)

    agg_rows = []
    for (arch, sweep_s, metric), vals in sorted(grouped.items()):
        if metric == "__status__":
            n_tot = len(vals)
            n_bad = sum(1 for _, s in vals if s != "ok")
            agg_rows.append([cfg.preset, arch, sweep_s, "infeasible_rate",
                             _format_value(n_bad / n_tot), _format_value(0.0),
                             n_tot, n_tot])
            continue
        ok_vals = np.array([v for v, s in vals if s == "ok"], dtype=float)
        n_ok = ok_vals.size
        mean = float(np.mean(ok_vals)) if n_ok else float("nan")
        stderr = float(np.std(ok_vals, ddof=1) / np.sqrt(n_ok)) if n_ok > 1 else 0.0
        agg_rows.append([cfg.preset, arch, sweep_s, metric, _format_value(mean),
                         _format_value(stderr), n_ok, len(vals)])
    with open(os.path.join(out_dir, "aggregate.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_COLUMNS)
        writer.writerows(agg_rows)
    return n_errors
