"""Monte-Carlo study driver: configuration, execution, result files.

A study draws one scenario per seed, initializes every requested estimator
on the first batch, then feeds blocks of new samples until the stream ends,
recording the fit against the active truth after every update and the
wall-clock spent inside estimator calls (simulation and I/O excluded).

Result files per study directory:

``run_<seed>.json``
    Full per-run record.  Wall-clock numbers live under the ``timing`` key;
    everything else is a pure function of the configuration.
``summary.csv``
    Per-method, per-checkpoint fit statistics.
``fits_long.csv``
    Long-format fit values (``method,k,seed,fit``) for box plots.
``times.csv``
    Cumulative update-time table, methods as columns, mean/std rows.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .estimators import initialize, rls_initialize, rls_update, update
from .metrics import RunRecord, aggregate, fit
from .simulator import make_scenario, truth_at
from .stats import build_block

METHODS = ("tc_ff", "tc_est_ff", "tc_opt_ff", "tc_opt_est_ff", "rls_ff")

_MODE_OF = {
    "tc_ff": "fixed_ff",
    "tc_est_ff": "adaptive_ff",
    "tc_opt_ff": "opt_fixed_ff",
    "tc_opt_est_ff": "opt_adaptive_ff",
}


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Study settings; the defaults reproduce the benchmark protocol."""

    n_runs: int = 200
    n_taps: int = 100
    block_size: int = 10
    init_batch: int = 300
    total_samples: int = 3000
    switch_time: int = 1001
    gamma_fixed: float = 0.998
    gamma_init: float = 0.995
    methods: tuple[str, ...] = METHODS
    opt_rel_tol: float = 1e-9
    base_seed: int = 0
    parallelism: int = 1
    output_dir: str = "results"
    checkpoints: tuple[int, ...] = (300, 1000, 1050, 1500, 3000)

    def validate(self) -> None:
        if self.n_runs < 1:
            raise ConfigError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.init_batch <= self.n_taps:
            raise ConfigError(
                f"init_batch ({self.init_batch}) must exceed n_taps ({self.n_taps})"
            )
        if self.total_samples < self.init_batch:
            raise ConfigError("total_samples must be >= init_batch")
        if self.block_size < 1:
            raise ConfigError(f"block_size must be >= 1, got {self.block_size}")
        for g in (self.gamma_fixed, self.gamma_init):
            if not 0.0 < g <= 1.0:
                raise ConfigError(f"forgetting factors must lie in (0, 1], got {g}")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; valid: {METHODS}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.opt_rel_tol <= 0.0:
            raise ConfigError("opt_rel_tol must be positive")
        for k in self.checkpoints:
            if k < self.init_batch or k > self.total_samples:
                raise ConfigError(f"checkpoint {k} outside recorded range")
            if (k - self.init_batch) % self.block_size != 0:
                raise ConfigError(
                    f"checkpoint {k} not reachable from init_batch {self.init_batch} "
                    f"in steps of {self.block_size}"
                )

    # -- key = value text format ------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in fields:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = _parse_value(key, val)
        return cls(**kwargs)

    def to_file(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]


def _parse_value(key: str, val: str):
    try:
        if key == "methods":
            return tuple(m.strip() for m in val.split(",") if m.strip())
        if key == "checkpoints":
            return tuple(int(x) for x in val.split(",") if x.strip())
        if key == "output_dir":
            return val
        if key in ("gamma_fixed", "gamma_init", "opt_rel_tol"):
            return float(val)
        return int(val)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {val!r}") from exc


# ---------------------------------------------------------------------------
# Single-run execution
# ---------------------------------------------------------------------------


def _hyper_entry(k: int, state) -> tuple:
    p = state.params
    return (k, p.scale, p.decay, p.forgetting)


def run_single(config: ExperimentConfig, seed: int) -> RunRecord:
    """Run every configured method over the scenario for one seed.

    BLAS threading is clamped to one thread for the duration: the tap-sized
    factorizations here are far below the multithreading break-even point,
    and single-threaded kernels keep the timing columns meaningful.
    """
    with threadpool_limits(limits=1):
        return _run_single(config, seed)


def _run_single(config: ExperimentConfig, seed: int) -> RunRecord:
    scenario = make_scenario(
        seed, total_samples=config.total_samples, switch_time=config.switch_time
    )
    rec = RunRecord(seed=seed, config_fingerprint=config.fingerprint())
    n, ib, T = config.n_taps, config.init_batch, config.block_size
    u, y = scenario.u, scenario.y

    for method in config.methods:
        if method == "rls_ff":
            t0 = time.perf_counter()
            rls = rls_initialize(u[:ib], y[:ib], n, config.gamma_fixed)
            rec.init_seconds[method] = time.perf_counter() - t0
            tail = u[ib - (n - 1) : ib].copy()
            fits = [(ib, fit(truth_at(scenario, ib, n), rls.theta))]
            total = 0.0
            k = ib
            while k + T <= config.total_samples:
                u_new, y_new = u[k : k + T], y[k : k + T]
                t0 = time.perf_counter()
                ext_u = np.concatenate([tail, u_new])
                ext_y = np.concatenate([np.zeros(n - 1), y_new])
                blk = build_block(ext_u, ext_y, start=n, n=n)
                for row, out in zip(blk.rows, blk.outputs):
                    rls = rls_update(rls, row, out)
                total += time.perf_counter() - t0
                tail = ext_u[-(n - 1) :]
                k += T
                fits.append((k, fit(truth_at(scenario, k, n), rls.theta)))
            rec.fits[method] = fits
            rec.update_seconds[method] = total
            rec.violations[method] = {"armijo": 0, "box": 0, "stalls": 0}
            rec.faults[method] = 0
            continue

        mode = _MODE_OF[method]
        gamma = config.gamma_init if "adaptive" in mode else config.gamma_fixed
        t0 = time.perf_counter()
        state = initialize(
            u[:ib], y[:ib], n, mode, gamma=gamma, opt_rel_tol=config.opt_rel_tol
        )
        rec.init_seconds[method] = time.perf_counter() - t0
        fits = [(ib, fit(truth_at(scenario, ib, n), state.h_hat))]
        hypers = [_hyper_entry(ib, state)]
        total = 0.0
        k = ib
        while k + T <= config.total_samples:
            t0 = time.perf_counter()
            state = update(state, u[k : k + T], y[k : k + T])
            total += time.perf_counter() - t0
            k += T
            fits.append((k, fit(truth_at(scenario, k, n), state.h_hat)))
            hypers.append(_hyper_entry(k, state))
        rec.fits[method] = fits
        rec.hypers[method] = hypers
        rec.update_seconds[method] = total
        rec.violations[method] = {
            "armijo": state.sgp.armijo_violations,
            "box": state.sgp.box_violations,
            "stalls": state.sgp.stall_count,
        }
        rec.faults[method] = state.fault_count
    return rec


# ---------------------------------------------------------------------------
# Study execution and result files
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig) -> list[RunRecord]:
    """Execute the study and write all result files to the output directory.

    Per-run seeds are ``base_seed + run_index``, so results do not depend on
    worker scheduling.
    """
    config.validate()
    seeds = [config.base_seed + i for i in range(config.n_runs)]
    if config.parallelism == 1 or config.n_runs == 1:
        records = [run_single(config, s) for s in seeds]
    else:
        with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
            records = list(pool.map(run_single, [config] * len(seeds), seeds))

    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        path = outdir / f"run_{rec.seed}.json"
        path.write_text(json.dumps(rec.to_dict(), sort_keys=True, indent=2))
    write_summary(records, config.checkpoints, outdir)
    emit_plot_data(records, config.checkpoints, outdir)
    return records


def load_records(outdir) -> list[RunRecord]:
    paths = sorted(Path(outdir).glob("run_*.json"), key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise FileNotFoundError(f"no run_*.json files under {outdir}")
    return [RunRecord.from_dict(json.loads(p.read_text())) for p in paths]


def write_summary(records: list[RunRecord], checkpoints, outdir) -> Path:
    summary = aggregate(records, checkpoints)
    path = Path(outdir) / "summary.csv"
    lines = ["method,k,mean,std,median,q1,q3"]
    for row in summary["fit_rows"]:
        lines.append(
            f"{row['method']},{row['k']},{row['mean']!r},{row['std']!r},"
            f"{row['median']!r},{row['q1']!r},{row['q3']!r}"
        )
    path.write_text("\n".join(lines) + "\n")
    return path


def emit_plot_data(records: list[RunRecord], checkpoints, outdir) -> tuple[Path, Path]:
    """Write the box-plot data and the cumulative-time table."""
    if not records:
        raise ValueError("need at least one record")
    outdir = Path(outdir)
    methods = sorted(records[0].fits)

    long_path = outdir / "fits_long.csv"
    lines = ["method,k,seed,fit"]
    for method in methods:
        for k in checkpoints:
            for rec in records:
                lines.append(f"{method},{k},{rec.seed},{rec.fit_at(method, k)!r}")
    long_path.write_text("\n".join(lines) + "\n")

    summary = aggregate(records, checkpoints)
    by_method = {row["method"]: row for row in summary["time_rows"]}
    times_path = outdir / "times.csv"
    header = "stat," + ",".join(methods)
    mean_row = "mean," + ",".join(repr(by_method[m]["mean_seconds"]) for m in methods)
    std_row = "std," + ",".join(repr(by_method[m]["std_seconds"]) for m in methods)
    times_path.write_text("\n".join([header, mean_row, std_row]) + "\n")
    return long_path, times_path
