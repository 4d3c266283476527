"""Fit scoring, per-run records, and cross-run aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import UndefinedMetricError


def fit(h_true, h_est) -> float:
    """Impulse-response adherence, in percent.

    ``100 * (1 - ||h_true - h_est|| / ||h_true||)``: 100 for a perfect
    estimate, 0 for the zero estimate, negative when the error exceeds the
    truth's own norm.
    """
    h_true = np.asarray(h_true, dtype=float)
    h_est = np.asarray(h_est, dtype=float)
    if h_true.shape != h_est.shape:
        raise ValueError(f"shape mismatch: {h_true.shape} vs {h_est.shape}")
    denom = np.linalg.norm(h_true)
    if denom == 0.0:
        raise UndefinedMetricError("fit is undefined for a zero reference response")
    return float(100.0 * (1.0 - np.linalg.norm(h_true - h_est) / denom))


@dataclass(frozen=True)
class FitTrace:
    """Fit values of one method on one run, keyed by sample count."""

    method: str
    seed: int
    checkpoints: tuple[tuple[int, float], ...]

    def at(self, k: int) -> float:
        for kk, v in self.checkpoints:
            if kk == k:
                return v
        raise KeyError(f"no checkpoint at k={k}")


@dataclass
class RunRecord:
    """Everything recorded for one Monte-Carlo run.

    ``fits[method]`` is a list of ``(k, fit)`` pairs; ``hypers[method]``
    holds ``(k, scale, decay, forgetting)`` tuples (forgetting None for
    fixed kernels, whole entry absent for the parametric baseline).
    Wall-clock seconds live in ``update_seconds``/``init_seconds`` and are
    excluded from determinism comparisons.
    """

    seed: int
    config_fingerprint: str
    fits: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    hypers: dict[str, list[tuple[int, float, float, float | None]]] = field(default_factory=dict)
    update_seconds: dict[str, float] = field(default_factory=dict)
    init_seconds: dict[str, float] = field(default_factory=dict)
    violations: dict[str, dict[str, int]] = field(default_factory=dict)
    faults: dict[str, int] = field(default_factory=dict)

    def fit_at(self, method: str, k: int) -> float:
        for kk, v in self.fits[method]:
            if kk == k:
                return v
        raise KeyError(f"{method} has no checkpoint at k={k}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "fits": self.fits,
            "hypers": self.hypers,
            "violations": self.violations,
            "faults": self.faults,
            "timing": {
                "update_seconds": self.update_seconds,
                "init_seconds": self.init_seconds,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            seed=d["seed"],
            config_fingerprint=d["config_fingerprint"],
            fits={m: [(int(k), float(v)) for k, v in tr] for m, tr in d["fits"].items()},
            hypers={
                m: [
                    (int(k), float(a), float(b), None if g is None else float(g))
                    for k, a, b, g in tr
                ]
                for m, tr in d["hypers"].items()
            },
            update_seconds=dict(d["timing"]["update_seconds"]),
            init_seconds=dict(d["timing"]["init_seconds"]),
            violations={m: dict(v) for m, v in d["violations"].items()},
            faults=dict(d["faults"]),
        )


def aggregate(records: list[RunRecord], checkpoints) -> dict:
    """Per-method fit statistics at each checkpoint plus timing summaries.

    Returns ``{"fit_rows": [...], "time_rows": [...]}`` where each fit row
    carries mean/std/median/quartiles over runs (sample std, zero for a
    single record) and each time row the mean/std cumulative update time.
    """
    if not records:
        raise ValueError("need at least one record to aggregate")
    methods = sorted(records[0].fits)
    for rec in records:
        if sorted(rec.fits) != methods:
            raise ValueError(f"record {rec.seed} has inconsistent method set")

    fit_rows = []
    for method in methods:
        for k in checkpoints:
            try:
                vals = np.array([rec.fit_at(method, k) for rec in records])
            except KeyError as exc:
                raise ValueError(f"inconsistent checkpoints across records: {exc}")
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            fit_rows.append(
                {
                    "method": method,
                    "k": int(k),
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                    "median": float(med),
                    "q1": float(q1),
                    "q3": float(q3),
                }
            )

    time_rows = []
    for method in methods:
        secs = np.array([rec.update_seconds[method] for rec in records])
        time_rows.append(
            {
                "method": method,
                "mean_seconds": float(np.mean(secs)),
                "std_seconds": float(np.std(secs, ddof=1)) if len(secs) > 1 else 0.0,
            }
        )
    return {"fit_rows": fit_rows, "time_rows": time_rows}
