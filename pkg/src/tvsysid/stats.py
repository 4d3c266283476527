"""FIR regressors and exponentially weighted sufficient statistics.

The estimators never touch raw data matrices directly: everything they need
from the stream is carried by three quantities

    R  = Phi' G Phi      (taps x taps)
    yt = Phi' G y        (taps,)
    yb = y'  G y         (scalar)

where ``Phi`` holds lagged-input rows and ``G`` is a diagonal matrix of
exponential forgetting weights (identity when no forgetting is applied).
Blocks of ``T`` new samples are absorbed at O(taps^2 * T) cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

GammaMode = Literal["unweighted", "fixed", "adaptive"]


@dataclass(frozen=True)
class RegressorBlock:
    """A contiguous run of lagged-input rows and the matching outputs.

    Row ``j`` covers time ``start_index + j`` and reads
    ``[u(t), u(t-1), ..., u(t-n+1)]`` with ``u(s) = 0`` for ``s <= 0``;
    rows are ordered oldest to newest.
    """

    rows: np.ndarray
    outputs: np.ndarray
    start_index: int

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_taps(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class SufficientStats:
    """Weighted data products plus the number of samples absorbed so far.

    ``weight`` is the current sum of the forgetting weights over all
    absorbed samples (equal to ``count`` when nothing is discounted): the
    effective sample content backing the products, which downstream noise
    estimation needs to stay honest under heavy forgetting.
    """

    R: np.ndarray
    yt: np.ndarray
    yb: float
    count: int
    weight: float = 0.0
    gamma_mode: GammaMode = "unweighted"

    @property
    def n_taps(self) -> int:
        return self.R.shape[0]


def empty_stats(n_taps: int, gamma_mode: GammaMode = "unweighted") -> SufficientStats:
    if n_taps <= 0:
        raise ValueError(f"n_taps must be positive, got {n_taps}")
    return SufficientStats(
        R=np.zeros((n_taps, n_taps)),
        yt=np.zeros(n_taps),
        yb=0.0,
        count=0,
        weight=0.0,
        gamma_mode=gamma_mode,
    )


def build_block(u, y, start: int, n: int) -> RegressorBlock:
    """Build the lagged-input rows for times ``start .. len(u)``.

    Parameters
    ----------
    u, y : array_like
        Full input/output sequences from time 1 (index 0 holds ``u(1)``).
        Lags reaching before the first sample are zero-filled.
    start : int
        1-based time index of the first row to emit.
    n : int
        Number of input lags per row (the FIR order).
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if n <= 0:
        raise ValueError(f"lag count must be positive, got {n}")
    if u.ndim != 1 or y.ndim != 1 or u.size == 0 or y.size == 0:
        raise ValueError("u and y must be non-empty 1-D sequences")
    if u.size != y.size:
        raise ValueError(f"u and y lengths differ: {u.size} vs {y.size}")
    if not 1 <= start <= u.size:
        raise ValueError(f"start {start} outside 1..{u.size}")

    padded = np.concatenate([np.zeros(n - 1), u])
    # window ending at u(t) reversed -> [u(t), u(t-1), ..., u(t-n+1)]
    windows = np.lib.stride_tricks.sliding_window_view(padded, n)[:, ::-1]
    return RegressorBlock(
        rows=np.ascontiguousarray(windows[start - 1 :]),
        outputs=y[start - 1 :].copy(),
        start_index=start,
    )


def _symmetrize(R: np.ndarray) -> np.ndarray:
    return (R + R.T) / 2.0


def _check_widths(s: SufficientStats, b: RegressorBlock) -> None:
    if b.n_taps != s.n_taps:
        raise ValueError(f"block width {b.n_taps} does not match stats width {s.n_taps}")


def update_unweighted(s: SufficientStats, b: RegressorBlock) -> SufficientStats:
    """Absorb a block with no forgetting: plain accumulation of the products."""
    if s.gamma_mode != "unweighted":
        raise ValueError(f"stats are in {s.gamma_mode!r} mode, expected 'unweighted'")
    _check_widths(s, b)
    return SufficientStats(
        R=_symmetrize(s.R + b.rows.T @ b.rows),
        yt=s.yt + b.rows.T @ b.outputs,
        yb=s.yb + float(b.outputs @ b.outputs),
        count=s.count + b.n_rows,
        weight=s.weight + b.n_rows,
        gamma_mode=s.gamma_mode,
    )


def _forgetting_weights(gamma: float, n_rows: int) -> np.ndarray:
    # newest row carries weight gamma^0
    return gamma ** np.arange(n_rows - 1, -1, -1, dtype=float)


def update_weighted(s: SufficientStats, b: RegressorBlock, gamma: float) -> SufficientStats:
    """Absorb a block under exponential forgetting.

    The stored products are discounted by ``gamma**T`` and the new rows enter
    with weights ``gamma**(T-1) .. gamma**0`` (most recent sample weighted
    most).  ``gamma = 1`` reproduces :func:`update_unweighted`.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"forgetting factor must lie in (0, 1], got {gamma}")
    _check_widths(s, b)
    w = _forgetting_weights(gamma, b.n_rows)
    scale = gamma ** b.n_rows
    return SufficientStats(
        R=_symmetrize(scale * s.R + (b.rows * w[:, None]).T @ b.rows),
        yt=scale * s.yt + b.rows.T @ (w * b.outputs),
        yb=scale * s.yb + float(w @ (b.outputs**2)),
        count=s.count + b.n_rows,
        weight=scale * s.weight + float(w.sum()),
        gamma_mode=s.gamma_mode,
    )


def weighted_stats_derivative(
    s_prev: SufficientStats, b: RegressorBlock, gamma: float
) -> tuple[np.ndarray, np.ndarray, float]:
    """Derivative of :func:`update_weighted` outputs w.r.t. ``gamma``.

    Returns ``(dR, dyt, dyb)`` for the map
    ``gamma -> (gamma**T * prev + rows' dG rows, ...)`` where the previous
    statistics keep their historical weights (they are treated as constants,
    only their ``gamma**T`` rescale is differentiated).
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"forgetting factor must lie in (0, 1], got {gamma}")
    _check_widths(s_prev, b)
    T = b.n_rows
    exps = np.arange(T - 1, -1, -1, dtype=float)
    # d/dgamma of gamma**e; the newest row (e = 0) contributes nothing
    dw = exps * gamma ** np.maximum(exps - 1.0, 0.0)
    dscale = T * gamma ** (T - 1)
    dR = _symmetrize(dscale * s_prev.R + (b.rows * dw[:, None]).T @ b.rows)
    dyt = dscale * s_prev.yt + b.rows.T @ (dw * b.outputs)
    dyb = dscale * s_prev.yb + float(dw @ (b.outputs**2))
    return dR, dyt, dyb
