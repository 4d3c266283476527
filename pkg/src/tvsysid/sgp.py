"""Scaled gradient projection with alternating Barzilai-Borwein steps.

Operates on plain parameter vectors inside a box.  One call to
:func:`one_step` performs exactly one gradient evaluation of the supplied
objective (plus however many value evaluations the backtracking needs),
which is what makes the online estimators real-time capable; the same
machinery iterated to a relative-change tolerance provides the offline
reference optimizers.

Each step approximates the inverse Hessian by ``alpha * D`` where
``alpha`` alternates the two Barzilai-Borwein formulas built from the last
iterate/gradient differences and ``D`` is either the identity or a diagonal
matrix derived from the positive part of the gradient split.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np

ARMIJO_C = 1e-4
BACKTRACK_DELTA = 0.4
ALPHA_BOUNDS = (1e-8, 1e8)
D_BOUNDS = (1e-6, 1e6)
NU_MIN = 1e-10
MAX_ITERS = 500


class Objective(Protocol):
    """Value/gradient oracle over a parameter vector."""

    def value(self, x: np.ndarray) -> float: ...

    def value_grad(self, x: np.ndarray) -> tuple[float, np.ndarray, np.ndarray | None]:
        """Return ``(f, grad, split_pos)``; ``split_pos`` may be None."""
        ...


@dataclass(frozen=True)
class SgpState:
    """Optimizer iterate plus the memory the BB rules need.

    ``grad_prev`` is the gradient at ``x_prev`` evaluated on the objective
    that was current when that point was visited; across online updates the
    objective changes between calls, exactly as the step-length recursion
    expects.  Counters accumulate over the state's lifetime.
    """

    x: np.ndarray
    x_prev: np.ndarray | None = None
    grad_prev: np.ndarray | None = None
    use_first_bb: bool = True
    f_value: float = np.nan
    last_nu: float = np.nan
    alpha_bounds: tuple[float, float] = ALPHA_BOUNDS
    stalled: bool = False
    converged: bool = True
    accepted_steps: int = 0
    armijo_violations: int = 0
    box_violations: int = 0
    stall_count: int = 0


def initial_state(x0: np.ndarray) -> SgpState:
    return SgpState(x=np.asarray(x0, dtype=float).copy())


def scaling_matrix(
    split_pos: np.ndarray | None,
    x: np.ndarray,
    bounds: tuple[float, float] = D_BOUNDS,
) -> np.ndarray:
    """Diagonal of the step metric: ``x_j / split_pos_j`` clamped.

    Falls back to 1 on any coordinate whose positive-part entry is zero or
    non-finite (the split guarantees strict positivity only with data).
    """
    d = np.ones_like(x)
    if split_pos is None:
        return d
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = x / split_pos
    ok = np.isfinite(ratio) & (split_pos > 0.0)
    d[ok] = np.clip(ratio[ok], bounds[0], bounds[1])
    return d


def _bb_alpha(state: SgpState, grad: np.ndarray, d: np.ndarray) -> float:
    """Alternating BB step length from the stored iterate/gradient pair.

    Computed in the metric of the diagonal scaling ``d`` so that ``alpha``
    corrects the scaled direction instead of re-estimating the curvature the
    scaling already captured; at ``d = 1`` these are the plain BB formulas.
    """
    if state.x_prev is None or state.grad_prev is None:
        return 1.0
    r = state.x - state.x_prev
    w = grad - state.grad_prev
    rr = float(r @ r)
    ww = float(w @ w)
    if rr == 0.0:
        return 1.0
    fallback = max(1.0, np.sqrt(rr) / max(np.sqrt(ww), 1e-300))
    if state.use_first_bb:
        denom = float(r @ (w / d))
        alpha = float(r @ (r / d**2)) / denom if np.isfinite(denom) and denom > 0.0 else fallback
    else:
        num = float(r @ (w * d))
        denom = float(w @ (w * d**2))
        alpha = num / denom if np.isfinite(num) and num > 0.0 and denom > 0.0 else fallback
    return float(np.clip(alpha, state.alpha_bounds[0], state.alpha_bounds[1]))


def one_step(
    state: SgpState,
    objective: Objective,
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    use_scaling: bool = True,
    max_move: np.ndarray | None = None,
) -> SgpState:
    """Take one projected, backtracked step on ``objective``.

    Returns the successor state; ``state.x`` of the result is the new
    iterate.  If backtracking exhausts itself the iterate is returned
    unchanged with ``stalled`` set.  ``max_move`` optionally caps the
    per-coordinate displacement (projection onto the box intersected with
    a trust region around the current iterate, still a convex set
    containing it).
    """
    x = state.x
    f0, grad, split_pos = objective.value_grad(x)

    first_step = state.x_prev is None
    if use_scaling and not first_step:
        d = scaling_matrix(split_pos, x)
    else:
        d = np.ones_like(x)
    alpha = _bb_alpha(state, grad, d)

    lo, hi = box_lo, box_hi
    if max_move is not None:
        lo = np.maximum(lo, x - max_move)
        hi = np.minimum(hi, x + max_move)
    z = np.clip(x - alpha * d * grad, lo, hi)
    delta = z - x
    slope = float(grad @ delta)

    nu = 1.0
    accepted = False
    f_new = f0
    x_new = x
    while nu >= NU_MIN:
        # clip cleans up ulp-level wobble; within rounding this is x + nu*delta
        trial = z if nu == 1.0 else np.clip(x + nu * delta, lo, hi)
        f_trial = objective.value(trial)
        if np.isfinite(f_trial) and f_trial <= f0 + ARMIJO_C * nu * slope:
            accepted = True
            f_new = f_trial
            x_new = trial
            break
        nu *= BACKTRACK_DELTA

    if not accepted:
        return replace(
            state,
            x_prev=x.copy(),
            grad_prev=grad,
            f_value=f0,
            last_nu=0.0,
            stalled=True,
            stall_count=state.stall_count + 1,
        )

    # instrumented re-checks of the acceptance invariants
    armijo_bad = not (f_new <= f0 + ARMIJO_C * nu * slope)
    box_bad = bool(np.any(x_new < box_lo) or np.any(x_new > box_hi))
    return replace(
        state,
        x=x_new,
        x_prev=x.copy(),
        grad_prev=grad,
        use_first_bb=not state.use_first_bb,
        f_value=f_new,
        last_nu=nu,
        stalled=False,
        accepted_steps=state.accepted_steps + 1,
        armijo_violations=state.armijo_violations + int(armijo_bad),
        box_violations=state.box_violations + int(box_bad),
    )


def run_to_convergence(
    state: SgpState,
    objective: Objective,
    box_lo: np.ndarray,
    box_hi: np.ndarray,
    use_scaling: bool = True,
    rel_tol: float = 1e-9,
    max_iters: int = MAX_ITERS,
) -> SgpState:
    """Iterate :func:`one_step` until the relative objective change is small.

    Stops when ``|f_prev - f_curr| / max(1, |f_prev|) < rel_tol`` on a
    full-length (unbacktracked) step, on stall, or at the iteration cap (in
    which case ``converged`` is False; this is a result flag, not an
    error).  Backtracked steps are not allowed to trigger the tolerance
    stop: a tiny improvement after heavy step shrinking signals a struggling
    line search rather than stationarity.
    """
    if rel_tol <= 0.0:
        raise ValueError(f"rel_tol must be positive, got {rel_tol}")
    f_prev = objective.value(state.x)
    for _ in range(max_iters):
        state = one_step(state, objective, box_lo, box_hi, use_scaling)
        f_curr = state.f_value
        small = abs(f_prev - f_curr) < rel_tol * max(1.0, abs(f_prev))
        if state.stalled or (small and state.last_nu == 1.0):
            return replace(state, converged=True)
        f_prev = f_curr
    return replace(state, converged=False)
