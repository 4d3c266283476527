"""Online tap estimators: Bayesian with forgetting, their offline references,
and a forgetting-factor recursive-least-squares baseline.

Four Bayesian modes share one state type:

``fixed_ff``
    Forgetting factor supplied by the user; each arrival performs one
    statistics update, one LS noise re-estimate, one scaled-gradient step on
    the marginal likelihood over (scale, decay), and one posterior solve.
``adaptive_ff``
    The forgetting factor is estimated alongside (scale, decay) in the same
    single gradient step (identity step metric); the candidate factor
    rescales the stored statistics and weights the newest block only.
``opt_fixed_ff`` / ``opt_adaptive_ff``
    Reference modes that re-optimize to convergence at every arrival
    (warm-started); the adaptive reference keeps the raw stream and rebuilds
    its statistics from scratch for each candidate factor, so its forgetting
    factor reweights the whole history.

Estimates are FIR taps; the posterior mean solves
``(R + sigma2 K^-1) h = yt`` in the numerically stable whitened form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
import scipy.linalg

from .exceptions import InsufficientDataError, NumericalError
from .kernel import HyperBox, HyperParams, KernelFactor, tc_kernel
from .likelihood import eval_f, eval_grad_eta, eval_grad_joint, inner_cholesky, ls_sigma2
from .sgp import SgpState, initial_state, one_step, run_to_convergence
from .stats import (
    RegressorBlock,
    SufficientStats,
    build_block,
    empty_stats,
    update_weighted,
)

Mode = Literal["fixed_ff", "adaptive_ff", "opt_fixed_ff", "opt_adaptive_ff"]

#: Minimum initialization batch length beyond the tap count.
INIT_MARGIN = 10
#: Per-arrival cap on the forgetting-factor move in adaptive mode.  One
#: block of fresh samples cannot justify emptying the whole data window in
#: one go; rate-limiting the estimate keeps the effective window from
#: collapsing below identifiability during a switch transient.
GAMMA_STEP_LIMIT = 0.01


@dataclass(frozen=True)
class OpCounters:
    """Per-state operation counts, for algorithm-fidelity assertions."""

    stats_updates: int = 0
    ls_solves: int = 0
    sgp_steps: int = 0
    posterior_solves: int = 0


@dataclass(frozen=True)
class EstimatorState:
    """Everything one estimator carries between data arrivals."""

    mode: Mode
    n_taps: int
    stats: SufficientStats
    params: HyperParams
    sgp: SgpState
    h_hat: np.ndarray
    sigma2: float
    clock: int
    box: HyperBox
    opt_rel_tol: float
    gamma_bar: float | None
    input_tail: np.ndarray
    history_u: np.ndarray | None = None
    history_y: np.ndarray | None = None
    fault: str | None = None
    fault_count: int = 0
    counters: OpCounters = OpCounters()

    @property
    def adaptive(self) -> bool:
        return self.mode in ("adaptive_ff", "opt_adaptive_ff")


class EtaObjective:
    """Marginal-likelihood objective over (scale, decay) at frozen statistics."""

    def __init__(self, stats: SufficientStats, sigma2: float, k_total: int):
        self.stats = stats
        self.sigma2 = sigma2
        self.k_total = k_total
        self.value_calls = 0
        self.grad_calls = 0

    def value(self, x: np.ndarray) -> float:
        self.value_calls += 1
        kf = tc_kernel(HyperParams.from_vector(x), self.stats.n_taps)
        return eval_f(self.stats, kf, self.sigma2, self.k_total).value

    def value_grad(self, x: np.ndarray):
        self.grad_calls += 1
        kf = tc_kernel(HyperParams.from_vector(x), self.stats.n_taps)
        ev = eval_grad_eta(self.stats, kf, self.sigma2, self.k_total)
        return ev.value, ev.grad, ev.split_pos


class JointObjective:
    """Objective over (scale, decay, forgetting).

    The candidate forgetting factor re-scales ``stats_prev`` and weights
    ``block``; with empty previous statistics and the whole stream as the
    block this is the full-history objective used by the offline reference
    and the batch initialization.

    The raw marginal-likelihood value is adjusted in two ways, both pure
    functions of the forgetting coordinate:

    * Down-weighting a sample by ``w`` inflates its noise variance by
      ``1/w``, and the likelihood of that non-constant-variance model
      carries a ``-log det`` of the weight matrix that the whitened form
      drops.  Without it, smaller weights are rewarded unconditionally and
      the forgetting estimate dives to the box floor even on perfectly
      stationary streams.
    * The re-scaled history enters prediction as a (broadened) prior, not
      as re-observed data, so the stored statistics contribute no
      normalization of their own: their whitened likelihood at the current
      kernel is subtracted back out.  What remains is the predictive score
      of the newest block given the discounted past, which is the honest
      per-arrival increment of the streaming likelihood: it prefers keeping
      data while one model explains the stream and pays for discounting
      only what the new block contradicts.
    """

    def __init__(
        self,
        stats_prev: SufficientStats,
        block: RegressorBlock,
        sigma2: float,
        k_total: int,
        eta_frozen: HyperParams | None = None,
    ):
        self.stats_prev = stats_prev
        self.block = block
        self.sigma2 = sigma2
        self.k_total = k_total
        T = block.n_rows
        self._T = T
        # log det of the new block's own weights: exponents T-1 .. 0
        self._new_logdet_coeff = T * (T - 1) / 2.0
        # whitened history products at the frozen kernel, for the
        # subtracted history term (zero statistics make it vanish)
        n = stats_prev.n_taps
        if eta_frozen is None:
            eta_frozen = HyperParams(scale=1.0, decay=0.5)
        kf0 = tc_kernel(HyperParams(eta_frozen.scale, eta_frozen.decay), n)
        b0 = kf0.chol.T @ stats_prev.R @ kf0.chol
        self._hist_inner = (b0 + b0.T) / 2.0
        self._hist_cross = kf0.chol.T @ stats_prev.yt
        self._hist_power = stats_prev.yb
        self.value_calls = 0
        self.grad_calls = 0

    def _candidate(self, gamma: float) -> SufficientStats:
        return update_weighted(self.stats_prev, self.block, gamma)

    def _history_term(self, gamma: float, want_grad: bool) -> tuple[float, float]:
        """Whitened likelihood of the ``gamma**T``-rescaled history alone."""
        n = self.stats_prev.n_taps
        sigma2 = self.sigma2
        s = gamma**self._T
        S_r = np.linalg.cholesky(sigma2 * np.eye(n) + s * self._hist_inner)
        half = scipy.linalg.solve_triangular(S_r, s * self._hist_cross, lower=True)
        value = (
            2.0 * float(np.sum(np.log(np.diag(S_r))))
            + (s * self._hist_power - float(half @ half)) / sigma2
        )
        if not want_grad:
            return value, 0.0
        ds = self._T * gamma ** (self._T - 1)
        c_r = scipy.linalg.solve_triangular(S_r.T, half, lower=False)
        trace = float(np.trace(scipy.linalg.cho_solve((S_r, True), self._hist_inner)))
        quad = (
            self._hist_power
            - 2.0 * float(c_r @ self._hist_cross)
            + float(c_r @ self._hist_inner @ c_r)
        )
        return value, ds * (trace + quad / sigma2)

    def value(self, x: np.ndarray) -> float:
        self.value_calls += 1
        params = HyperParams.from_vector(x)
        kf = tc_kernel(params, self.stats_prev.n_taps)
        cand = self._candidate(params.forgetting)
        raw = eval_f(cand, kf, self.sigma2, self.k_total).value
        hist, _ = self._history_term(params.forgetting, want_grad=False)
        return raw - hist - self._new_logdet_coeff * np.log(params.forgetting)

    def value_grad(self, x: np.ndarray):
        self.grad_calls += 1
        params = HyperParams.from_vector(x)
        value, grad = eval_grad_joint(
            self.stats_prev, self.block, params, self.sigma2, self.k_total
        )
        hist, dhist = self._history_term(params.forgetting, want_grad=True)
        value -= hist + self._new_logdet_coeff * np.log(params.forgetting)
        grad = grad.copy()
        grad[2] -= dhist + self._new_logdet_coeff / params.forgetting
        return value, grad, None


def posterior_mean(stats: SufficientStats, kf: KernelFactor, sigma2: float) -> np.ndarray:
    """Posterior tap mean ``(R + sigma2 K^-1)^-1 yt``.

    Computed as ``L (sigma2 I + L'RL)^-1 L' yt`` so the prior covariance is
    never inverted explicitly.
    """
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    S = inner_cholesky(stats, kf, sigma2)
    c = scipy.linalg.solve_triangular(S, kf.chol.T @ stats.yt, lower=True)
    c = scipy.linalg.solve_triangular(S.T, c, lower=False)
    return kf.chol @ c


def _default_start(y: np.ndarray, mode: Mode, gamma_init: float) -> HyperParams:
    """Cold-start point for the batch optimization: prior variance at the
    output power, mid-range decay."""
    scale0 = max(float(np.var(y)), 1e-6)
    if mode in ("adaptive_ff", "opt_adaptive_ff"):
        return HyperParams(scale=scale0, decay=0.9, forgetting=gamma_init)
    return HyperParams(scale=scale0, decay=0.9)


def initialize(
    u,
    y,
    n: int,
    mode: Mode,
    gamma: float = 1.0,
    box: HyperBox | None = None,
    opt_rel_tol: float = 1e-9,
) -> EstimatorState:
    """Build an estimator from the first data batch.

    Statistics are accumulated over the whole batch, the noise variance
    comes from the LS residual, and the hyper-parameters are optimized to
    convergence on the batch objective (``gamma`` is the fixed forgetting
    factor in the fixed modes and the optimizer's starting value in the
    adaptive ones).
    """
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if box is None:
        box = HyperBox()
    if u.size < n + INIT_MARGIN:
        raise InsufficientDataError(
            f"initialization batch of {u.size} samples is too short for {n} taps"
        )
    adaptive = mode in ("adaptive_ff", "opt_adaptive_ff")
    block = build_block(u, y, start=1, n=n)
    k0 = u.size

    start = _default_start(y, mode, gamma)
    if adaptive:
        # The joint objective is badly conditioned for an identity-metric
        # BB chain (the forgetting coordinate is orders of magnitude
        # stiffer), so the batch optimum is located by a line search over
        # the forgetting factor with the well-scaled 2-D optimizer inside,
        # and the joint chain only polishes from there (this also seeds the
        # online optimizer with consistent joint iterates and gradient).
        base = empty_stats(n, "adaptive")
        _, sigma2 = ls_sigma2(update_weighted(base, block, gamma), k0)
        k_corr = k0 * (k0 - 1) / 2.0
        best = None
        grid = sorted(set(np.linspace(*box.forgetting, 6)) | {gamma})
        for g in grid:
            stats_g = update_weighted(base, block, g)
            inner = run_to_convergence(
                initial_state(start.as_vector()[:2]),
                EtaObjective(stats_g, sigma2, k0),
                box.lower(False),
                box.upper(False),
                use_scaling=True,
                rel_tol=opt_rel_tol,
            )
            corrected = inner.f_value - k_corr * np.log(g)
            if best is None or corrected < best[0]:
                best = (corrected, inner.x, g)
        _, eta_best, gamma_best = best
        objective = JointObjective(base, block, sigma2, k0)
        sgp = run_to_convergence(
            initial_state(np.append(eta_best, gamma_best)),
            objective,
            box.lower(True),
            box.upper(True),
            use_scaling=False,
            rel_tol=opt_rel_tol,
        )
        params = HyperParams.from_vector(sgp.x)
        stats = update_weighted(base, block, params.forgetting)
        gamma_bar = None
    else:
        stats = update_weighted(empty_stats(n, "fixed"), block, gamma)
        _, sigma2 = ls_sigma2(stats, k0)
        objective = EtaObjective(stats, sigma2, k0)
        sgp = run_to_convergence(
            initial_state(start.as_vector()),
            objective,
            box.lower(False),
            box.upper(False),
            use_scaling=True,
            rel_tol=opt_rel_tol,
        )
        params = HyperParams.from_vector(sgp.x)
        gamma_bar = gamma

    h_hat = posterior_mean(stats, tc_kernel(params, n), sigma2)
    return EstimatorState(
        mode=mode,
        n_taps=n,
        stats=stats,
        params=params,
        sgp=sgp,
        h_hat=h_hat,
        sigma2=sigma2,
        clock=k0,
        box=box,
        opt_rel_tol=opt_rel_tol,
        gamma_bar=gamma_bar,
        input_tail=u[-(n - 1) :].copy() if n > 1 else np.zeros(0),
        history_u=u.copy() if mode == "opt_adaptive_ff" else None,
        history_y=y.copy() if mode == "opt_adaptive_ff" else None,
    )


def _block_from_tail(state: EstimatorState, u_new: np.ndarray, y_new: np.ndarray):
    """Regressor rows for the new samples, lags served from the stored tail."""
    n = state.n_taps
    u_ext = np.concatenate([state.input_tail, u_new])
    y_ext = np.concatenate([np.zeros(n - 1), y_new])
    block = build_block(u_ext, y_ext, start=n, n=n)
    tail = u_ext[-(n - 1) :].copy() if n > 1 else np.zeros(0)
    return block, tail


def update(state: EstimatorState, u_new, y_new) -> EstimatorState:
    """Absorb one block of new samples and refresh every estimate.

    On a numerical failure the block is skipped: the previous estimates are
    retained, the clock and lag window still advance, and the fault is
    recorded on the returned state.
    """
    u_new = np.asarray(u_new, dtype=float)
    y_new = np.asarray(y_new, dtype=float)
    if u_new.size < 1 or u_new.size != y_new.size:
        raise ValueError("update needs equal-length, non-empty u and y blocks")
    block, tail = _block_from_tail(state, u_new, y_new)
    k_new = state.clock + u_new.size

    advanced = replace(state, clock=k_new, input_tail=tail)
    if state.mode == "opt_adaptive_ff":
        advanced = replace(
            advanced,
            history_u=np.concatenate([state.history_u, u_new]),
            history_y=np.concatenate([state.history_y, y_new]),
        )

    try:
        if state.mode == "fixed_ff":
            return _update_fixed(advanced, block, k_new, converge=False)
        if state.mode == "opt_fixed_ff":
            return _update_fixed(advanced, block, k_new, converge=True)
        if state.mode == "adaptive_ff":
            return _update_adaptive(advanced, block, k_new)
        if state.mode == "opt_adaptive_ff":
            return _update_opt_adaptive(advanced, k_new)
        raise ValueError(f"unknown mode {state.mode!r}")
    except NumericalError as exc:
        return replace(advanced, fault=str(exc), fault_count=state.fault_count + 1)


def _bump(c: OpCounters) -> OpCounters:
    return OpCounters(
        stats_updates=c.stats_updates + 1,
        ls_solves=c.ls_solves + 1,
        sgp_steps=c.sgp_steps + 1,
        posterior_solves=c.posterior_solves + 1,
    )


def _fresh_sigma2(state: EstimatorState, stats: SufficientStats, k_new: int) -> float:
    """LS noise re-estimate, kept at its previous value while the effective
    window is too thin to support one."""
    if stats.weight > state.n_taps + INIT_MARGIN:
        return ls_sigma2(stats, k_new)[1]
    return state.sigma2


def _update_fixed(
    state: EstimatorState, block: RegressorBlock, k_new: int, converge: bool
) -> EstimatorState:
    stats = update_weighted(state.stats, block, state.gamma_bar)
    sigma2 = _fresh_sigma2(state, stats, k_new)
    objective = EtaObjective(stats, sigma2, k_new)
    lo, hi = state.box.lower(False), state.box.upper(False)
    if converge:
        sgp = run_to_convergence(
            state.sgp, objective, lo, hi, use_scaling=True, rel_tol=state.opt_rel_tol
        )
    else:
        sgp = one_step(state.sgp, objective, lo, hi, use_scaling=True)
    params = HyperParams.from_vector(sgp.x)
    h_hat = posterior_mean(stats, tc_kernel(params, state.n_taps), sigma2)
    return replace(
        state,
        stats=stats,
        params=params,
        sgp=sgp,
        h_hat=h_hat,
        sigma2=sigma2,
        counters=_bump(state.counters),
    )


def _update_adaptive(
    state: EstimatorState, block: RegressorBlock, k_new: int
) -> EstimatorState:
    # noise variance from the pre-update statistics, new sample count
    sigma2 = _fresh_sigma2(state, state.stats, k_new)
    objective = JointObjective(state.stats, block, sigma2, k_new, eta_frozen=state.params)
    lo, hi = state.box.lower(True), state.box.upper(True)
    cap = np.array([np.inf, np.inf, GAMMA_STEP_LIMIT])
    sgp = one_step(state.sgp, objective, lo, hi, use_scaling=False, max_move=cap)
    params = HyperParams.from_vector(sgp.x)
    stats = update_weighted(state.stats, block, params.forgetting)
    h_hat = posterior_mean(stats, tc_kernel(params, state.n_taps), sigma2)
    return replace(
        state,
        stats=stats,
        params=params,
        sgp=sgp,
        h_hat=h_hat,
        sigma2=sigma2,
        counters=_bump(state.counters),
    )


def _update_opt_adaptive(state: EstimatorState, k_new: int) -> EstimatorState:
    n = state.n_taps
    full_block = build_block(state.history_u, state.history_y, start=1, n=n)
    base = empty_stats(n, "adaptive")
    sigma2 = _fresh_sigma2(state, state.stats, k_new)
    objective = JointObjective(base, full_block, sigma2, k_new)
    lo, hi = state.box.lower(True), state.box.upper(True)
    sgp = run_to_convergence(
        state.sgp, objective, lo, hi, use_scaling=False, rel_tol=state.opt_rel_tol
    )
    params = HyperParams.from_vector(sgp.x)
    stats = update_weighted(base, full_block, params.forgetting)
    h_hat = posterior_mean(stats, tc_kernel(params, n), sigma2)
    return replace(
        state,
        stats=stats,
        params=params,
        sgp=sgp,
        h_hat=h_hat,
        sigma2=sigma2,
        counters=_bump(state.counters),
    )


# ---------------------------------------------------------------------------
# Forgetting-factor RLS baseline (same FIR model class, no regularization)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RlsState:
    """Tap estimate and inverse information matrix of forgetting-factor RLS."""

    theta: np.ndarray
    P: np.ndarray
    gamma_bar: float

    @property
    def n_taps(self) -> int:
        return self.theta.shape[0]


def rls_initialize(u, y, m: int, gamma_bar: float) -> RlsState:
    """Exact weighted least squares over a first batch.

    Seeds the recursion with the dense solution so subsequent
    :func:`rls_update` calls track the weighted-LS minimizer exactly.
    """
    if not 0.0 < gamma_bar <= 1.0:
        raise ValueError(f"forgetting factor must lie in (0, 1], got {gamma_bar}")
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.size <= m:
        raise InsufficientDataError(f"need more than {m} samples, got {u.size}")
    block = build_block(u, y, start=1, n=m)
    w = gamma_bar ** np.arange(u.size - 1, -1, -1, dtype=float)
    info = (block.rows * w[:, None]).T @ block.rows
    info = (info + info.T) / 2.0
    cross = block.rows.T @ (w * block.outputs)
    try:
        c, low = scipy.linalg.cho_factor(info, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError("RLS initialization batch is rank deficient") from exc
    P = scipy.linalg.cho_solve((c, low), np.eye(m))
    return RlsState(theta=P @ cross, P=(P + P.T) / 2.0, gamma_bar=gamma_bar)


def rls_update(state: RlsState, phi, y: float) -> RlsState:
    """One sample of forgetting-factor RLS."""
    phi = np.asarray(phi, dtype=float)
    Pphi = state.P @ phi
    gain = Pphi / (state.gamma_bar + float(phi @ Pphi))
    theta = state.theta + gain * (y - float(phi @ state.theta))
    P = (state.P - np.outer(gain, Pphi)) / state.gamma_bar
    return RlsState(theta=theta, P=(P + P.T) / 2.0, gamma_bar=state.gamma_bar)
