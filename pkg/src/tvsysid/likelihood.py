"""Negative log marginal likelihood of the tap posterior, and its gradients.

Everything here is evaluated in tap space (n-dimensional) from the
sufficient statistics alone; no data-length-sized matrix is ever formed.
With ``K = L L'`` the prior covariance and ``M = sigma2 I + L' R L = S S'``,
the objective over ``k`` absorbed samples is

    f = (k - n) log sigma2 + 2 log|S| + (yb - ||S^-1 L' yt||^2) / sigma2

which equals the dense data-space form ``y' Sigma^-1 y + log det Sigma``
with ``Sigma = Phi K Phi' + sigma2 I`` exactly, at O(n^3) cost.

Gradients use the identities

    W := Phi' Sigma^-1 Phi = (R - R A'A R) / sigma2,   A = S^-1 L'
    b := Phi' Sigma^-1 y   = (yt - R A'A yt) / sigma2

so that df/dtheta_j = tr(K_j W) - b' K_j b for any kernel-parameter
derivative matrix K_j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import InsufficientDataError, NumericalError
from .kernel import HyperParams, KernelFactor, tc_kernel
from .stats import RegressorBlock, SufficientStats, update_weighted, weighted_stats_derivative

_RIDGE_RETRIES = 3


@dataclass(frozen=True)
class MlEvaluation:
    """Objective value, optional gradient, and its sign-split.

    ``split_pos - split_neg == grad`` componentwise over the kernel
    coordinates, with both parts nonnegative; ``chol_inner`` is the
    lower-triangular factor ``S``.  ``low_count`` flags evaluations with
    fewer samples than taps, where the ``(k - n)`` factor goes negative.
    """

    value: float
    chol_inner: np.ndarray
    grad: np.ndarray | None = None
    split_pos: np.ndarray | None = None
    split_neg: np.ndarray | None = None
    low_count: bool = False


def inner_cholesky(stats: SufficientStats, kf: KernelFactor, sigma2: float) -> np.ndarray:
    """Lower Cholesky factor of ``sigma2 I + L' R L``."""
    n = stats.n_taps
    inner = sigma2 * np.eye(n) + kf.chol.T @ stats.R @ kf.chol
    try:
        return np.linalg.cholesky((inner + inner.T) / 2.0)
    except np.linalg.LinAlgError as exc:  # sigma2 > 0 should prevent this
        raise NumericalError("inner covariance factorization failed") from exc


def eval_f(
    stats: SufficientStats, kf: KernelFactor, sigma2: float, k_total: int
) -> MlEvaluation:
    """Objective value only."""
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    n = stats.n_taps
    S = inner_cholesky(stats, kf, sigma2)
    half = scipy.linalg.solve_triangular(S, kf.chol.T @ stats.yt, lower=True)
    value = (
        (k_total - n) * np.log(sigma2)
        + 2.0 * float(np.sum(np.log(np.diag(S))))
        + (stats.yb - float(half @ half)) / sigma2
    )
    return MlEvaluation(value=value, chol_inner=S, low_count=k_total < n)


def _whitened_projector(kf: KernelFactor, S: np.ndarray) -> np.ndarray:
    """``A'A = L M^-1 L'`` with ``A = S^-1 L'``."""
    A = scipy.linalg.solve_triangular(S, kf.chol.T, lower=True)
    return A.T @ A


def _decay_derivative_psd_parts(kf: KernelFactor) -> tuple[np.ndarray, np.ndarray]:
    """The decay derivative as a difference of two PSD matrices.

    With ``B[k,j] = scale * decay**(max(k,j)-1)`` (PSD: it is the covariance
    rescaled) and ``max(k,j) = n - min(n-k, n-j)``,

        d cov/d decay = max(k,j) * B = n*B - min(n-k, n-j)*B

    where the min-matrix is PSD and Schur products of PSD matrices are PSD,
    so both terms are PSD and no eigendecomposition is needed.
    """
    n = kf.n_taps
    scaled = kf.cov / kf.params.decay
    idx = np.arange(1, n + 1, dtype=float)
    comp = n - np.maximum.outer(idx, idx)
    return n * scaled, comp * scaled


def eval_grad_eta(
    stats: SufficientStats,
    kf: KernelFactor,
    sigma2: float,
    k_total: int,
    want_split: bool = True,
) -> MlEvaluation:
    """Objective value plus gradient in (scale, decay).

    The gradient split assigns PSD contributions so that both parts are
    nonnegative: the scale derivative matrix is PSD already, the decay
    derivative matrix is separated by eigenvalue sign first.
    """
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    n = stats.n_taps
    S = inner_cholesky(stats, kf, sigma2)
    half = scipy.linalg.solve_triangular(S, kf.chol.T @ stats.yt, lower=True)
    value = (
        (k_total - n) * np.log(sigma2)
        + 2.0 * float(np.sum(np.log(np.diag(S))))
        + (stats.yb - float(half @ half)) / sigma2
    )

    proj = _whitened_projector(kf, S)
    W = (stats.R - stats.R @ proj @ stats.R) / sigma2
    W = (W + W.T) / 2.0
    b = (stats.yt - stats.R @ (proj @ stats.yt)) / sigma2

    def trace_term(K_j: np.ndarray) -> float:
        return float(np.sum(K_j * W))

    def quad_term(K_j: np.ndarray) -> float:
        return float(b @ K_j @ b)

    grad = np.array(
        [
            trace_term(kf.d_scale) - quad_term(kf.d_scale),
            trace_term(kf.d_decay) - quad_term(kf.d_decay),
        ]
    )

    split_pos = split_neg = None
    if want_split:
        # d_scale is PSD; d_decay generally is not, so use its PSD separation
        dec_pos, dec_neg = _decay_derivative_psd_parts(kf)
        split_pos = np.array(
            [
                max(trace_term(kf.d_scale), 0.0),
                max(trace_term(dec_pos) + quad_term(dec_neg), 0.0),
            ]
        )
        split_neg = np.maximum(split_pos - grad, 0.0)

    return MlEvaluation(
        value=value,
        chol_inner=S,
        grad=grad,
        split_pos=split_pos,
        split_neg=split_neg,
        low_count=k_total < n,
    )


def eval_grad_gamma(
    stats_prev: SufficientStats,
    block: RegressorBlock,
    params: HyperParams,
    sigma2: float,
    gamma: float,
    k_total: int,
) -> float:
    """Derivative of the objective w.r.t. the candidate forgetting factor.

    The candidate statistics are ``update_weighted(stats_prev, block,
    gamma)`` (stored statistics keep their historical weights); the chain
    rule through (R, yt, yb) gives

        df/dgamma = tr(A'A dR) + (dyb - 2 b' dyt + b' dR b) / sigma2

    with ``b`` the posterior tap mean at the candidate statistics.
    """
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    cand = update_weighted(stats_prev, block, gamma)
    dR, dyt, dyb = weighted_stats_derivative(stats_prev, block, gamma)

    kf = tc_kernel(params, stats_prev.n_taps)
    S = inner_cholesky(cand, kf, sigma2)
    proj = _whitened_projector(kf, S)
    b = proj @ cand.yt
    return float(np.sum(proj * dR) + (dyb - 2.0 * (b @ dyt) + b @ dR @ b) / sigma2)


def eval_grad_joint(
    stats_prev: SufficientStats,
    block: RegressorBlock,
    params: HyperParams,
    sigma2: float,
    k_total: int,
) -> tuple[float, np.ndarray]:
    """Value and (scale, decay, forgetting) gradient in one factorization.

    Equals composing :func:`eval_grad_eta` on the candidate statistics with
    :func:`eval_grad_gamma`, but shares the inner Cholesky factor; this is
    the hot path of the adaptive estimators.
    """
    if params.forgetting is None:
        raise ValueError("params.forgetting is required for the joint gradient")
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    gamma = params.forgetting
    cand = update_weighted(stats_prev, block, gamma)
    dR, dyt, dyb = weighted_stats_derivative(stats_prev, block, gamma)

    n = cand.n_taps
    kf = tc_kernel(params, n)
    S = inner_cholesky(cand, kf, sigma2)
    half = scipy.linalg.solve_triangular(S, kf.chol.T @ cand.yt, lower=True)
    value = (
        (k_total - n) * np.log(sigma2)
        + 2.0 * float(np.sum(np.log(np.diag(S))))
        + (cand.yb - float(half @ half)) / sigma2
    )

    proj = _whitened_projector(kf, S)
    W = (cand.R - cand.R @ proj @ cand.R) / sigma2
    W = (W + W.T) / 2.0
    b = (cand.yt - cand.R @ (proj @ cand.yt)) / sigma2
    g_scale = float(np.sum(kf.d_scale * W)) - float(b @ kf.d_scale @ b)
    g_decay = float(np.sum(kf.d_decay * W)) - float(b @ kf.d_decay @ b)

    h_post = proj @ cand.yt
    g_gamma = float(
        np.sum(proj * dR) + (dyb - 2.0 * (h_post @ dyt) + h_post @ dR @ h_post) / sigma2
    )
    return value, np.array([g_scale, g_decay, g_gamma])


def ls_sigma2(stats: SufficientStats, k_total: int) -> tuple[np.ndarray, float]:
    """Least-squares tap estimate and residual noise variance.

    Solves ``R h = yt`` (with an escalating ridge if R is numerically
    singular) and normalizes the weighted residual
    ``yb - 2 yt'h + h'Rh`` by the effective degrees of freedom
    ``weight - n`` (equal to ``k_total - n`` when nothing is discounted).
    Normalizing by the raw count instead systematically underestimates the
    noise once forgetting has shrunk the statistics, which destabilizes
    everything downstream.  The result is floored away from zero so a
    noise-free stream cannot produce a degenerate likelihood.
    """
    n = stats.n_taps
    if k_total <= n:
        raise InsufficientDataError(f"need more than {n} samples, got {k_total}")

    h_ls = _solve_psd_with_ridge(stats.R, stats.yt)
    resid = stats.yb - 2.0 * float(stats.yt @ h_ls) + float(h_ls @ stats.R @ h_ls)
    dof = max(stats.weight - n, 1.0)
    floor = 1e-12 * max(1.0, stats.yb / k_total)
    return h_ls, max(resid / dof, floor)


def _solve_psd_with_ridge(R: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = R.shape[0]
    ridge = 0.0
    for attempt in range(1 + _RIDGE_RETRIES):
        try:
            c, low = scipy.linalg.cho_factor(R + ridge * np.eye(n), lower=True)
            return scipy.linalg.cho_solve((c, low), rhs)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            base = 1e-10 * max(np.trace(R) / n, 1e-30)
            ridge = base * 10.0**attempt
    raise NumericalError("normal-equation solve failed despite ridge escalation")
