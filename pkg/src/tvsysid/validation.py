"""Self-contained oracle checks backing the ``validate`` CLI verb.

Each check recomputes an independent reference (dense data-space algebra,
finite differences, direct weighted solves) and compares the library path
against it.  The full test suite covers far more; this battery is the quick
field check that an installation computes the right numbers.
"""

from __future__ import annotations

import numpy as np

from .estimators import posterior_mean, rls_initialize, rls_update
from .kernel import HyperBox, HyperParams, project_box, tc_kernel
from .likelihood import eval_f, eval_grad_eta, eval_grad_gamma, ls_sigma2
from .metrics import fit
from .stats import build_block, empty_stats, update_weighted


def _random_instance(rng, n_samples, n_taps):
    u = rng.standard_normal(n_samples)
    h = rng.standard_normal(n_taps) * 0.5 ** np.arange(n_taps)
    block = build_block(u, np.zeros(n_samples), 1, n_taps)
    y = block.rows @ h + 0.3 * rng.standard_normal(n_samples)
    return u, y


def check_dense_likelihood(rng) -> float:
    """eval_f vs the data-length-dimensional definition."""
    worst = 0.0
    for _ in range(10):
        n, N = int(rng.integers(4, 20)), int(rng.integers(60, 200))
        u, y = _random_instance(rng, N, n)
        block = build_block(u, y, 1, n)
        stats = update_weighted(empty_stats(n), block, 1.0)
        params = HyperParams(scale=float(rng.uniform(0.3, 3.0)), decay=float(rng.uniform(0.4, 0.9)))
        kf = tc_kernel(params, n)
        sigma2 = float(rng.uniform(0.2, 2.0))
        got = eval_f(stats, kf, sigma2, N).value
        cov = block.rows @ kf.cov @ block.rows.T + sigma2 * np.eye(N)
        want = float(y @ np.linalg.solve(cov, y) + np.linalg.slogdet(cov)[1])
        worst = max(worst, abs(got - want) / abs(want))
    return worst


def check_gradients(rng) -> float:
    """Analytic gradients vs central finite differences."""
    worst = 0.0
    for _ in range(10):
        n, N = int(rng.integers(4, 15)), int(rng.integers(60, 150))
        u, y = _random_instance(rng, N, n)
        block = build_block(u, y, 1, n)
        prev = update_weighted(empty_stats(n), build_block(u[: N // 2], y[: N // 2], 1, n), 0.97)
        tail_block = build_block(u, y, N // 2 + 1, n)
        params = HyperParams(scale=1.2, decay=0.7, forgetting=0.96)
        sigma2 = 0.8
        stats = update_weighted(prev, tail_block, params.forgetting)
        ev = eval_grad_eta(stats, tc_kernel(params, n), sigma2, N)

        for j, (lo_p, hi_p) in enumerate(
            [
                (HyperParams(1.2 - 1e-6, 0.7), HyperParams(1.2 + 1e-6, 0.7)),
                (HyperParams(1.2, 0.7 - 1e-7), HyperParams(1.2, 0.7 + 1e-7)),
            ]
        ):
            h = (hi_p.scale - lo_p.scale) / 2 if j == 0 else (hi_p.decay - lo_p.decay) / 2
            fd = (
                eval_f(stats, tc_kernel(hi_p, n), sigma2, N).value
                - eval_f(stats, tc_kernel(lo_p, n), sigma2, N).value
            ) / (2 * h)
            worst = max(worst, abs(ev.grad[j] - fd) / max(abs(fd), 1e-9))

        got = eval_grad_gamma(prev, tail_block, params, sigma2, params.forgetting, N)
        eps = 1e-6
        fd = (
            eval_f(update_weighted(prev, tail_block, params.forgetting + eps), tc_kernel(params, n), sigma2, N).value
            - eval_f(update_weighted(prev, tail_block, params.forgetting - eps), tc_kernel(params, n), sigma2, N).value
        ) / (2 * eps)
        worst = max(worst, abs(got - fd) / max(abs(fd), 1e-9))
    return worst


def check_recursive_stats(rng) -> float:
    """Blockwise weighted updates vs dense weighted products."""
    n, N, gamma = 6, 90, 0.95
    u, y = _random_instance(rng, N, n)
    stats = empty_stats(n)
    splits = [0, 17, 40, 41, 66, N]
    for a, b in zip(splits[:-1], splits[1:]):
        blk = build_block(u[:b], y[:b], a + 1, n)
        stats = update_weighted(stats, blk, gamma)
    full = build_block(u, y, 1, n)
    w = gamma ** np.arange(N - 1, -1, -1, dtype=float)
    R = (full.rows * w[:, None]).T @ full.rows
    err = np.linalg.norm(stats.R - R) / np.linalg.norm(R)
    yt = full.rows.T @ (w * y)
    err = max(err, np.linalg.norm(stats.yt - yt) / np.linalg.norm(yt))
    yb = float(w @ y**2)
    return max(err, abs(stats.yb - yb) / abs(yb))


def check_posterior(rng) -> float:
    """Stable posterior solve vs dense normal equations, and RLS vs dense."""
    n, N = 10, 120
    u, y = _random_instance(rng, N, n)
    block = build_block(u, y, 1, n)
    stats = update_weighted(empty_stats(n), block, 0.97)
    params = HyperParams(scale=2.0, decay=0.8)
    kf = tc_kernel(params, n)
    sigma2 = 0.5
    got = posterior_mean(stats, kf, sigma2)
    want = np.linalg.solve(stats.R + sigma2 * np.linalg.inv(kf.cov), stats.yt)
    worst = float(np.linalg.norm(got - want) / np.linalg.norm(want))

    m, gamma = 6, 0.98
    rls = rls_initialize(u[:40], y[:40], m, gamma)
    blk = build_block(u, y, 41, m)
    for row, out in zip(blk.rows, blk.outputs):
        rls = rls_update(rls, row, out)
    full = build_block(u, y, 1, m)
    w = gamma ** np.arange(N - 1, -1, -1, dtype=float)
    theta = np.linalg.solve((full.rows * w[:, None]).T @ full.rows, full.rows.T @ (w * y))
    return max(worst, float(np.linalg.norm(rls.theta - theta) / np.linalg.norm(theta)))


def check_small_cases(rng) -> float:
    """Spot values with closed forms."""
    box = HyperBox()
    p = project_box(HyperParams(scale=-1.0, decay=0.5), box)
    err = abs(p.scale - box.scale[0])
    err = max(err, abs(fit(np.ones(4), np.ones(4)) - 100.0))
    err = max(err, abs(fit(np.ones(4), 2.0 * np.ones(4))))
    stats = update_weighted(empty_stats(1), build_block([1.0], [2.0], 1, 1), 1.0)
    later = build_block([1.0, 0.0, 0.0], [2.0, 1.0, 1.0], 2, 1)
    _, s2 = ls_sigma2(update_weighted(stats, later, 1.0), 3)
    # residual 2 over (3 - 1) samples
    err = max(err, abs(s2 - 1.0))
    return float(err)


CHECKS = [
    ("dense-likelihood equivalence", check_dense_likelihood, 1e-8),
    ("gradient finite differences", check_gradients, 1e-5),
    ("recursive vs batch statistics", check_recursive_stats, 1e-10),
    ("posterior/RLS dense solves", check_posterior, 1e-8),
    ("closed-form spot checks", check_small_cases, 1e-12),
]


def run_validation(verbose: bool = True) -> bool:
    """Run the battery; prints one line per check, returns overall success."""
    from threadpoolctl import threadpool_limits

    rng = np.random.default_rng(20240901)
    ok = True
    with threadpool_limits(limits=1):
        for name, fn, tol in CHECKS:
            err = fn(rng)
            passed = err <= tol
            ok &= passed
            if verbose:
                status = "PASS" if passed else "FAIL"
                print(f"[{status}] {name}: worst rel err {err:.3e} (tol {tol:.0e})")
    return ok
