"""Shared fixtures and independent oracle helpers.

Oracles here deliberately avoid the library's own construction paths:
regressor matrices are built by direct double-loop indexing, dense
objectives by full data-length algebra.
"""

import numpy as np
import pytest
from threadpoolctl import threadpool_limits


@pytest.fixture(scope="session", autouse=True)
def _single_threaded_blas():
    # tap-sized problems sit far below the multithreading break-even point,
    # and this sandbox's threaded BLAS is erratic on small interleaved ops
    with threadpool_limits(limits=1):
        yield


def dense_phi(u, n):
    """Lagged-input matrix by direct indexing: row t is u(t) .. u(t-n+1)."""
    u = np.asarray(u, dtype=float)
    N = u.size
    phi = np.zeros((N, n))
    for t in range(1, N + 1):
        for j in range(1, n + 1):
            s = t - j + 1
            if s >= 1:
                phi[t - 1, j - 1] = u[s - 1]
    return phi


def forgetting_diag(gamma, k):
    """diag(gamma^(k-1), ..., gamma^0)."""
    return np.diag(gamma ** np.arange(k - 1, -1, -1, dtype=float))


def random_fir_data(rng, n_samples, n_taps, noise=0.3):
    """Input, outputs from a random decaying FIR, and the true taps."""
    u = rng.standard_normal(n_samples)
    h = rng.standard_normal(n_taps) * 0.6 ** np.arange(n_taps)
    y = dense_phi(u, n_taps) @ h + noise * rng.standard_normal(n_samples)
    return u, y, h
