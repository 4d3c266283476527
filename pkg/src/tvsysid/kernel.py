"""Prior covariance for FIR taps: construction, factorization, derivatives.

The covariance over taps ``k, j = 1..n`` is ``scale * decay**max(k, j)``,
which encodes exponentially decaying, positively correlated impulse
responses.  The factor object carries the Cholesky factor and the two
analytic derivative matrices needed by the hyper-parameter gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import NumericalError

#: Feasible box for the hyper-parameters.  The decay endpoints are pulled
#: strictly inside (0, 1) so the covariance stays factorizable; the
#: forgetting floor of 0.9 keeps the effective data window from collapsing.
DEFAULT_BOX_SCALE = (1e-8, 1e8)
DEFAULT_BOX_DECAY = (1e-4, 1.0 - 1e-4)
DEFAULT_BOX_FORGETTING = (0.9, 1.0)

_JITTER_RETRIES = 3


@dataclass(frozen=True)
class HyperParams:
    """Kernel hyper-parameters, optionally including a forgetting factor.

    ``forgetting`` is present only for estimators that treat the forgetting
    factor as one more quantity to estimate.
    """

    scale: float
    decay: float
    forgetting: float | None = None

    def as_vector(self) -> np.ndarray:
        if self.forgetting is None:
            return np.array([self.scale, self.decay])
        return np.array([self.scale, self.decay, self.forgetting])

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "HyperParams":
        if len(x) == 2:
            return cls(scale=float(x[0]), decay=float(x[1]))
        if len(x) == 3:
            return cls(scale=float(x[0]), decay=float(x[1]), forgetting=float(x[2]))
        raise ValueError(f"expected a 2- or 3-vector, got length {len(x)}")


@dataclass(frozen=True)
class HyperBox:
    """Componentwise bounds for the hyper-parameters."""

    scale: tuple[float, float] = DEFAULT_BOX_SCALE
    decay: tuple[float, float] = DEFAULT_BOX_DECAY
    forgetting: tuple[float, float] = DEFAULT_BOX_FORGETTING

    def lower(self, with_forgetting: bool) -> np.ndarray:
        lo = [self.scale[0], self.decay[0]]
        if with_forgetting:
            lo.append(self.forgetting[0])
        return np.array(lo)

    def upper(self, with_forgetting: bool) -> np.ndarray:
        hi = [self.scale[1], self.decay[1]]
        if with_forgetting:
            hi.append(self.forgetting[1])
        return np.array(hi)


@dataclass(frozen=True)
class KernelFactor:
    """Covariance matrix with Cholesky factor and parameter derivatives.

    ``cov = chol @ chol.T`` (lower-triangular ``chol``); ``d_scale`` and
    ``d_decay`` are the exact derivative matrices of ``cov`` in the two
    kernel parameters.  ``jitter`` records any diagonal boost that was
    needed to factorize.
    """

    params: HyperParams
    cov: np.ndarray
    chol: np.ndarray
    d_scale: np.ndarray
    d_decay: np.ndarray
    jitter: float = 0.0

    @property
    def n_taps(self) -> int:
        return self.cov.shape[0]


def tc_kernel(params: HyperParams, n: int) -> KernelFactor:
    """Build the decaying tap covariance and its Cholesky factor.

    Entry ``(k, j)`` is ``scale * decay**max(k, j)`` with 1-based tap
    indices (tap 1 multiplies the current input sample).  Derivatives:
    ``d cov / d scale = decay**max(k, j)`` and
    ``d cov / d decay = scale * max(k, j) * decay**(max(k, j) - 1)``.
    """
    if n < 1:
        raise ValueError(f"kernel size must be >= 1, got {n}")
    if not (np.isfinite(params.scale) and np.isfinite(params.decay)):
        raise ValueError(f"non-finite kernel parameters: {params}")
    if params.scale < 0.0:
        raise ValueError(f"scale must be nonnegative, got {params.scale}")
    if not 0.0 < params.decay < 1.0:
        raise ValueError(f"decay must lie in (0, 1), got {params.decay}")

    idx = np.arange(1, n + 1)
    m = np.maximum.outer(idx, idx).astype(float)
    pow_m1 = params.decay ** (m - 1.0)
    pow_m = params.decay * pow_m1
    cov = params.scale * pow_m
    d_decay = params.scale * m * pow_m1

    chol, jitter = _cholesky_with_jitter(cov)
    return KernelFactor(
        params=params, cov=cov, chol=chol, d_scale=pow_m, d_decay=d_decay, jitter=jitter
    )


def _cholesky_with_jitter(cov: np.ndarray) -> tuple[np.ndarray, float]:
    n = cov.shape[0]
    jitter = 0.0
    for attempt in range(1 + _JITTER_RETRIES):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            base = 1e-12 * max(np.trace(cov) / n, 1e-30)
            jitter = base * 10.0**attempt
    raise NumericalError(f"covariance not factorizable after jitter {jitter:.3e}")


def project_box(params: HyperParams, box: HyperBox) -> HyperParams:
    """Clamp each coordinate into its interval.

    For a diagonal step metric the metric projection onto a box separates
    per coordinate, so clamping solves it exactly.
    """
    out = replace(
        params,
        scale=float(np.clip(params.scale, *box.scale)),
        decay=float(np.clip(params.decay, *box.decay)),
    )
    if params.forgetting is not None:
        out = replace(out, forgetting=float(np.clip(params.forgetting, *box.forgetting)))
    return out
