"""Covariance construction for the conditional prior class.

A :class:`KernelSpec` fixes one member of the class (variance and length
scale) together with the class bound ``l_max``. No jitter is added here;
regularization happens in :mod:`cipgp.gp` where matrices are factorized.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from cipgp.errors import TraceDomainError

KernelFn = Callable[[float, float], float]


@dataclass(frozen=True)
class KernelSpec:
    """One prior from the class: ``family`` with variance ``sigma_x2`` and length scale ``length_scale``.

    ``l_max`` bounds the class; it defaults to ``length_scale``. For the
    ``custom`` family, ``function`` must be a symmetric positive-definite
    kernel ``k(t_i, t_j)``; ``sigma_x2`` is then taken as its value at zero lag.
    """

    sigma_x2: float = 1.0
    length_scale: float = 1.0
    l_max: Optional[float] = None
    family: str = "rbf"
    function: Optional[KernelFn] = None

    def __post_init__(self):
        if self.l_max is None:
            object.__setattr__(self, "l_max", self.length_scale)
        if self.family not in ("rbf", "custom"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "custom" and self.function is None:
            raise ValueError("custom kernel family needs a kernel function")
        # subnormal variances lose all precision in the factorizations
        if not (np.isfinite(self.sigma_x2) and self.sigma_x2 >= np.finfo(float).tiny):
            raise ValueError(f"sigma_x2 must be a positive normal float, got {self.sigma_x2}")
        if not (np.isfinite(self.length_scale) and self.length_scale > 0):
            raise ValueError(f"length_scale must be positive, got {self.length_scale}")
        if not self.l_max >= self.length_scale:
            raise ValueError(f"l_max ({self.l_max}) must be >= length_scale ({self.length_scale})")

    def with_length_scale(self, length_scale: float) -> "KernelSpec":
        return replace(self, length_scale=length_scale, l_max=max(self.l_max, length_scale))


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    matrix: np.ndarray
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"covariance must be square, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.timestamps is not None:
            ts = np.array(self.timestamps, dtype=float)
            ts.setflags(write=False)
            object.__setattr__(self, "timestamps", ts)

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def sigma_x2(self) -> float:
        """Mean prior variance (equal to every diagonal entry for stationary kernels)."""
        return float(np.mean(np.diag(self.matrix)))

    def validate(self, rtol: float = 1e-8) -> None:
        """Check exact symmetry and PSD-ness to within ``-rtol * sigma_x2``."""
        m = self.matrix
        if not np.array_equal(m, m.T):
            raise ValueError("covariance is not exactly symmetric")
        lo = np.linalg.eigvalsh(m)[0]
        if lo < -rtol * self.sigma_x2:
            raise ValueError(f"covariance is not PSD (min eigenvalue {lo:.3e})")


def rbf_kernel(t_i: float, t_j: float, spec: KernelSpec) -> float:
    """Squared-exponential kernel ``sigma_x2 * exp(-(t_i - t_j)**2 / (2 l**2))``."""
    lag = float(t_i) - float(t_j)
    return spec.sigma_x2 * float(np.exp(-(lag * lag) / (2.0 * spec.length_scale**2)))


def _check_timestamps(timestamps) -> np.ndarray:
    t = np.asarray(timestamps, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise TraceDomainError("need at least 2 timestamps")
    if not np.all(np.isfinite(t)):
        raise TraceDomainError("timestamps must be finite")
    if np.any(np.diff(t) <= 0):
        raise TraceDomainError("timestamps must be strictly increasing (duplicates make the covariance singular)")
    return t


def build_covariance(timestamps: Sequence[float], spec: KernelSpec) -> CovarianceMatrix:
    """Kernel Gram matrix over ``timestamps``, symmetric by construction."""
    t = _check_timestamps(timestamps)
    d = t.size
    if spec.family == "rbf":
        lag = t[:, None] - t[None, :]
        m = spec.sigma_x2 * np.exp(-(lag * lag) / (2.0 * spec.length_scale**2))
    else:
        m = np.empty((d, d))
        for i in range(d):
            for j in range(i + 1):
                m[i, j] = spec.function(t[i], t[j])
    # fill from the lower triangle so m == m.T bitwise
    iu = np.triu_indices(d, 1)
    m[iu] = m.T[iu]
    if spec.family == "rbf":
        np.fill_diagonal(m, spec.sigma_x2)
    return CovarianceMatrix(m, t)


def identity_covariance(d: int, sigma_x2: float = 1.0) -> CovarianceMatrix:
    """Independent-points prior, the baseline that prior-agnostic mechanisms assume."""
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if not sigma_x2 > 0:
        raise ValueError("sigma_x2 must be positive")
    return CovarianceMatrix(sigma_x2 * np.eye(d))
