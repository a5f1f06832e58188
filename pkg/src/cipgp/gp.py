"""Gaussian conditioning on a secret subsequence and the effective covariance.

For a partition of the trace into secret points S and remaining points U,
the conditional prior is ``U | S = s ~ N(A s, C)`` with

    A = Sigma_us Sigma_ss^{-1},    C = Sigma_uu - A Sigma_su.

The effective covariance ``Sigma_eff = A^T (C + sigma_z2 I)^{-1} A`` measures
how far a change in the secret values moves the released U block.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from cipgp.errors import ConvergenceError, DimensionError, SingularityError
from cipgp.kernel import CovarianceMatrix

logger = logging.getLogger(__name__)
_jitter_seen: set = set()


def _warn_jitter(delta: float) -> None:
    # calibration refactorizes the same block many times; say it once per level
    if delta in _jitter_seen:
        logger.debug("covariance block needed jitter %.0e * sigma_x2", delta)
        return
    _jitter_seen.add(delta)
    logger.warning("covariance block needed jitter %.0e * sigma_x2 to factorize", delta)

JITTER_LADDER = tuple(10.0**k for k in range(-12, -5))  # 1e-12 ... 1e-6
MAX_DENSE_EIG = 512


class Partition:
    """Split of ``range(d)`` into sorted secret indices and their complement."""

    __slots__ = ("secret", "d")

    def __init__(self, secret: Sequence[int], d: int):
        idx = tuple(int(i) for i in secret)
        if d < 1:
            raise ValueError("d must be positive")
        if not idx:
            raise ValueError("the secret subsequence must contain at least one index")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"secret indices must be strictly increasing, got {list(idx)}")
        if idx[0] < 0 or idx[-1] >= d:
            raise ValueError(f"secret indices must lie in [0, {d - 1}]")
        object.__setattr__(self, "secret", idx)
        object.__setattr__(self, "d", int(d))

    @property
    def remainder(self) -> tuple:
        s = set(self.secret)
        return tuple(i for i in range(self.d) if i not in s)

    @property
    def n_secret(self) -> int:
        return len(self.secret)

    def __eq__(self, other):
        if not isinstance(other, Partition):
            return NotImplemented
        return self.secret == other.secret and self.d == other.d

    def __hash__(self):
        return hash((self.secret, self.d))

    def __repr__(self):
        return f"Partition(secret={list(self.secret)}, d={self.d})"

    @classmethod
    def every_other(cls, d: int, start: int = 0) -> "Partition":
        return cls(range(start, d, 2), d)

    @classmethod
    def first_half(cls, d: int) -> "Partition":
        return cls(range(max(1, d // 2)), d)


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    mean_map: np.ndarray  # |U| x |S|
    cond_cov: np.ndarray  # |U| x |U|
    partition: Partition
    jitter: float = 0.0

    def mean(self, s) -> np.ndarray:
        return self.mean_map @ np.asarray(s, dtype=float)


@dataclass(frozen=True, eq=False)
class EffectiveCovariance:
    sigma_eff: np.ndarray
    alpha_star: float
    v_star: np.ndarray
    sigma_z2: float
    partition: Partition
    jitter: float = 0.0


def _blocks(cov: CovarianceMatrix, part: Partition):
    if part.d != cov.d:
        raise DimensionError(f"partition is over {part.d} points but covariance is {cov.d}x{cov.d}")
    m = cov.matrix
    s, u = list(part.secret), list(part.remainder)
    return m[np.ix_(s, s)], m[np.ix_(u, s)], m[np.ix_(u, u)]


def jittered_cholesky(m: np.ndarray, scale: float):
    """Lower Cholesky factor of ``m``, escalating diagonal jitter ``delta * scale``.

    Returns ``(factor, delta)``. Raises SingularityError past the last rung.
    """
    try:
        return linalg.cho_factor(m, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    eye = np.eye(m.shape[0])
    for delta in JITTER_LADDER:
        try:
            factor = linalg.cho_factor(m + delta * scale * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        _warn_jitter(delta)
        return factor, delta
    raise SingularityError(
        f"matrix is not positive definite even with jitter {JITTER_LADDER[-1]:.0e} * sigma_x2"
    )


def condition(cov: CovarianceMatrix, part: Partition) -> ConditionalGaussian:
    """Conditional law of the remaining points given the secret ones."""
    if not part.remainder:
        raise DimensionError("conditioning needs a nonempty remainder U")
    s_ss, s_us, s_uu = _blocks(cov, part)
    factor, delta = jittered_cholesky(s_ss, cov.sigma_x2)
    # A^T = Sigma_ss^{-1} Sigma_su
    a = linalg.cho_solve(factor, s_us.T, check_finite=False).T
    c = s_uu - a @ s_us.T
    c = 0.5 * (c + c.T)
    return ConditionalGaussian(a, c, part, delta)


def effective_covariance(cov: CovarianceMatrix, part: Partition, sigma_z2: float) -> EffectiveCovariance:
    """``A^T (C + sigma_z2 I)^{-1} A`` with its top eigenpair.

    An empty remainder gives the zero matrix (only the per-point term of the
    loss survives).
    """
    if not sigma_z2 > 0:
        raise ValueError(f"sigma_z2 must be positive, got {sigma_z2}")
    k = part.n_secret
    if not part.remainder:
        zero = np.zeros((k, k))
        alpha, v = top_eigenpair(zero)
        return EffectiveCovariance(zero, alpha, v, float(sigma_z2), part)
    cg = condition(cov, part)
    noisy = cg.cond_cov + sigma_z2 * np.eye(cg.cond_cov.shape[0])
    chol = linalg.cholesky(noisy, lower=True, check_finite=False)
    b = linalg.solve_triangular(chol, cg.mean_map, lower=True, check_finite=False)
    sigma_eff = b.T @ b
    alpha, v = top_eigenpair(sigma_eff)
    return EffectiveCovariance(sigma_eff, alpha, v, float(sigma_z2), part, cg.jitter)


def _sign_fix(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(v) > 1e-12)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def top_eigenpair(m) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and unit eigenvector of a symmetric matrix.

    The eigenvector's first nonzero component is made positive.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, rtol=0.0, atol=1e-10):
        raise ValueError("matrix is not symmetric to within 1e-10")
    if m.shape[0] > MAX_DENSE_EIG:
        alpha, v = power_iteration(m)
        return alpha, _sign_fix(v)
    try:
        w, vecs = np.linalg.eigh(0.5 * (m + m.T))
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"symmetric eigensolver did not converge: {exc}") from None
    v = vecs[:, -1]
    return float(w[-1]), _sign_fix(v / np.linalg.norm(v))


def power_iteration(m, tol: float = 1e-13, max_iter: int = 100_000, seed: int = 0) -> tuple[float, np.ndarray]:
    """Top eigenpair of a symmetric PSD matrix by power iteration.

    Used as a cross-check on the dense solver and as a fallback for very
    large matrices. Convergence is slow when the top two eigenvalues are close.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    scale = max(float(np.max(np.abs(m))), 1.0)
    alpha = 0.0
    for _ in range(max_iter):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, _sign_fix(v)
        v_new = w / norm
        alpha = float(v_new @ m @ v_new)
        if np.linalg.norm(m @ v_new - alpha * v_new) <= tol * scale:
            return alpha, _sign_fix(v_new)
        v = v_new
    raise ConvergenceError(f"power iteration did not converge in {max_iter} steps")
