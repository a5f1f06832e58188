"""Renyi privacy loss of the additive Gaussian mechanism.

For secret hypotheses ``s_i``, ``s_j`` with ``ds = s_i - s_j`` the loss is

    L(ds) = lam/2 * (ds^T Sigma_eff ds + |ds|^2 / sigma_z2)

The first term comes from the unreleased block U, the second is the sum of
independent per-point divergences of the secret block. Over the relaxed
discriminative set ``|ds|_2^2 <= |S| r^2`` the maximum is attained along the
top eigenvector of ``Sigma_eff``:

    L* = lam/2 * (1 + sigma_z2 * alpha*) / sigma_z2 * |S| r^2

All losses are in nats.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from cipgp.errors import DimensionError, SingularityError
from cipgp.gp import Partition, condition, effective_covariance
from cipgp.kernel import CovarianceMatrix, identity_covariance


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    r: float
    lam: float = 2.0

    def __post_init__(self):
        for name in ("epsilon", "r"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive, got {value}")
        r2 = self.r * self.r
        if not (math.isfinite(r2) and r2 > 0):
            raise ValueError(f"r = {self.r} is out of range: r^2 over- or underflows")
        if not (math.isfinite(self.lam) and self.lam > 1):
            raise ValueError(f"Renyi order lambda must be > 1, got {self.lam}")


@dataclass(frozen=True, eq=False)
class DiscriminativePair:
    delta_s: np.ndarray

    def __post_init__(self):
        ds = np.atleast_1d(np.asarray(self.delta_s, dtype=float))
        if ds.ndim != 1:
            raise DimensionError("delta_s must be a vector")
        object.__setattr__(self, "delta_s", ds)

    @classmethod
    def from_hypotheses(cls, s_i, s_j) -> "DiscriminativePair":
        return cls(np.asarray(s_i, dtype=float) - np.asarray(s_j, dtype=float))

    def in_relaxed_ball(self, r: float) -> bool:
        """Inside the L2 ball of squared radius ``|S| r^2`` circumscribing the L-inf box."""
        return float(self.delta_s @ self.delta_s) <= self.delta_s.size * r * r * (1 + 1e-12)

    def in_linf_ball(self, r: float) -> bool:
        return float(np.max(np.abs(self.delta_s))) <= r * (1 + 1e-12)


@dataclass
class LossReport:
    loss_total: float
    term_u: float
    term_s: float
    alpha_star: float
    sigma_z2: float
    lam: float
    n_secret: int
    r: Optional[float] = None
    delta_s: Optional[np.ndarray] = None
    linf_feasible: Optional[bool] = None
    maximizer_unique: Optional[bool] = None
    kernel: Optional[dict] = None
    per_point_terms: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("delta_s", "per_point_terms"):
            if out[key] is not None:
                out[key] = [float(v) for v in out[key]]
        out["lambda"] = out.pop("lam")
        return out


def _check_common(sigma_z2: float, lam: float) -> None:
    if not sigma_z2 > 0:
        raise ValueError(f"sigma_z2 must be positive, got {sigma_z2}")
    if not lam > 1:
        raise ValueError(f"Renyi order lambda must be > 1, got {lam}")


def gaussian_renyi_divergence(mu_a, mu_b, cov_shared, lam: float) -> float:
    """Order-``lam`` Renyi divergence between two Gaussians sharing a covariance.

    Equals ``lam/2 * (mu_a - mu_b)^T cov^{-1} (mu_a - mu_b)``. Scalars are
    accepted for the 1-D case.
    """
    if not lam > 1:
        raise ValueError(f"Renyi order lambda must be > 1, got {lam}")
    diff = np.atleast_1d(np.asarray(mu_a, dtype=float) - np.asarray(mu_b, dtype=float))
    cov = np.atleast_2d(np.asarray(cov_shared, dtype=float))
    if cov.shape != (diff.size, diff.size):
        raise DimensionError(f"covariance shape {cov.shape} does not match mean dimension {diff.size}")
    try:
        chol = linalg.cholesky(cov, lower=True, check_finite=False)
    except linalg.LinAlgError:
        raise SingularityError("shared covariance is not positive definite") from None
    w = linalg.solve_triangular(chol, diff, lower=True, check_finite=False)
    return 0.5 * lam * float(w @ w)


def loss_for_pair(
    cov: CovarianceMatrix, part: Partition, sigma_z2: float, pair, lam: float
) -> LossReport:
    """Exact loss for one discriminative pair ``ds``."""
    _check_common(sigma_z2, lam)
    ds = pair.delta_s if isinstance(pair, DiscriminativePair) else DiscriminativePair(pair).delta_s
    if ds.size != part.n_secret:
        raise DimensionError(f"delta_s has {ds.size} entries but |S| = {part.n_secret}")
    eff = effective_covariance(cov, part, sigma_z2)
    term_u = 0.5 * lam * float(ds @ eff.sigma_eff @ ds)
    per_point = 0.5 * lam * ds * ds / sigma_z2
    term_s = float(np.sum(per_point))
    return LossReport(
        loss_total=term_u + term_s,
        term_u=term_u,
        term_s=term_s,
        alpha_star=eff.alpha_star,
        sigma_z2=float(sigma_z2),
        lam=float(lam),
        n_secret=part.n_secret,
        delta_s=ds.copy(),
        per_point_terms=per_point,
    )


def loss_decomposition(
    cov: CovarianceMatrix, part: Partition, sigma_z2: float, s_i, s_j, lam: float
) -> tuple[float, float]:
    """Split the release divergence into the U-block and per-point S terms.

    The U term is the Renyi divergence between the noisy conditional laws
    ``N(A s_i, C + sigma_z2 I)`` and ``N(A s_j, C + sigma_z2 I)``; the S term
    is the sum of ``|S|`` scalar Gaussian divergences.
    """
    _check_common(sigma_z2, lam)
    s_i = np.atleast_1d(np.asarray(s_i, dtype=float))
    s_j = np.atleast_1d(np.asarray(s_j, dtype=float))
    if s_i.shape != (part.n_secret,) or s_j.shape != (part.n_secret,):
        raise DimensionError(f"hypotheses must have |S| = {part.n_secret} entries")
    if part.remainder:
        cg = condition(cov, part)
        noisy = cg.cond_cov + sigma_z2 * np.eye(cg.cond_cov.shape[0])
        term_zu = gaussian_renyi_divergence(cg.mean(s_i), cg.mean(s_j), noisy, lam)
    else:
        term_zu = 0.0
    term_zs = math.fsum(
        gaussian_renyi_divergence(a, b, sigma_z2, lam) for a, b in zip(s_i, s_j)
    )
    return term_zu, term_zs


def worst_case_loss(
    cov: CovarianceMatrix, part: Partition, sigma_z2: float, budget: PrivacyBudget
) -> LossReport:
    """Maximum loss over the relaxed L2 discriminative ball, with its maximizer."""
    _check_common(sigma_z2, budget.lam)
    eff = effective_covariance(cov, part, sigma_z2)
    k, r, lam = part.n_secret, budget.r, budget.lam
    radius2 = k * r * r
    term_u = 0.5 * lam * eff.alpha_star * radius2
    term_s = 0.5 * lam * radius2 / sigma_z2
    delta = eff.v_star * (r * math.sqrt(k))
    pair = DiscriminativePair(delta)
    notes = []
    unique = True
    if k > 1:
        w = np.linalg.eigvalsh(eff.sigma_eff)
        unique = bool(w[-1] - w[-2] > 1e-12 * max(abs(w[-1]), 1.0))
        if not unique:
            notes.append("top eigenvalue is repeated; the worst-case direction is not unique")
    report = LossReport(
        loss_total=0.5 * lam * (1.0 + sigma_z2 * eff.alpha_star) / sigma_z2 * radius2,
        term_u=term_u,
        term_s=term_s,
        alpha_star=eff.alpha_star,
        sigma_z2=float(sigma_z2),
        lam=float(lam),
        n_secret=k,
        r=float(r),
        delta_s=delta,
        linf_feasible=pair.in_linf_ball(r),
        maximizer_unique=unique,
        notes=notes,
    )
    if report.linf_feasible:
        report.notes.append("worst pair lies in the L-inf box; the bound is tight")
    return report


def gi_baseline_loss(d: int, part: Partition, sigma_z2: float, budget: PrivacyBudget, sigma_x2: float = 1.0) -> LossReport:
    """Worst-case loss under the independent-points prior (``lam/2 |S| r^2 / sigma_z2``)."""
    return worst_case_loss(identity_covariance(d, sigma_x2), part, sigma_z2, budget)
