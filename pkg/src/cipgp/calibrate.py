"""Noise calibration and worst-case search over priors and subsequences."""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from cipgp.errors import AuditCapError, BracketError, ConvergenceError
from cipgp.gp import Partition
from cipgp.kernel import CovarianceMatrix, KernelSpec, build_covariance
from cipgp.privacy import PrivacyBudget, worst_case_loss

CovBuilder = Callable[[float], CovarianceMatrix]

REL_TOL = 1e-6
MAX_BISECTION_STEPS = 200
MAX_BRACKET_DOUBLINGS = 200
DEFAULT_AUDIT_CAP = 16


class DominanceWarning(UserWarning):
    """A shorter length scale produced a larger worst-case loss than l_max."""


@dataclass
class CalibrationResult:
    sigma_z2: float
    achieved_loss: float
    iterations: int
    l_used: float
    audited_subsequences: Optional[int] = None
    worst_subsequence: Optional[Partition] = None

    def to_dict(self) -> dict:
        out = {
            "sigma_z2": self.sigma_z2,
            "achieved_loss": self.achieved_loss,
            "iterations": self.iterations,
            "l_used": self.l_used,
        }
        if self.audited_subsequences is not None:
            out["audited_subsequences"] = self.audited_subsequences
        if self.worst_subsequence is not None:
            out["worst_subsequence"] = list(self.worst_subsequence.secret)
        return out


class ClassMaximum(NamedTuple):
    l_worst: float
    loss: float


@dataclass
class AuditResult:
    max_loss: float
    worst_subsequence: Partition
    n_evaluated: int

    def __iter__(self):
        # unpacks as (max_loss, worst_subsequence)
        return iter((self.max_loss, self.worst_subsequence))


def rbf_builder(timestamps: Sequence[float], sigma_x2: float = 1.0) -> CovBuilder:
    """Map a length scale to the RBF covariance over fixed timestamps."""
    ts = np.asarray(timestamps, dtype=float)

    def build(length_scale: float) -> CovarianceMatrix:
        return build_covariance(ts, KernelSpec(sigma_x2=sigma_x2, length_scale=length_scale))

    return build


def gi_sigma_z2(n_secret: int, budget: PrivacyBudget) -> float:
    """Noise variance meeting the budget when the prior is independent (alpha* = 0)."""
    return budget.lam * n_secret * budget.r**2 / (2.0 * budget.epsilon)


def solve_sigma_z2(loss_fn: Callable[[float], float], epsilon: float, lower: float) -> tuple[float, float, int]:
    """Smallest ``s`` with ``loss_fn(s) <= epsilon`` for a strictly decreasing ``loss_fn``.

    ``lower`` must not be feasible-by-a-margin (``loss_fn(lower) >= epsilon``);
    the upper end of the bracket doubles from there. Returns
    ``(sigma_z2, loss, bisection_steps)`` where sigma_z2 is within 1e-6
    (relative) of the true root from above.
    """
    lo = lower
    loss_lo = loss_fn(lo)
    if loss_lo <= epsilon:
        return lo, loss_lo, 0
    hi = 2.0 * lo
    loss_hi = loss_fn(hi)
    doublings = 0
    while loss_hi > epsilon:
        lo, hi = hi, 2.0 * hi
        loss_hi = loss_fn(hi)
        doublings += 1
        if doublings > MAX_BRACKET_DOUBLINGS or not math.isfinite(hi):
            raise BracketError(f"no feasible noise variance found up to sigma_z2 = {hi:.3e}")
    steps = 0
    # relative width 1e-7 keeps both sigma_z2 and the loss gap inside 1e-6
    while hi - lo > 0.1 * REL_TOL * hi:
        if steps >= MAX_BISECTION_STEPS:
            raise ConvergenceError(f"bisection did not converge in {MAX_BISECTION_STEPS} steps")
        mid = 0.5 * (lo + hi)
        loss_mid = loss_fn(mid)
        if loss_mid <= epsilon:
            hi, loss_hi = mid, loss_mid
        else:
            lo = mid
        steps += 1
    return hi, loss_hi, steps


def calibrate_sigma(
    cov_builder: CovBuilder, part: Partition, budget: PrivacyBudget, l_max: float
) -> CalibrationResult:
    """Smallest noise variance whose worst-case loss at ``l_max`` is within budget.

    Only ``l_max`` is evaluated: the loss is taken to grow with the length
    scale, which :func:`max_loss_over_class` checks numerically.
    """
    cov = cov_builder(l_max)

    def loss(s2: float) -> float:
        return worst_case_loss(cov, part, s2, budget).loss_total

    s2, achieved, steps = solve_sigma_z2(loss, budget.epsilon, gi_sigma_z2(part.n_secret, budget))
    return CalibrationResult(sigma_z2=s2, achieved_loss=achieved, iterations=steps, l_used=float(l_max))


def loss_over_lengths(
    cov_builder: CovBuilder, part: Partition, sigma_z2: float, budget: PrivacyBudget, lengths: Iterable[float]
) -> list[tuple[float, float]]:
    return [(float(l), worst_case_loss(cov_builder(l), part, sigma_z2, budget).loss_total) for l in lengths]


def length_grid(l_max: float, size: int, l_min: Optional[float] = None) -> np.ndarray:
    """Geometric grid on ``[l_min, l_max]`` (default ``l_min = l_max / 100``) ending exactly at ``l_max``."""
    if size < 2:
        raise ValueError("l_grid_size must be >= 2")
    l_min = l_max / 100.0 if l_min is None else l_min
    grid = np.geomspace(l_min, l_max, size)
    grid[-1] = l_max
    return grid


def max_loss_over_class(
    cov_builder: CovBuilder,
    part: Partition,
    sigma_z2: float,
    budget: PrivacyBudget,
    l_max: float,
    l_grid_size: int = 16,
    l_grid: Optional[Sequence[float]] = None,
) -> ClassMaximum:
    """Largest worst-case loss over length scales in ``(0, l_max]``.

    Emits a :class:`DominanceWarning` when some interior length scale beats
    ``l_max`` by more than 1e-9 relative.
    """
    grid = length_grid(l_max, l_grid_size) if l_grid is None else np.asarray(sorted(set(l_grid) | {l_max}), float)
    if np.any(grid <= 0) or np.any(grid > l_max):
        raise ValueError("length-scale grid must lie in (0, l_max]")
    values = loss_over_lengths(cov_builder, part, sigma_z2, budget, grid)
    at_max = values[-1][1]
    for l, v in values[:-1]:
        if v > at_max * (1 + 1e-9):
            warnings.warn(
                f"loss at l={l:g} ({v:.12g}) exceeds loss at l_max={l_max:g} ({at_max:.12g})",
                DominanceWarning,
                stacklevel=2,
            )
    best = max(values, key=lambda lv: lv[1])
    return ClassMaximum(best[0], best[1])


def subsequences_containing(d: int, point_index: int):
    """All index sets containing ``point_index``, in lexicographic order."""
    others = [i for i in range(d) if i != point_index]
    subsets = []
    for k in range(len(others) + 1):
        for extra in itertools.combinations(others, k):
            subsets.append(tuple(sorted(extra + (point_index,))))
    subsets.sort()
    return subsets


def audit_point(
    cov: CovarianceMatrix,
    point_index: int,
    sigma_z2: float,
    budget: PrivacyBudget,
    cap: int = DEFAULT_AUDIT_CAP,
    workers: int = 1,
    order: Optional[Sequence[tuple]] = None,
) -> AuditResult:
    """Worst-case loss over every subsequence that contains ``point_index``.

    Enumerates all ``2**(d-1)`` such subsequences. Ties go to the
    lexicographically smallest index set, so the result does not depend on
    ``order`` or ``workers``.
    """
    d = cov.d
    if d > cap:
        raise AuditCapError(
            f"trace has {d} points; exhaustive audit is capped at {cap} (raise the cap to override)"
        )
    if not 0 <= point_index < d:
        raise ValueError(f"point_index must lie in [0, {d - 1}]")
    subsets = list(order) if order is not None else subsequences_containing(d, point_index)

    def evaluate(secret: tuple) -> float:
        return worst_case_loss(cov, Partition(secret, d), sigma_z2, budget).loss_total

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            losses = list(pool.map(evaluate, subsets))
    else:
        losses = [evaluate(s) for s in subsets]

    best_loss, best_set = -math.inf, None
    for secret, loss in zip(subsets, losses):
        if loss > best_loss or (loss == best_loss and secret < best_set):
            best_loss, best_set = loss, secret
    return AuditResult(best_loss, Partition(best_set, d), len(subsets))


def calibrate_audit(
    cov: CovarianceMatrix, point_index: int, budget: PrivacyBudget, cap: int = DEFAULT_AUDIT_CAP, l_used: float = float("nan")
) -> CalibrationResult:
    """Smallest noise variance keeping every subsequence through ``point_index`` within budget."""

    def loss(s2: float) -> float:
        return audit_point(cov, point_index, s2, budget, cap=cap).max_loss

    # the full trace is one of the audited subsequences
    s2, achieved, steps = solve_sigma_z2(loss, budget.epsilon, gi_sigma_z2(cov.d, budget))
    result = audit_point(cov, point_index, s2, budget, cap=cap)
    return CalibrationResult(
        sigma_z2=s2,
        achieved_loss=achieved,
        iterations=steps,
        l_used=l_used,
        audited_subsequences=result.n_evaluated,
        worst_subsequence=result.worst_subsequence,
    )
