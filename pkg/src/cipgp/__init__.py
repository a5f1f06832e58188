"""Conditional inferential privacy for 1-D location traces under GP priors."""

from cipgp.errors import (
    AuditCapError,
    BracketError,
    CipError,
    ConvergenceError,
    DimensionError,
    SingularityError,
    TraceDomainError,
    TraceParseError,
)
from cipgp.trace_io import SanitizedTrace, Trace, read_sanitized, read_trace, write_sanitized, write_trace
from cipgp.kernel import CovarianceMatrix, KernelSpec, build_covariance, identity_covariance, rbf_kernel
from cipgp.gp import (
    ConditionalGaussian,
    EffectiveCovariance,
    Partition,
    condition,
    effective_covariance,
    power_iteration,
    top_eigenpair,
)
from cipgp.privacy import (
    DiscriminativePair,
    LossReport,
    PrivacyBudget,
    gaussian_renyi_divergence,
    gi_baseline_loss,
    loss_decomposition,
    loss_for_pair,
    worst_case_loss,
)
from cipgp.calibrate import (
    AuditResult,
    CalibrationResult,
    audit_point,
    calibrate_sigma,
    max_loss_over_class,
    rbf_builder,
)
from cipgp.mechanism import MechanismSpec, sample_noise_vector, sanitize
from cipgp.verify import McConfig, VerificationReport, mc_odds_gap, mc_release_divergence, mc_renyi_divergence

__version__ = "0.1.0"
