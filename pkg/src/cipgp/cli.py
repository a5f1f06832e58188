"""Command-line front end.

Subcommands: calibrate, loss-curve, worst-pair, sanitize, audit, verify.
JSON reports carry ``schema_version``; CSV columns are fixed. Exit codes:
0 success, 2 usage or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from cipgp import calibrate as cal
from cipgp.errors import AuditCapError, BracketError, CipError, ConvergenceError, SingularityError
from cipgp.gp import Partition, condition
from cipgp.kernel import KernelSpec, build_covariance
from cipgp.mechanism import MechanismSpec, sanitize, stream_generator
from cipgp.privacy import PrivacyBudget, gi_baseline_loss, loss_decomposition, worst_case_loss
from cipgp.trace_io import Trace, fmt_float, dumps_report, read_trace, write_sanitized
from cipgp import verify as ver

SCHEMA_VERSION = 1
LOSS_CURVE_COLUMNS = ("l", "sigma_z2", "L_star", "L_star_GI", "ratio")
EXIT_USAGE = 2
EXIT_NUMERIC = 3

logger = logging.getLogger("cipgp")


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _logspace(text: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected LO,HI,N")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI,N, got {text!r}") from None
    if lo <= 0 or hi <= 0 or n < 1:
        raise argparse.ArgumentTypeError("LO and HI must be positive and N >= 1")
    return [float(v) for v in np.geomspace(lo, hi, n)]


def _add_trace_args(p):
    g = p.add_argument_group("trace")
    g.add_argument("--trace", help="trace file (CSV or JSON)")
    g.add_argument("--format", choices=("csv", "json"), help="trace format (default: from suffix)")
    g.add_argument("--d", type=int, help="synthetic trace length")
    g.add_argument("--spacing", type=float, default=1.0, help="synthetic timestamp spacing (default 1)")
    g.add_argument("--partition", help="secret indices 'i,j,...' or 'every-other' / 'first-half'")


def _add_kernel_args(p):
    g = p.add_argument_group("kernel")
    g.add_argument("--sigma-x2", type=float, default=1.0, help="prior variance (default 1)")
    g.add_argument("--l", dest="length_scale", type=float, help="length scale (default: --l-max)")
    g.add_argument("--l-max", type=float, help="maximum length scale of the prior class")


def _add_budget_args(p, epsilon=True):
    g = p.add_argument_group("budget")
    if epsilon:
        g.add_argument("--epsilon", type=float)
    g.add_argument("--r", type=float, help="privacy radius")
    g.add_argument("--lambda", dest="lam", type=float, help="Renyi order (> 1)")


def _add_output(p):
    p.add_argument("--output", "-o", help="output file (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cipgp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="smallest noise variance meeting a budget")
    _add_trace_args(p)
    _add_kernel_args(p)
    _add_budget_args(p)
    p.add_argument("--target", choices=("designated", "audit"), default="designated",
                   help="calibrate the given partition (default) or every subsequence through --point")
    p.add_argument("--point", type=int, help="point index for --target audit")
    p.add_argument("--cap", type=int, default=cal.DEFAULT_AUDIT_CAP)
    _add_output(p)

    p = sub.add_parser("loss-curve", help="worst-case loss over (l, sigma_z2) grids as CSV")
    _add_trace_args(p)
    _add_kernel_args(p)
    _add_budget_args(p, epsilon=False)
    p.add_argument("--l-grid", type=_float_list, help="comma-separated length scales")
    p.add_argument("--sigma-z2-grid", type=_float_list, help="comma-separated noise variances")
    p.add_argument("--sigma-z2-logspace", type=_logspace, help="LO,HI,N geometric noise grid")
    _add_output(p)

    p = sub.add_parser("worst-pair", help="worst-case discriminative pair as JSON")
    _add_trace_args(p)
    _add_kernel_args(p)
    _add_budget_args(p, epsilon=False)
    p.add_argument("--sigma-z2", type=float)
    _add_output(p)

    p = sub.add_parser("sanitize", help="add calibrated Gaussian noise to a trace")
    _add_trace_args(p)
    _add_kernel_args(p)
    _add_budget_args(p)
    p.add_argument("--sigma-z2", type=float, help="noise variance; omit to calibrate from the budget")
    p.add_argument("--seed", type=int)
    p.add_argument("--output-format", choices=("csv", "json"))
    _add_output(p)

    p = sub.add_parser("audit", help="worst loss over every subsequence containing a point")
    _add_trace_args(p)
    _add_kernel_args(p)
    _add_budget_args(p, epsilon=False)
    p.add_argument("--sigma-z2", type=float)
    p.add_argument("--point", type=int)
    p.add_argument("--cap", type=int, default=cal.DEFAULT_AUDIT_CAP, help="maximum trace length (default 16)")
    p.add_argument("--workers", type=int, default=1)
    _add_output(p)

    p = sub.add_parser("verify", help="Monte Carlo check of a closed form")
    p.add_argument("--mode", choices=("release-divergence", "renyi", "odds-gap", "decomposition"),
                   default="release-divergence")
    _add_trace_args(p)
    _add_kernel_args(p)
    p.add_argument("--r", type=float, default=0.5, help="hypotheses are drawn within this radius (default 0.5)")
    p.add_argument("--lambda", dest="lam", type=float, default=2.0)
    p.add_argument("--sigma-z2", type=float, default=1.0)
    p.add_argument("--s-i", type=_float_list, help="hypothesis i (default: drawn from --seed)")
    p.add_argument("--s-j", type=_float_list, help="hypothesis j (default: drawn from --seed)")
    p.add_argument("--n-samples", type=int, default=200_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--clip", type=float, help="cap on importance weights (biases downward)")
    p.add_argument("--direction", choices=("i", "j"), default="j", help="odds-gap sampling hypothesis")
    _add_output(p)
    return parser


_FLAG_ATTRS = {"--lambda": "lam", "--l": "length_scale"}


def _require(args, command: str, *names: str) -> None:
    for name in names:
        attr = _FLAG_ATTRS.get(name, name.lstrip("-").replace("-", "_"))
        if getattr(args, attr, None) is None:
            raise UsageError(f"{command} requires {name}")


def _trace(args) -> Trace:
    if args.trace:
        return read_trace(args.trace, args.format)
    if args.d is None:
        raise UsageError(f"{args.command} needs --trace or --d")
    if args.d < 2:
        raise UsageError("--d must be >= 2")
    if args.spacing <= 0:
        raise UsageError("--spacing must be positive")
    return Trace.synthetic(args.d, args.spacing)


def _partition(args, d: int) -> Partition:
    spec = args.partition
    if spec is None:
        raise UsageError(f"{args.command} requires --partition")
    if spec == "every-other":
        return Partition.every_other(d)
    if spec == "first-half":
        return Partition.first_half(d)
    try:
        idx = sorted(int(v) for v in spec.split(",") if v.strip())
        return Partition(idx, d)
    except ValueError as exc:
        raise UsageError(f"--partition: {exc}") from None


def _length(args) -> float:
    l = args.length_scale if args.length_scale is not None else args.l_max
    if l is None:
        raise UsageError(f"{args.command} requires --l or --l-max")
    return l


def _kernel(args, length_scale: float) -> KernelSpec:
    try:
        return KernelSpec(sigma_x2=args.sigma_x2, length_scale=length_scale)
    except ValueError as exc:
        raise UsageError(f"--l/--sigma-x2: {exc}") from None


def _budget(args, epsilon: Optional[float] = None) -> PrivacyBudget:
    eps = getattr(args, "epsilon", None) if epsilon is None else epsilon
    try:
        return PrivacyBudget(epsilon=1.0 if eps is None else eps, r=args.r, lam=args.lam)
    except ValueError as exc:
        raise UsageError(f"budget flags (--epsilon/--r/--lambda): {exc}") from None


def _positive(value: float, flag: str) -> float:
    if not value > 0:
        raise UsageError(f"{flag} must be positive")
    return value


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        with open(output, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _report(payload: dict, command: str) -> str:
    return dumps_report({"schema_version": SCHEMA_VERSION, "command": command, **payload})


def _calibrate(args, trace: Trace):
    _require(args, "calibrate", "--l-max", "--epsilon", "--r", "--lambda")
    budget = _budget(args)
    l_max = _positive(args.l_max, "--l-max")
    builder = cal.rbf_builder(trace.t, args.sigma_x2)
    if getattr(args, "target", "designated") == "audit":
        _require(args, "calibrate --target audit", "--point")
        return cal.calibrate_audit(builder(l_max), args.point, budget, cap=args.cap, l_used=l_max)
    return cal.calibrate_sigma(builder, _partition(args, trace.d), budget, l_max)


def cmd_calibrate(args) -> str:
    trace = _trace(args)
    result = _calibrate(args, trace)
    payload = result.to_dict()
    payload.update(target=args.target, epsilon=args.epsilon, r=args.r, **{"lambda": args.lam})
    return _report(payload, "calibrate")


def cmd_loss_curve(args) -> str:
    _require(args, "loss-curve", "--l-grid", "--r", "--lambda")
    grid = args.sigma_z2_grid or args.sigma_z2_logspace
    if not grid:
        raise UsageError("loss-curve requires --sigma-z2-grid or --sigma-z2-logspace")
    for s2 in grid:
        _positive(s2, "--sigma-z2-grid")
    trace = _trace(args)
    part = _partition(args, trace.d)
    budget = _budget(args)
    buf = io.StringIO()
    buf.write(",".join(LOSS_CURVE_COLUMNS) + "\n")
    for l in args.l_grid:
        cov = build_covariance(trace.t, _kernel(args, l))
        for s2 in grid:
            star = worst_case_loss(cov, part, s2, budget).loss_total
            gi = gi_baseline_loss(trace.d, part, s2, budget, args.sigma_x2).loss_total
            buf.write(",".join(fmt_float(v) for v in (l, s2, star, gi, star / gi)) + "\n")
    return buf.getvalue()


def cmd_worst_pair(args) -> str:
    _require(args, "worst-pair", "--sigma-z2", "--r", "--lambda")
    trace = _trace(args)
    part = _partition(args, trace.d)
    l = _length(args)
    cov = build_covariance(trace.t, _kernel(args, l))
    rep = worst_case_loss(cov, part, _positive(args.sigma_z2, "--sigma-z2"), _budget(args))
    payload = {
        "secret_indices": list(part.secret),
        "timestamps": [float(trace.t[i]) for i in part.secret],
        "l": l,
        "sigma_z2": args.sigma_z2,
        "r": args.r,
        "lambda": args.lam,
        "alpha_star": rep.alpha_star,
        "delta_s_star": [float(v) for v in rep.delta_s],
        "delta_s_star_norm": float(np.linalg.norm(rep.delta_s)),
        "linf_feasible": rep.linf_feasible,
        "maximizer_unique": rep.maximizer_unique,
        "L_star": rep.loss_total,
        "term_u": rep.term_u,
        "term_s": rep.term_s,
        "notes": rep.notes,
    }
    return _report(payload, "worst-pair")


def cmd_sanitize(args) -> str:
    _require(args, "sanitize", "--trace", "--seed", "--output")
    if not 0 <= args.seed < 2**64:
        raise UsageError("--seed must be a 64-bit unsigned integer")
    trace = _trace(args)
    budget = None
    if args.sigma_z2 is None:
        _require(args, "sanitize (without --sigma-z2)", "--epsilon", "--r", "--lambda", "--l-max")
        result = _calibrate(args, trace)
        sigma_z2 = result.sigma_z2
        budget = {"epsilon": args.epsilon, "r": args.r, "lambda": args.lam}
    else:
        sigma_z2 = _positive(args.sigma_z2, "--sigma-z2")
        if args.epsilon is not None:
            budget = {"epsilon": args.epsilon, "r": args.r, "lambda": args.lam}
    out = sanitize(trace, MechanismSpec(sigma_z2, args.seed), budget)
    write_sanitized(out, args.output, args.output_format)
    return _report({"output": args.output, "sigma_z2": sigma_z2, "seed": args.seed, "d": trace.d}, "sanitize")


def cmd_audit(args) -> str:
    _require(args, "audit", "--point", "--sigma-z2", "--r", "--lambda")
    trace = _trace(args)
    if trace.d > args.cap:
        raise UsageError(
            f"trace has {trace.d} points but exhaustive audit is capped at --cap {args.cap}; "
            "raise --cap to override (cost grows as 2^(d-1))"
        )
    cov = build_covariance(trace.t, _kernel(args, _length(args)))
    budget = _budget(args)
    res = cal.audit_point(cov, args.point, _positive(args.sigma_z2, "--sigma-z2"), budget,
                          cap=args.cap, workers=max(1, args.workers))
    payload = {
        "point": args.point,
        "d": trace.d,
        "subsequences_evaluated": res.n_evaluated,
        "max_loss": res.max_loss,
        "worst_subsequence": list(res.worst_subsequence.secret),
        "sigma_z2": args.sigma_z2,
        "r": args.r,
        "lambda": args.lam,
    }
    return _report(payload, "audit")


def _hypotheses(args, part: Partition):
    k = part.n_secret
    rng = stream_generator(args.seed, 1 << 20)
    s_j = np.asarray(args.s_j) if args.s_j else rng.uniform(-1.0, 1.0, k)
    s_i = np.asarray(args.s_i) if args.s_i else s_j + rng.uniform(-args.r, args.r, k)
    if s_i.size != k or s_j.size != k:
        raise UsageError(f"--s-i/--s-j need {k} values (|S|)")
    return s_i, s_j


def cmd_verify(args) -> str:
    _require(args, "verify", "--seed")
    if args.d is None and not args.trace:
        args.d = 4
    if args.partition is None:
        args.partition = "every-other"
    if args.length_scale is None and args.l_max is None:
        args.length_scale = 1.0
    trace = _trace(args)
    part = _partition(args, trace.d)
    cov = build_covariance(trace.t, _kernel(args, _length(args)))
    try:
        config = ver.McConfig(n_samples=args.n_samples, seed=args.seed, lam=args.lam, clip=args.clip)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sigma_z2 = _positive(args.sigma_z2, "--sigma-z2")
    s_i, s_j = _hypotheses(args, part)
    if args.mode == "release-divergence":
        rep = ver.mc_release_divergence(cov, part, sigma_z2, s_i, s_j, config)
    elif args.mode == "odds-gap":
        rep = ver.mc_odds_gap(cov, part, sigma_z2, s_i, s_j, config, direction=args.direction)
    elif args.mode == "renyi":
        # the U-block divergence on its own
        if not part.remainder:
            raise UsageError("--mode renyi needs a partition with a nonempty remainder")
        cg = condition(cov, part)
        noisy = cg.cond_cov + sigma_z2 * np.eye(cg.cond_cov.shape[0])
        rep = ver.mc_renyi_divergence(cg.mean(s_i), cg.mean(s_j), noisy, config)
    else:
        term_u, term_s = loss_decomposition(cov, part, sigma_z2, s_i, s_j, args.lam)
        rep = ver.mc_release_divergence(cov, part, sigma_z2, s_i, s_j, config)
        rep.details.update(decomposition_total=term_u + term_s)
    payload = rep.to_dict()
    payload.update(mode=args.mode, s_i=[float(v) for v in s_i], s_j=[float(v) for v in s_j],
                   secret_indices=list(part.secret), sigma_z2=sigma_z2, seed=args.seed)
    return _report(payload, "verify")


COMMANDS = {
    "calibrate": cmd_calibrate,
    "loss-curve": cmd_loss_curve,
    "worst-pair": cmd_worst_pair,
    "sanitize": cmd_sanitize,
    "audit": cmd_audit,
    "verify": cmd_verify,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        text = COMMANDS[args.command](args)
    except (UsageError, AuditCapError) as exc:
        print(f"cipgp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularityError, ConvergenceError, BracketError, ArithmeticError) as exc:
        print(f"cipgp {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CipError, ValueError, OSError) as exc:
        print(f"cipgp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command == "sanitize" and args.output:
        sys.stdout.write(text)
    else:
        _emit(text, args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
