"""Command-line surface: solves, analyses, oracle checks and parameter sweeps.

Outputs are deterministic given (problem, options, seed).  Numeric values are
written with full double precision (shortest round-trip representation), so
re-reading a CSV/JSON reproduces the computed values bit-faithfully.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .analysis import (
    KRON_CAP,
    analyze_problem,
    assemble_jacobian,
    bound_c2,
    bound_cyclic,
    bound_gap_all,
    bound_liu,
    bound_naive,
    bound_rank_truncated,
    convergence_factor,
    cyclic_spectral_radii,
    gap_structure,
    jacobian_fd,
    max_column_relative_error,
    realified_jacobian_fd,
)
from .problems import (
    Problem,
    assemble_Lprime,
    build_illustrative,
    build_laplacian,
    load_problem,
)
from .scf import RateEstimationError, ScfOptions, estimate_rate, locate_fixed_point, scf_solve

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_NOT_CONVERGED = 2


def fmt(value) -> str:
    """17-significant-digit text form; empty string for missing values."""
    if value is None:
        return ""
    return format(float(value), ".17g")


def add_problem_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--family",
        choices=["illustrative", "laplacian-complex", "laplacian-real"],
        help="built-in problem family",
    )
    parser.add_argument("--file", help="problem JSON file (alternative to --family)")
    parser.add_argument("--eps", type=float, default=0.1, help="illustrative coupling")
    parser.add_argument("--d", type=float, default=0.16, help="illustrative gap parameter")
    parser.add_argument("--n", type=int, default=30, help="problem dimension")
    parser.add_argument("--p", type=int, default=15, help="occupation count")
    parser.add_argument("--alpha", type=float, default=40.0, help="Laplacian coupling")
    parser.add_argument("--h", type=float, default=None, help="grid spacing (default 1/(n+1))")


def add_solver_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tol", type=float, default=1e-12)
    parser.add_argument("--max-iter", type=int, default=500)
    parser.add_argument("--damping", type=float, default=1.0)
    parser.add_argument("--filter", choices=["step", "fermi"], default="step")
    parser.add_argument("--beta", type=float, default=None, help="Fermi smearing parameter")
    parser.add_argument("--seed", type=int, default=0)


def build_problem(args) -> Problem:
    if args.file:
        return load_problem(args.file)
    if args.family == "illustrative":
        return build_illustrative(args.eps, d=args.d)
    if args.family == "laplacian-complex":
        return build_laplacian(args.n, args.alpha, args.p, variant="complex", h=args.h)
    if args.family == "laplacian-real":
        return build_laplacian(args.n, args.alpha, args.p, variant="real", h=args.h)
    raise SystemExit("either --family or --file is required")


def build_opts(args) -> ScfOptions:
    return ScfOptions(
        tol=args.tol,
        max_iter=args.max_iter,
        damping=args.damping,
        filter=args.filter,
        beta=args.beta,
    )


def cmd_solve(args) -> int:
    problem = build_problem(args)
    bundle = scf_solve(problem, opts=build_opts(args))
    rows = []
    for k, rec in enumerate(bundle.history):
        err_to_fixed = (
            bundle.errors_to_fixed[k] if bundle.errors_to_fixed is not None else None
        )
        rows.append(
            [
                k + 1,
                fmt(rec.step_err),
                fmt(err_to_fixed),
                fmt(rec.lambda_p),
                fmt(rec.lambda_p1),
                fmt(rec.gap),
            ]
        )
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(
            ["iter", "step_err_fro", "err_to_fixed_point_fro", "lambda_p", "lambda_p1", "gap"]
        )
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    if not bundle.converged:
        print(
            f"not converged after {bundle.iterations} iterations "
            f"(last step {bundle.history[-1].step_err:.3e})",
            file=sys.stderr,
        )
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_analyze(args) -> int:
    problem = build_problem(args)
    report, _, _ = analyze_problem(
        problem, opts=build_opts(args), q_max=args.q_max, fd_check=args.fd_check
    )
    payload = report.to_dict()
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    else:
        json.dump(payload, sys.stdout, indent=2)
        print()
    if not report.converged:
        print("no fixed point located; partial report emitted", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def parse_outputs(spec: str):
    tokens = [t.strip() for t in spec.split(",") if t.strip()]
    known = {"c", "c2", "c2a", "c2b", "naive", "liu"}
    for token in tokens:
        base = token.split(":")[0]
        if base not in known and base not in ("gap", "tilde"):
            raise SystemExit(f"unknown output quantity {token!r}")
        if base in ("gap", "tilde"):
            try:
                int(token.split(":")[1])
            except (IndexError, ValueError):
                raise SystemExit(f"quantity {token!r} needs an integer suffix, e.g. gap:1")
    return tokens


def sweep_grid(args):
    if args.values:
        return [float(v) for v in args.values.split(",")]
    if args.grid:
        lo, hi, count = float(args.grid[0]), float(args.grid[1]), int(args.grid[2])
        if args.grid_scale == "log":
            return list(np.geomspace(lo, hi, count))
        return list(np.linspace(lo, hi, count))
    raise SystemExit("sweep needs --values or --grid LO HI COUNT")


def problem_at(args, axis: str, value: float) -> Problem:
    if args.family == "illustrative":
        if axis != "eps":
            raise SystemExit("illustrative family sweeps over --axis eps")
        return build_illustrative(value, d=args.d)
    variant = "complex" if args.family == "laplacian-complex" else "real"
    n, alpha = args.n, args.alpha
    if axis == "alpha":
        alpha = value
    elif axis == "n":
        n = int(round(value))
    else:
        raise SystemExit(f"axis {axis!r} not valid for family {args.family}")
    return build_laplacian(n, alpha, args.p, variant=variant, h=args.h)


def cmd_sweep(args) -> int:
    if not args.family:
        raise SystemExit("sweep requires --family")
    outputs = parse_outputs(args.outputs)
    grid = sweep_grid(args)
    rows = []
    for value in grid:
        problem = problem_at(args, args.axis, value)
        bundle, plain = locate_fixed_point(problem, build_opts(args))
        measured = None
        if plain is not None and plain.converged and plain.damping == 1.0:
            try:
                measured = estimate_rate(plain.errors_to_fixed).rate
            except RateEstimationError:
                measured = None
        converged = 1 if (plain is not None and plain.converged) else 0
        quantities = {}
        if bundle.converged:
            l_prime = assemble_Lprime(problem.op, problem.n)
            jb = assemble_jacobian(bundle, l_prime)
            gaps = gap_structure(bundle.lambdas, problem.p)
            cyc = None
            for token in outputs:
                base = token.split(":")[0]
                if token == "c":
                    quantities[token] = convergence_factor(jb.j_p)
                elif token == "c2":
                    quantities[token] = bound_c2(jb.j_p)
                elif base in ("c2a", "c2b"):
                    if cyc is None:
                        cyc = bound_cyclic(jb)
                    quantities[token] = cyc[0] if base == "c2a" else cyc[1]
                elif token == "naive":
                    quantities[token] = bound_naive(l_prime, gaps.delta(1))
                elif token == "liu":
                    quantities[token] = bound_liu(problem, gaps.delta(1))
                elif base == "gap":
                    q = int(token.split(":")[1])
                    quantities[token] = bound_gap_all(jb, gaps, q_max=min(q, gaps.count))[
                        min(q, gaps.count)
                    ]
                elif base == "tilde":
                    k = int(token.split(":")[1])
                    quantities[token] = bound_rank_truncated(jb, min(k, gaps.count), gaps)
        for token in outputs:
            rows.append(
                [
                    args.axis,
                    fmt(value),
                    token,
                    fmt(quantities.get(token)),
                    converged,
                    fmt(measured),
                ]
            )
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(
            ["axis_name", "axis_value", "quantity", "value", "converged", "measured_rate"]
        )
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_check(args) -> int:
    problem = build_problem(args)
    bundle, _ = locate_fixed_point(problem, build_opts(args))
    if not bundle.converged:
        print("FAIL: no fixed point located")
        return EXIT_NOT_CONVERGED
    l_prime = assemble_Lprime(problem.op, problem.n)
    jb = assemble_jacobian(bundle, l_prime)
    if args.corrupt_jacobian:
        jb.j_p = jb.j_p + 1e-3 * np.eye(jb.m)

    failures = 0

    fd = jacobian_fd(problem, bundle.p_star)
    fd_err = max_column_relative_error(jb.j_p, fd)
    ok = fd_err <= 1e-6
    failures += not ok
    print(f"{'PASS' if ok else 'FAIL'} finite-difference oracle: max column error {fd_err:.3e}")

    rng = np.random.default_rng(args.seed)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, size=problem.n))
    rotated = assemble_jacobian(
        type(bundle)(
            p_star=bundle.p_star,
            x=bundle.x * phases[None, :],
            lambdas=bundle.lambdas,
            history=[],
            converged=True,
            p=bundle.p,
        ),
        l_prime,
    )
    phase_err = float(np.abs(rotated.j_p - jb.j_p).max())
    ok = phase_err <= 1e-12 * max(1.0, float(np.abs(jb.j_p).max()))
    failures += not ok
    print(f"{'PASS' if ok else 'FAIL'} phase invariance: residual {phase_err:.3e}")

    if problem.n <= 20:
        radii = cyclic_spectral_radii(jb)
        spread = max(radii) - min(radii)
        ok = spread <= 1e-10 * max(1.0, max(radii))
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} cyclic-permutation spectral radii: spread {spread:.3e}")

    gaps = gap_structure(bundle.lambdas, problem.p)
    c = convergence_factor(jb.j_p)
    ladder = {
        "c2": bound_c2(jb.j_p),
        "c2a": bound_cyclic(jb)[0],
        "c2b": bound_cyclic(jb)[1],
    }
    gap_bounds = bound_gap_all(jb, gaps)
    violations = [name for name, val in ladder.items() if c > val + 1e-10]
    violations += [f"gap:{q}" for q, val in enumerate(gap_bounds) if c > val + 1e-10]
    ok = not violations
    failures += not ok
    print(
        f"{'PASS' if ok else 'FAIL'} bound chain: c={c:.6e}"
        + (f", violated {violations}" if violations else "")
    )

    j_real = realified_jacobian_fd(problem, bundle.p_star)
    rho_real = convergence_factor(j_real)
    rel = abs(rho_real - c) / max(c, 1e-300)
    print(
        f"INFO realified-coordinate spectral radius {rho_real:.6e} vs complex {c:.6e} "
        f"(relative difference {rel:.3e})"
    )

    return EXIT_OK if failures == 0 else EXIT_FAIL


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scfconv",
        description="SCF convergence-factor analysis: solves, Jacobians, bounds, sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run the SCF iteration, emit history CSV")
    add_problem_args(p_solve)
    add_solver_args(p_solve)
    p_solve.add_argument("--out", default=None, help="history CSV path (default stdout)")
    p_solve.set_defaults(func=cmd_solve)

    p_analyze = sub.add_parser("analyze", help="convergence factor and bound ladder JSON")
    add_problem_args(p_analyze)
    add_solver_args(p_analyze)
    p_analyze.add_argument("--q-max", type=int, default=None, help="cap on the gap-bound family")
    p_analyze.add_argument("--fd-check", action="store_true", help="include the FD oracle error")
    p_analyze.add_argument("--out", default=None, help="report JSON path (default stdout)")
    p_analyze.set_defaults(func=cmd_analyze)

    p_sweep = sub.add_parser("sweep", help="parameter sweep, long-format CSV")
    add_problem_args(p_sweep)
    add_solver_args(p_sweep)
    p_sweep.add_argument("--axis", choices=["eps", "alpha", "n"], required=True)
    p_sweep.add_argument("--grid", nargs=3, metavar=("LO", "HI", "COUNT"), default=None)
    p_sweep.add_argument("--grid-scale", choices=["linear", "log"], default="linear")
    p_sweep.add_argument("--values", default=None, help="explicit comma-separated grid")
    p_sweep.add_argument(
        "--outputs",
        default="c,c2,c2a,c2b,naive",
        help="comma list from c,c2,c2a,c2b,naive,liu,gap:Q,tilde:K",
    )
    p_sweep.add_argument("--q-max", type=int, default=None)
    p_sweep.add_argument("--out", default=None, help="sweep CSV path (default stdout)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_check = sub.add_parser("check", help="oracle and invariant checks")
    add_problem_args(p_check)
    add_solver_args(p_check)
    p_check.add_argument("--q-max", type=int, default=None)
    p_check.add_argument(
        "--corrupt-jacobian",
        action="store_true",
        help=argparse.SUPPRESS,  # negative-control hook for tests
    )
    p_check.add_argument("--out", default=None)
    p_check.set_defaults(func=cmd_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
