"""Command-line front end.

Subcommands: ``simulate``, ``pullback``, ``check-dirac``, ``list-systems``.
Long-name flags only; vectors are comma-separated reals.  Exit codes:
0 success, 1 usage error, 2 solver or constraint failure.  Every report
echoes the seed that produced it, so property runs are replayable.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .catalog import DEFAULT_PARAMS, builtin, builtin_names
from .dirac import (
    LinearDiracData,
    bar_dirac_data,
    check_self_orthogonal,
    hat_dirac_data,
)
from .dynamics import (
    InitialData,
    SolverConfig,
    integrate_nonholonomic,
    integrate_vakonomic,
)
from .errors import (
    AlgebraicSolveError,
    ConstraintViolationError,
    RankDeficiencyError,
    VakdiracError,
)
from .reports import (
    build_run_report,
    load_run_report_schema,
    validate_against_schema,
    write_json,
    write_trajectory_csv,
)
from .submanifolds import pullback_matrix, random_chart
from .systems import load_system_file

__all__ = ["main", "RunManifest"]


class _ArgumentParser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


@dataclass
class RunManifest:
    """Everything a `simulate` run needs, resolved from the CLI flags."""

    system: Optional[str]
    file: Optional[str]
    mode: str
    init: InitialData
    config: SolverConfig
    csv_path: Optional[str] = None
    report_path: Optional[str] = None
    aggregation: str = "max"
    verbosity: int = 1
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)


def _parse_vector(text, what, parser):
    try:
        return np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError:
        parser.error(f"{what}: expected comma-separated reals, got {text!r}")


def _parse_params(items, parser):
    params = {}
    for item in items or []:
        if "=" not in item:
            parser.error(f"--param expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            parser.error(f"--param {key}: bad number {value!r}")
    return params


def _load_spec(args, parser):
    if bool(args.system) == bool(args.file):
        parser.error("exactly one of --system or --file is required")
    if args.system:
        try:
            return builtin(args.system, **_parse_params(getattr(args, "param", None), parser))
        except KeyError as exc:
            parser.error(str(exc))
    try:
        return load_system_file(args.file)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot load system file: {exc}")


def _add_system_flags(sp):
    sp.add_argument("--system", help="built-in system name")
    sp.add_argument("--file", help="system definition file")
    sp.add_argument("--param", action="append", metavar="KEY=VALUE",
                    help="override a built-in system parameter (repeatable)")


def build_parser():
    parser = _ArgumentParser(prog="vakdirac",
                             description="vakonomic / nonholonomic dynamics "
                                         "on Dirac structures")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="integrate a system",
                         parents=[], add_help=True)
    _add_system_flags(sim)
    sim.add_argument("--mode", choices=["vakonomic", "nonholonomic"],
                     default="vakonomic")
    sim.add_argument("--q0", required=True, help="initial configuration")
    sim.add_argument("--v0", required=True, help="initial velocity")
    sim.add_argument("--lambda0", help="multiplier seed (default zeros)")
    sim.add_argument("--dt", type=float, default=1e-3)
    sim.add_argument("--t-end", type=float, default=10.0)
    sim.add_argument("--newton-tol", type=float, default=1e-12)
    sim.add_argument("--newton-max-iter", type=int, default=50)
    sim.add_argument("--integrator", choices=["rk4", "midpoint-implicit"],
                     default="rk4")
    sim.add_argument("--backend", choices=["auto", "compiled", "python"],
                     default="auto")
    sim.add_argument("--csv", help="trajectory CSV output path")
    sim.add_argument("--report", help="run-report JSON output path")
    sim.add_argument("--agg", choices=["max", "sum"], default="max")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--quiet", action="store_true")

    pb = sub.add_parser("pullback", help="Lagrangian-submanifold dichotomy "
                                         "report")
    _add_system_flags(pb)
    pb.add_argument("--charts", type=int, default=100)
    pb.add_argument("--lambda", dest="lam", help="fixed multiplier vector")
    pb.add_argument("--lambda-norm", type=float, default=1.0,
                    help="norm of the random multipliers when --lambda is "
                         "not given")
    pb.add_argument("--fd-step", type=float, default=None)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--report", help="JSON output path")
    pb.add_argument("--agg", choices=["max", "sum"], default="max")

    cd = sub.add_parser("check-dirac", help="verify D equals its orthogonal "
                                            "on random linear data")
    cd.add_argument("--dim", type=int, default=6)
    cd.add_argument("--seeds", type=int, default=100)
    cd.add_argument("--negative-control", action="store_true",
                    help="also run a symmetric (non-antisymmetric) form and "
                         "report its expected failure")
    cd.add_argument("--system", default="particle",
                    help="built-in whose lifted graph structures are checked")
    cd.add_argument("--report", help="JSON output path")

    sub.add_parser("list-systems", help="list built-in systems")
    return parser


def run_simulate(manifest: RunManifest, parser=None) -> int:
    try:
        if manifest.system:
            spec = builtin(manifest.system, **manifest.params)
        else:
            spec = load_system_file(manifest.file)
        if manifest.mode == "vakonomic":
            traj = integrate_vakonomic(spec, manifest.init, manifest.config)
        else:
            traj = integrate_nonholonomic(spec, manifest.init, manifest.config)
    except (ConstraintViolationError, AlgebraicSolveError) as exc:
        print(f"vakdirac: {exc}", file=sys.stderr)
        return 2
    except (VakdiracError, KeyError, OSError, ValueError) as exc:
        print(f"vakdirac: {exc}", file=sys.stderr)
        return 2

    report = build_run_report(traj, cfg=manifest.config, seed=manifest.seed,
                              initial={
                                  "q0": manifest.init.q0,
                                  "v0": manifest.init.v0,
                                  "lambda0": manifest.init.lam_or_zeros(spec.m),
                              })
    problems = validate_against_schema(report, load_run_report_schema())
    if problems:
        print("vakdirac: run report failed schema self-check: "
              + "; ".join(problems), file=sys.stderr)
        return 2
    if manifest.csv_path:
        write_trajectory_csv(traj, manifest.csv_path)
    if manifest.report_path:
        write_json(report, manifest.report_path)
    if manifest.verbosity:
        cons = report["conservation"]
        print(f"system {spec.name} ({manifest.mode}), {report['steps']} steps, "
              f"backend {traj.backend}")
        print(f"energy drift {cons['energy_drift']:.3e}; constraint max "
              f"{report['constraint_max_residual']:.3e}")
        for row in cons["momenta"]:
            if row["cyclic"]:
                print(f"cyclic {row['coordinate']}: p drift "
                      f"{row['max_drift']:.3e}")
        if report["equivalence"] is not None:
            print(f"formulation residual max "
                  f"{report['equivalence']['max_residual']:.3e}, pairwise "
                  f"difference {report['equivalence']['max_pairwise_difference']:.3e}")
        for w in traj.warnings:
            print(f"warning: {w}")
    return 0


def _cmd_simulate(args, parser) -> int:
    if bool(args.system) == bool(args.file):
        parser.error("exactly one of --system or --file is required")
    if args.system and args.system not in builtin_names():
        parser.error(f"unknown built-in system {args.system!r}; "
                     f"available: {', '.join(builtin_names())}")
    q0 = _parse_vector(args.q0, "--q0", parser)
    v0 = _parse_vector(args.v0, "--v0", parser)
    lam0 = (_parse_vector(args.lambda0, "--lambda0", parser)
            if args.lambda0 else None)
    try:
        init = InitialData(q0=q0, v0=v0, lam0=lam0, mode=args.mode)
        config = SolverConfig(dt=args.dt, t_end=args.t_end,
                              newton_tol=args.newton_tol,
                              newton_max_iter=args.newton_max_iter,
                              integrator=args.integrator,
                              backend=args.backend)
    except (ValueError, VakdiracError) as exc:
        parser.error(str(exc))
    manifest = RunManifest(
        system=args.system, file=args.file, mode=args.mode, init=init,
        config=config, csv_path=args.csv, report_path=args.report,
        aggregation=args.agg, verbosity=0 if args.quiet else 1,
        seed=args.seed, params=_parse_params(args.param, parser),
    )
    return run_simulate(manifest, parser)


def run_pullback(spec, charts, lam, lam_norm, fd_step, seed, agg,
                 report_path=None) -> tuple[int, dict]:
    rng = np.random.default_rng(seed)
    tol_certified = 1e-6
    results = {}
    for kind in ("vakonomic", "nonholonomic"):
        if kind == "nonholonomic" and spec.mu is None:
            results[kind] = {"skipped": "no linear constraint one-forms"}
            continue
        used = 0
        skipped = 0
        max_state = 0.0
        max_full = 0.0
        agg_state = 0.0
        per_chart = []
        for _ in range(charts):
            chart = random_chart(spec, kind, rng, lam=lam, lam_norm=lam_norm)
            try:
                rep = pullback_matrix(spec, chart, fd_step)
            except RankDeficiencyError:
                skipped += 1
                continue
            used += 1
            per_chart.append(rep.max_abs_state)
            max_state = max(max_state, rep.max_abs_state)
            max_full = max(max_full, rep.max_abs_full)
            agg_state += rep.max_abs_state
        summary = {
            "charts_used": used,
            "charts_skipped_rank_deficient": skipped,
            "max_abs_state_block": max_state,
            "max_abs_full_basis": max_full,
            "sum_abs_state_block": agg_state,
        }
        value = max_state if agg == "max" else agg_state
        if value <= 10 * tol_certified:
            summary["verdict"] = (f"{kind}: Lagrangian within tolerance "
                                  f"(max |i*Omega| = {max_state:.3e})")
        else:
            summary["verdict"] = (f"{kind}: NOT Lagrangian "
                                  f"(max |i*Omega| = {max_state:.3e})")
        results[kind] = summary
    report = {
        "schema": "vakdirac-pullback-report/1",
        "system": {"name": spec.name, "n": spec.n, "m": spec.m},
        "charts": charts,
        "seed": seed,
        "fd_step": fd_step if fd_step is not None else "1e-5 * chart scale",
        "lambda": (list(np.asarray(lam, dtype=float)) if lam is not None
                   else f"random with norm {lam_norm}"),
        "aggregation": agg,
        "certified_tolerance": tol_certified,
        "kinds": results,
    }
    for kind in ("vakonomic", "nonholonomic"):
        if "verdict" in results.get(kind, {}):
            print(results[kind]["verdict"])
    if report_path:
        write_json(report, report_path)
    return 0, report


def _cmd_pullback(args, parser) -> int:
    spec = _load_spec(args, parser)
    lam = _parse_vector(args.lam, "--lambda", parser) if args.lam else None
    if lam is not None and lam.shape[0] != spec.m:
        parser.error(f"--lambda needs {spec.m} components")
    code, _ = run_pullback(spec, args.charts, lam, args.lambda_norm,
                           args.fd_step, args.seed, args.agg, args.report)
    return code


def run_check_dirac(dim, seeds, negative_control, system_name,
                    report_path=None) -> tuple[int, dict]:
    worst = 0.0
    dims_ok = True
    for s in range(seeds):
        srng = np.random.default_rng(s)
        A = srng.standard_normal((dim, dim))
        Omega = A - A.T
        k = int(srng.integers(0, dim + 1))
        Delta = np.eye(dim) if k == dim else _full_rank_matrix(srng, dim, k)
        rep = check_self_orthogonal(LinearDiracData(dim=dim, Omega=Omega,
                                                    Delta=Delta))
        worst = max(worst, rep.max_pairing)
        dims_ok = dims_ok and rep.dim == dim
    spec = builtin(system_name)
    bar_rep = check_self_orthogonal(bar_dirac_data(spec.n, spec.m))
    hat_rep = check_self_orthogonal(hat_dirac_data(spec.n, spec.m))
    report = {
        "schema": "vakdirac-check-dirac-report/1",
        "dim": dim,
        "seeds": seeds,
        "random_instances": {"max_pairing": worst, "dims_full": dims_ok},
        "graph_structures": {
            "system": system_name,
            "bar": {"max_pairing": bar_rep.max_pairing, "dim": bar_rep.dim,
                    "expected_dim": bar_rep.expected_dim},
            "hat": {"max_pairing": hat_rep.max_pairing, "dim": hat_rep.dim,
                    "expected_dim": hat_rep.expected_dim},
        },
    }
    passed = (worst <= 1e-12 and dims_ok and bar_rep.passed and hat_rep.passed)
    report["passed"] = bool(passed)
    print(f"random instances: max pairing {worst:.3e}, dims "
          f"{'all full' if dims_ok else 'DEFICIENT'}")
    print(f"graph structures ({system_name}): bar pairing "
          f"{bar_rep.max_pairing:.3e}, hat pairing {hat_rep.max_pairing:.3e}")
    if negative_control:
        # wire the graph of a symmetric form through the same pairing:
        # the symmetric pairing cannot vanish on it
        srng = np.random.default_rng(99)
        A = srng.standard_normal((dim, dim))
        sym = A + A.T
        pairs = [(np.eye(dim)[:, j], sym @ np.eye(dim)[:, j]) for j in range(dim)]
        worst_neg = 0.0
        for i in range(dim):
            for j in range(dim):
                vi, ai = pairs[i]
                vj, aj = pairs[j]
                worst_neg = max(worst_neg, abs(ai @ vj + aj @ vi))
        report["negative_control"] = {
            "max_pairing": worst_neg,
            "failed_as_expected": bool(worst_neg > 1e-6),
        }
        print(f"negative control (symmetric form): max pairing "
              f"{worst_neg:.3e} -> {'fails as expected' if worst_neg > 1e-6 else 'UNEXPECTEDLY PASSES'}")
    print("check-dirac:", "PASS" if passed else "FAIL")
    if report_path:
        write_json(report, report_path)
    return (0 if passed else 2), report


def _full_rank_matrix(rng, d, k):
    while True:
        M = rng.standard_normal((d, k)) if k else np.zeros((d, 0))
        if k == 0:
            return M
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] > 1e-8 * s[0]:
            return M


def _cmd_check_dirac(args, parser) -> int:
    if args.system not in builtin_names():
        parser.error(f"unknown built-in system {args.system!r}")
    code, _ = run_check_dirac(args.dim, args.seeds, args.negative_control,
                              args.system, args.report)
    return code


def _cmd_list_systems(args, parser) -> int:
    for name in builtin_names():
        spec = builtin(name)
        params = ", ".join(f"{k}={v:g}" for k, v in
                           sorted(DEFAULT_PARAMS[name].items())) or "none"
        print(f"{name}: n={spec.n}, m={spec.m}, params: {params}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a subcommand is required "
                         "(simulate, pullback, check-dirac, list-systems)")
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args, parser)
        if args.command == "pullback":
            return _cmd_pullback(args, parser)
        if args.command == "check-dirac":
            return _cmd_check_dirac(args, parser)
        if args.command == "list-systems":
            return _cmd_list_systems(args, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    return 0


if __name__ == "__main__":
    sys.exit(main())
