"""Command line interface: ``esfem {mesh,solve,convergence,check}``.

Exit codes: 0 ok, 1 I/O error, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from .assembly import EsfemSystem, discrete_norm_A, discrete_norm_M
from .geometry import SurfaceSpec, level_set, paper_problem, zero_problem
from .mesh import MAX_LEVEL, EvolvingMesh, admissibility_ratio, icosphere, mesh_size_h, write_mesh
from .timestepping import (
    INTEGRATOR_GRAMMAR,
    IntegrationError,
    NonlinearSolveConfig,
    bdf_coefficients,
    bdf_root_moduli,
    check_algebraic_stability,
    check_zero_stability,
    integrate,
    is_stiffly_accurate,
    parse_integrator,
    radau_iia,
)

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

SOLVE_SCHEMA = """solve config (JSON object), all keys optional:
  level            icosphere refinement level, 0..8          (default 2)
  integrator       be | bdf<k> | libdf<k> | radau<s>          (default "be")
  tau              uniform step size dividing T               (default 0.00625)
  T                final time                                 (default 1.0)
  start            BDF starting values: "radau2" | "exact"    (default "radau2")
  lift_quadrature  evaluate f at closest points on Gamma(t)   (default false)
  zero_data        zero forcing and zero initial value        (default false)
  nonlinear        {"strategy": "newton"|"picard", "rel_tol": 1e-10, "max_iter": 50}
  report           output file name inside --out-dir          (default "solve.json")"""

CONVERGENCE_SCHEMA = """convergence config (JSON object), all keys optional:
  levels               list of icosphere levels               (default [1, 2, 3, 4])
  tau0                 step size on the first row             (default 0.1)
  tau_refinement       step divisor per row                   (default 4)
  integrator           be | bdf<k> | libdf<k> | radau<s>      (default "be")
  T                    final time                             (default 1.0)
  lift_quadrature      evaluate f at closest points           (default false)
  fixed_level          fix the mesh and refine tau only       (default null)
  n_tau                number of step sizes with fixed_level  (default 3)
  reference_factor     reference step = tau0 / factor         (default 256)
  reference_integrator integrator of the reference run        (default "bdf3")
  start                BDF starting values                    (default "radau2")
  nonlinear            {"strategy", "rel_tol", "max_iter"}
  zero_data            zero forcing and initial value         (default false)
  elliptic             run the elliptic test instead          (default false)
  elliptic_t           frozen time of the elliptic test       (default 0.5)"""


class UsageError(Exception):
    pass


def _read_json(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError:
        raise
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def cmd_mesh(args) -> int:
    if not 0 <= args.level <= MAX_LEVEL:
        raise UsageError(f"--level must be in the range 0..{MAX_LEVEL}, got {args.level}")
    emesh = EvolvingMesh(icosphere(args.level), SurfaceSpec())
    mesh = emesh.at(args.t)
    out = Path(args.out_dir) / args.out if args.out_dir else Path(args.out)
    write_mesh(mesh, out)
    if not args.quiet:
        off = np.abs(level_set(emesh.spec, mesh.vertices, args.t)).max()
        print(f"V={mesh.n_vertices} F={mesh.n_triangles} h={mesh_size_h(mesh):.6g} "
              f"admissibility={admissibility_ratio(mesh):.6g} max|phi|={off:.2e} -> {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = _read_json(args.config)
    known = {"level", "integrator", "tau", "T", "start", "lift_quadrature", "zero_data", "nonlinear", "report"}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown solve config keys: {sorted(unknown)}")
    level = int(cfg.get("level", 2))
    if not 0 <= level <= MAX_LEVEL:
        raise UsageError(f"level must be in the range 0..{MAX_LEVEL}")
    try:
        spec = parse_integrator(cfg.get("integrator", "be"))
        nonlinear = NonlinearSolveConfig(**cfg.get("nonlinear", {}))
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    tau, T = float(cfg.get("tau", 0.00625)), float(cfg.get("T", 1.0))
    problem = zero_problem() if cfg.get("zero_data", False) else paper_problem()
    emesh = EvolvingMesh(icosphere(level), problem.spec)
    system = EsfemSystem(emesh, problem, lift_quadrature=bool(cfg.get("lift_quadrature", False)))
    acc = ex.ErrorAccumulator(emesh, problem.exact)
    report = {"config": {**cfg, "level": level, "integrator": spec.name, "tau": tau, "T": T},
              "dof": emesh.n_vertices}
    out = Path(args.out_dir or ".") / cfg.get("report", "solve.json")
    t0 = time.perf_counter()
    try:
        traj = integrate(system, spec, tau, T, system.interpolate(problem.exact, 0.0), nonlinear,
                         start=cfg.get("start", "radau2"), save_every=max(1, int(round(T / tau))),
                         observer=acc)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except IntegrationError as exc:
        report.update(status="failed", failed_step=exc.step, failed_time=exc.time, message=str(exc))
        out.write_text(json.dumps(report, indent=2) + "\n")
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    e = traj.final() - system.interpolate(problem.exact, T)
    report.update(
        status="ok",
        final_time=T,
        err_final_l2=discrete_norm_M(system.mass(T), e),
        err_final_h1=discrete_norm_A(system.stiffness(T), e),
        err_linf_l2=acc.linf_l2,
        err_l2_h1=acc.l2_h1,
    )
    out.write_text(json.dumps(report, indent=2) + "\n")
    if not args.quiet:
        print(f"{spec.name} level {level} tau {tau:g}: |e(T)|_M = {report['err_final_l2']:.6e}, "
              f"Linf(L2) = {acc.linf_l2:.6e}, L2(H1) = {acc.l2_h1:.6e} "
              f"({time.perf_counter() - t0:.1f}s) -> {out}")
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = _read_json(args.config)
    for key, val in (("integrator", args.integrator), ("tau_refinement", args.tau_refinement),
                     ("fixed_level", args.fixed_level), ("tau0", args.tau0), ("levels", args.levels),
                     ("n_tau", args.n_tau)):
        if val is not None:
            cfg[key] = val
    if args.lift_quadrature:
        cfg["lift_quadrature"] = True
    elliptic = bool(cfg.pop("elliptic", False) or args.elliptic)
    elliptic_t = float(cfg.pop("elliptic_t", 0.5))
    try:
        config = ex.ConvergenceConfig.from_dict(cfg)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    for lvl in list(config.levels) + ([config.fixed_level] if config.fixed_level is not None else []):
        if not 0 <= lvl <= MAX_LEVEL:
            raise UsageError(f"levels must be in the range 0..{MAX_LEVEL}")

    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    if elliptic:
        table = ex.elliptic_convergence_test(config.levels, elliptic_t)
        stem, order = "elliptic", 2.0
    else:
        table = ex.run_convergence_study(config, threads=args.threads)
        stem = "convergence"
        spec = parse_integrator(config.integrator)
        if config.fixed_level is None:
            order = 1.0
        else:
            order = float(spec.order if spec.kind != "radau" else 2 * spec.order - 1)
    ex.write_csv(table, out_dir / f"{stem}.csv")
    ex.emit_plot_script(table, out_dir / f"{stem}.gp", order=order)
    ex.write_json_report(table, {**config.to_dict(), "elliptic": elliptic}, out_dir / f"{stem}.json")
    if not args.quiet:
        print(table.format())
    return EXIT_NUMERICAL if table.failure else EXIT_OK


def cmd_check(args) -> int:
    try:
        spec = parse_integrator(args.integrator)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ok = True
    if spec.kind == "radau":
        tab = radau_iia(spec.order)
        stable, lam = check_algebraic_stability(tab)
        stiff = is_stiffly_accurate(tab)
        inv = abs(np.linalg.det(tab.A)) > 1e-14
        print(f"{tab.name}: s={tab.s} order={tab.order} stage order={tab.stage_order}")
        print("A =\n" + np.array2string(tab.A, precision=17))
        print("b = " + np.array2string(tab.b, precision=17))
        print("c = " + np.array2string(tab.c, precision=17))
        print(f"algebraic stability: b > 0 and PSD matrix, smallest eigenvalue {lam:.3e} -> "
              f"{'PASS' if stable else 'FAIL'}")
        print(f"stiffly accurate: {'PASS' if stiff else 'FAIL'}")
        print(f"invertible A: {'PASS' if inv else 'FAIL'}")
        ok = stable and stiff and inv
    else:
        coef = bdf_coefficients(spec.order)
        moduli = np.sort(bdf_root_moduli(spec.order))[::-1]
        zs = check_zero_stability(spec.order)
        consistent = abs(coef.delta.sum()) < 1e-13
        print(f"{spec.name}: k={coef.k}")
        print("delta = " + np.array2string(coef.delta, precision=17))
        print("gamma = " + np.array2string(coef.gamma, precision=17))
        print(f"root moduli: {np.array2string(moduli, precision=6)}")
        print(f"zero stability (moduli <= 1, boundary roots simple): {'PASS' if zs else 'FAIL'}")
        print(f"consistency (sum delta = 0): {'PASS' if consistent else 'FAIL'}")
        ok = zs and consistent
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    def add_globals(p, suppress):
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--out-dir", default=d(None), help="directory for output files")
        p.add_argument("--threads", type=int, default=d(1), help="worker threads (speed only, never results)")
        p.add_argument("--quiet", action="store_true", default=d(False), help="suppress console summaries")

    # global flags are accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, suppress=True)
    parser = argparse.ArgumentParser(prog="esfem",
                                     description="Evolving surface FEM for quasilinear parabolic problems.")
    add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", parents=[common], help="write an evolved icosphere mesh",
                       description="Write the level-L icosphere moved to time t in the ESFEM-MESH 1 text format.")
    p.add_argument("--level", type=int, required=True, help=f"refinement level 0..{MAX_LEVEL}")
    p.add_argument("--t", type=float, default=0.0, help="time of the evolved surface")
    p.add_argument("--out", required=True, help="output mesh file")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("solve", parents=[common], help="run one solve and write a JSON report",
                       description="Run one (level, integrator, tau) solve.",
                       epilog=SOLVE_SCHEMA, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", nargs="?", default=None, help="JSON config file")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", parents=[common], help="run a convergence study",
                       description="Run a convergence study; writes CSV, gnuplot script and JSON report.",
                       epilog=CONVERGENCE_SCHEMA, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", nargs="?", default=None, help="JSON config file")
    p.add_argument("--integrator", default=None, help=INTEGRATOR_GRAMMAR)
    p.add_argument("--tau0", type=float, default=None, help="first step size")
    p.add_argument("--tau-refinement", type=int, default=None, help="step divisor per row")
    p.add_argument("--fixed-level", type=int, default=None, help="fix the mesh, refine tau only")
    p.add_argument("--n-tau", type=int, default=None, help="number of step sizes with --fixed-level")
    p.add_argument("--levels", type=int, nargs="+", default=None, help="icosphere levels")
    p.add_argument("--lift-quadrature", action="store_true", help="evaluate f at closest points")
    p.add_argument("--elliptic", action="store_true", help="run the elliptic convergence test instead")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("check", parents=[common], help="check integrator coefficients",
                       description="Print coefficients and stability checks; exit 0 iff all pass.")
    p.add_argument("integrator", help=INTEGRATOR_GRAMMAR)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"esfem {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"esfem {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
