"""Manufactured-solution convergence studies and their serialisation."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .assembly import (
    DUNAVANT4,
    EsfemSystem,
    assemble_load,
    assemble_mass,
    assemble_stiffness_linear,
    assemble_stiffness_nonlinear,
    discrete_norm_A,
    discrete_norm_M,
    element_geometry,
    nodal_interpolant,
)
from .geometry import (
    ProblemDefinition,
    SurfaceSpec,
    coefficient_A,
    coefficient_A_prime,
    exact_solution,
    exact_solution_gradient,
    paper_problem,
    surface_operators,
    zero_problem,
    _normal_curvature,
)
from .linalg import cg_solve, dual_norm
from .mesh import EvolvingMesh, TriMesh, icosphere, mesh_size_h
from .timestepping import NonlinearSolveConfig, Trajectory, integrate, parse_integrator

log = logging.getLogger(__name__)

__all__ = [
    "ConvergenceConfig",
    "ErrorTableRow",
    "ErrorTable",
    "ErrorAccumulator",
    "error_LinfL2",
    "error_L2H1",
    "eoc",
    "solve_level",
    "run_convergence_study",
    "compute_reference",
    "temporal_convergence_study",
    "residual_dual_norm_diagnostic",
    "elliptic_solve",
    "elliptic_convergence_test",
    "write_csv",
    "read_csv",
    "emit_plot_script",
    "write_json_report",
    "CSV_HEADER",
]

CSV_HEADER = ["level", "dof", "h", "tau", "err_linf_l2", "eoc_linf_l2", "err_l2_h1", "eoc_l2_h1"]


@dataclass(frozen=True)
class ConvergenceConfig:
    """Parameters of a convergence study.

    Without ``fixed_level`` each entry of ``levels`` is one row, with step
    ``tau0 / tau_refinement**i`` on the i-th level. With ``fixed_level`` the
    mesh is fixed and ``n_tau`` step sizes are compared against a reference
    run at ``tau0 / reference_factor``.
    """

    levels: tuple[int, ...] = (1, 2, 3, 4)
    tau0: float = 0.1
    tau_refinement: int = 4
    integrator: str = "be"
    T: float = 1.0
    lift_quadrature: bool = False
    fixed_level: int | None = None
    n_tau: int = 3
    reference_factor: int = 256
    reference_integrator: str = "bdf3"
    start: str = "radau2"
    nonlinear: NonlinearSolveConfig = field(default_factory=NonlinearSolveConfig)
    zero_data: bool = False

    def __post_init__(self):
        if not self.tau0 > 0:
            raise ValueError("tau0 must be positive")
        if len(self.levels) == 0:
            raise ValueError("levels must be nonempty")
        if self.tau_refinement < 1:
            raise ValueError("tau_refinement must be >= 1")
        if not self.T > 0:
            raise ValueError("T must be positive")
        parse_integrator(self.integrator)
        parse_integrator(self.reference_integrator)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConvergenceConfig":
        d = dict(d)
        if "levels" in d:
            d["levels"] = tuple(int(v) for v in d["levels"])
        if isinstance(d.get("nonlinear"), dict):
            d["nonlinear"] = NonlinearSolveConfig(**d["nonlinear"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ErrorTableRow:
    level: int
    dof: int
    h: float
    tau: float
    err_LinfL2: float
    err_L2H1: float
    eoc_LinfL2: float | None = None
    eoc_L2H1: float | None = None


@dataclass
class ErrorTable:
    rows: list[ErrorTableRow] = field(default_factory=list)
    norms: tuple[str, str] = ("Linf(L2)", "L2(H1)")
    failure: str | None = None
    timings: list[float] = field(default_factory=list)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    def fill_eocs(self) -> "ErrorTable":
        for name in ("LinfL2", "L2H1"):
            errs = self.column("err_" + name)
            rates = eoc(errs) if len(errs) > 1 and all(e > 0 for e in errs) else []
            for i, row in enumerate(self.rows):
                setattr(row, "eoc_" + name, rates[i - 1] if i > 0 and rates else None)
        return self

    def format(self) -> str:
        lines = [f"{'level':>5} {'dof':>7} {'h':>10} {'tau':>10} {self.norms[0]:>13} {'EOC':>6} "
                 f"{self.norms[1]:>13} {'EOC':>6}"]
        for r in self.rows:
            e1 = "-" if r.eoc_LinfL2 is None else f"{r.eoc_LinfL2:.2f}"
            e2 = "-" if r.eoc_L2H1 is None else f"{r.eoc_L2H1:.2f}"
            lines.append(f"{r.level:>5} {r.dof:>7} {r.h:>10.4g} {r.tau:>10.4g} {r.err_LinfL2:>13.6e} {e1:>6} "
                         f"{r.err_L2H1:>13.6e} {e2:>6}")
        if self.failure:
            lines.append(f"FAILED: {self.failure}")
        return "\n".join(lines)


def eoc(errors: Sequence[float]) -> list[float]:
    """log2(e_{k-1} / e_k) for consecutive errors."""
    errs = np.asarray(errors, dtype=float)
    if np.any(errs <= 0):
        raise ValueError("EOC requires strictly positive errors")
    return [float(v) for v in np.log2(errs[:-1] / errs[1:])]


class ErrorAccumulator:
    """Observer accumulating max_n |e_n|_M and (sum dt |e_n|_A^2)^(1/2) with
    e_n = alpha_n - I_h u(t_n); the initial value (n = 0) is skipped."""

    def __init__(self, emesh: EvolvingMesh, exact: Callable):
        self.emesh = emesh
        self.exact = exact
        self.linf_l2 = 0.0
        self._h1_sq = 0.0
        self._t_prev = None

    def __call__(self, n: int, t: float, alpha: np.ndarray, reference: np.ndarray | None = None) -> None:
        if n == 0:
            self._t_prev = t
            return
        mesh = self.emesh.at(t)
        target = nodal_interpolant(mesh, self.exact, t) if reference is None else reference
        e = alpha - target
        geo = element_geometry(mesh)
        self.linf_l2 = max(self.linf_l2, discrete_norm_M(assemble_mass(mesh, geo), e))
        self._h1_sq += (t - self._t_prev) * discrete_norm_A(assemble_stiffness_linear(mesh, geo), e) ** 2
        self._t_prev = t

    @property
    def l2_h1(self) -> float:
        return math.sqrt(self._h1_sq)


def _accumulate(trajectory: Trajectory, emesh: EvolvingMesh, exact: Callable) -> ErrorAccumulator:
    acc = ErrorAccumulator(emesh, exact)
    for n, (t, a) in enumerate(zip(trajectory.times, trajectory.alphas)):
        acc(n, t, a)
    return acc


def error_LinfL2(trajectory: Trajectory, emesh: EvolvingMesh, exact: Callable) -> float:
    return _accumulate(trajectory, emesh, exact).linf_l2


def error_L2H1(trajectory: Trajectory, emesh: EvolvingMesh, exact: Callable) -> float:
    return _accumulate(trajectory, emesh, exact).l2_h1


def _problem_for(config: ConvergenceConfig) -> ProblemDefinition:
    if config.zero_data:
        return zero_problem()
    return paper_problem()


def solve_level(level: int, tau: float, config: ConvergenceConfig,
                problem: ProblemDefinition | None = None) -> ErrorTableRow:
    """Integrate on one icosphere level from the interpolated initial value."""
    problem = problem or _problem_for(config)
    emesh = EvolvingMesh(icosphere(level), problem.spec)
    system = EsfemSystem(emesh, problem, lift_quadrature=config.lift_quadrature)
    acc = ErrorAccumulator(emesh, problem.exact)
    alpha0 = system.interpolate(problem.exact, 0.0)
    integrate(system, config.integrator, tau, config.T, alpha0, config.nonlinear, start=config.start,
              save_every=max(1, int(round(config.T / tau))), observer=acc)
    return ErrorTableRow(level, emesh.n_vertices, mesh_size_h(emesh.at(0.0)), tau, acc.linf_l2, acc.l2_h1)


def run_convergence_study(config: ConvergenceConfig, threads: int = 1) -> ErrorTable:
    """Convergence table for the manufactured problem.

    Rows are computed independently (optionally on ``threads`` workers) and
    collected in level order, so the table does not depend on ``threads``.
    A failing row ends the table; earlier rows are kept and ``failure`` set.
    """
    if config.fixed_level is not None:
        taus = [config.tau0 / config.tau_refinement ** i for i in range(config.n_tau)]
        return temporal_convergence_study(config.fixed_level, [config.integrator], taus, config)[config.integrator]

    jobs = [(lvl, config.tau0 / config.tau_refinement ** i) for i, lvl in enumerate(config.levels)]

    def run(job):
        t0 = time.perf_counter()
        try:
            return solve_level(job[0], job[1], config), None, time.perf_counter() - t0
        except Exception as exc:  # annotated in the table instead of propagated
            return None, f"level {job[0]}: {exc}", time.perf_counter() - t0

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    table = ErrorTable()
    for row, failure, elapsed in results:
        if failure is not None:
            table.failure = failure
            break
        table.rows.append(row)
        table.timings.append(elapsed)
    return table.fill_eocs()


@dataclass
class ReferenceSolution:
    tau: float
    sample_dt: float
    times: list[float]
    alphas: list[np.ndarray]

    def at_step(self, t: float) -> np.ndarray:
        i = int(round(t / self.sample_dt))
        if abs(i * self.sample_dt - t) > 1e-9:
            raise ValueError(f"reference not sampled at t = {t}")
        return self.alphas[i]


def compute_reference(system: EsfemSystem, tau_ref: float, sample_dt: float, T: float = 1.0,
                      integrator: str = "bdf3", config: NonlinearSolveConfig = NonlinearSolveConfig(),
                      start: str = "radau2") -> ReferenceSolution:
    """Fine-step solution stored at multiples of ``sample_dt``."""
    every = int(round(sample_dt / tau_ref))
    if abs(every * tau_ref - sample_dt) > 1e-12:
        raise ValueError("sample_dt must be a multiple of tau_ref")
    alpha0 = system.interpolate(system.problem.exact, 0.0)
    traj = integrate(system, integrator, tau_ref, T, alpha0, config, start=start, save_every=every)
    return ReferenceSolution(tau_ref, sample_dt, traj.times, traj.alphas)


def temporal_convergence_study(level: int, integrators: Sequence[str], taus: Sequence[float],
                               config: ConvergenceConfig = ConvergenceConfig(),
                               reference: ReferenceSolution | None = None,
                               problem: ProblemDefinition | None = None) -> dict[str, ErrorTable]:
    """Time-discretisation errors at the final time on a fixed mesh.

    Errors are |alpha_N - alpha_ref(T)| in the M and A norms, against one
    fine-step reference shared by all methods (they approximate the same
    semi-discrete solution). Final-time errors keep the initial layer caused
    by non-smooth discrete initial data out of the measured order.
    """
    problem = problem or _problem_for(config)
    emesh = EvolvingMesh(icosphere(level), problem.spec)
    system = EsfemSystem(emesh, problem, lift_quadrature=config.lift_quadrature)
    coarse = max(taus)
    if reference is None:
        reference = compute_reference(system, coarse / config.reference_factor, coarse, config.T,
                                      config.reference_integrator, config.nonlinear, config.start)
    h = mesh_size_h(emesh.at(0.0))
    M_T, S_T = system.mass(config.T), system.stiffness(config.T)
    ref_T = reference.at_step(config.T)
    tables = {}
    for name in integrators:
        table = ErrorTable(norms=("L2 at T", "H1 at T"))
        for tau in taus:
            t0 = time.perf_counter()
            alpha0 = system.interpolate(problem.exact, 0.0)
            try:
                traj = integrate(system, name, tau, config.T, alpha0, config.nonlinear, start=config.start,
                                 save_every=int(round(config.T / tau)))
            except Exception as exc:
                table.failure = f"tau {tau:g}: {exc}"
                break
            e = traj.final() - ref_T
            table.rows.append(ErrorTableRow(level, emesh.n_vertices, h, tau, discrete_norm_M(M_T, e),
                                            discrete_norm_A(S_T, e)))
            table.timings.append(time.perf_counter() - t0)
        tables[name] = table.fill_eocs()
    return tables


def residual_dual_norm_diagnostic(system: EsfemSystem, t: float, tau_fd: float = 1e-4,
                                  tol: float = 1e-12) -> float:
    """Dual norm of the finite element residual of the interpolated exact
    solution, with a central difference for d/dt(M I_h u)."""
    exact = system.problem.exact
    ip, im = system.interpolate(exact, t + tau_fd), system.interpolate(exact, t - tau_fd)
    ddt = (system.mass(t + tau_fd) @ ip - system.mass(t - tau_fd) @ im) / (2.0 * tau_fd)
    it = system.interpolate(exact, t)
    bracket = ddt + system.nonlinear_stiffness(t, it) @ it - system.load(t)
    M = system.mass(t)
    r = cg_solve(M, bracket, tol=tol)
    return dual_norm(M, system.stiffness(t), r, tol=tol)


_XY_HESSIAN = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def _elliptic_rhs(spec: SurfaceSpec, t: float, coeff: Callable, coeff_prime: Callable):
    """g = -div_G(A(xi) grad_G w) + w for w = x1 x2 and xi = exact solution at t."""

    def g(x, _t=None):
        x = np.atleast_2d(x)
        w = x[:, 0] * x[:, 1]
        grad_w = exact_solution_gradient(x, 0.0)
        sgrad_w, lap_w, _ = surface_operators(spec, x, t, grad_w, _XY_HESSIAN)
        sgrad_xi, _, _ = surface_operators(spec, x, t, exact_solution_gradient(x, t),
                                           np.exp(-6.0 * t) * _XY_HESSIAN)
        xi = exact_solution(x, t)
        return -(coeff(xi) * lap_w + coeff_prime(xi) * np.sum(sgrad_xi * sgrad_w, axis=1)) + w

    return g


def elliptic_solve(mesh: TriMesh, xi_nodal, g: Callable, t: float, coeff: Callable = coefficient_A,
                   tol: float = 1e-12) -> np.ndarray:
    """Solve (A(xi_h) + M) w_h = load(g) on a fixed triangulation."""
    geo = element_geometry(mesh)
    lhs = assemble_stiffness_nonlinear(mesh, xi_nodal, coeff, geo=geo) + assemble_mass(mesh, geo)
    return cg_solve(lhs, assemble_load(mesh, g, t, geo=geo), tol=tol)


def _true_errors(mesh: TriMesh, spec: SurfaceSpec, t: float, wh: np.ndarray):
    """L2 and H1-seminorm errors of w_h against w = x1 x2 at degree-4 quadrature points."""
    geo = element_geometry(mesh)
    rule = DUNAVANT4
    p = mesh.vertices[mesh.triangles]
    xq = np.tensordot(rule.points, p, axes=(1, 1)).transpose(1, 0, 2)
    nodal = wh[mesh.triangles]
    diff = nodal @ rule.points.T - xq[..., 0] * xq[..., 1]
    l2 = np.sqrt(np.sum(geo.areas * ((diff ** 2) @ rule.weights)))
    grad_h = (nodal[:, :, None] * geo.grads).sum(axis=1)
    flat = xq.reshape(-1, 3)
    nu, _ = _normal_curvature(spec, flat, t)
    g = exact_solution_gradient(flat, 0.0)
    sg = (g - np.sum(g * nu, axis=1)[:, None] * nu).reshape(xq.shape)
    gd = np.sum((grad_h[:, None, :] - sg) ** 2, axis=2)
    h1 = np.sqrt(np.sum(geo.areas * (gd @ rule.weights)))
    return float(l2), float(h1)


def elliptic_convergence_test(levels: Sequence[int], t: float = 0.5, spec: SurfaceSpec | None = None,
                              coeff: Callable = coefficient_A,
                              coeff_prime: Callable = coefficient_A_prime) -> ErrorTable:
    """P1 convergence for -div_G(A(xi) grad_G w) + w = g on the frozen surface Gamma(t)."""
    spec = spec or SurfaceSpec()
    g = _elliptic_rhs(spec, t, coeff, coeff_prime)
    table = ErrorTable(norms=("L2", "H1"))
    for level in levels:
        emesh = EvolvingMesh(icosphere(level), spec)
        mesh = emesh.at(t)
        xi = nodal_interpolant(mesh, exact_solution, t)
        wh = elliptic_solve(mesh, xi, g, t, coeff)
        l2, h1 = _true_errors(mesh, spec, t, wh)
        table.rows.append(ErrorTableRow(level, mesh.n_vertices, mesh_size_h(mesh), 0.0, l2, h1))
    return table.fill_eocs()


def _fmt(v) -> str:
    return "" if v is None else "%.17g" % v


def write_csv(table: ErrorTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in table.rows:
            w.writerow([r.level, r.dof, _fmt(r.h), _fmt(r.tau), _fmt(r.err_LinfL2), _fmt(r.eoc_LinfL2),
                        _fmt(r.err_L2H1), _fmt(r.eoc_L2H1)])


def read_csv(path) -> ErrorTable:
    def opt(s):
        return None if s == "" else float(s)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [
            ErrorTableRow(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4]), float(r[6]),
                          opt(r[5]), opt(r[7]))
            for r in reader
        ]
    return ErrorTable(rows)


def emit_plot_script(table: ErrorTable, path, order: float = 1.0, title: str = "errors at T") -> None:
    """Self-contained gnuplot script: log-log errors against tau (or h when
    the table has no time step) with an order-``order`` reference line."""
    # the elliptic table has no time step; plot against h instead
    use_h = all(r.tau == 0 for r in table.rows)
    xs = [r.h if use_h else r.tau for r in table.rows]
    xname, xlabel = ("h", "mesh size h") if use_h else ("tau", "step size tau")
    data = "\n".join(f"{x:.17g} {r.err_LinfL2:.17g} {r.err_L2H1:.17g}" for x, r in zip(xs, table.rows))
    ref = (f"ref(x) = {table.rows[0].err_LinfL2:.17g} * (x / {xs[0]:.17g})**{order:g}"
           if xs and xs[0] > 0 else f"ref(x) = x**{order:g}")
    script = f"""# gnuplot script
set terminal pngcairo size 800,600
set output '{Path(path).stem}.png'
set logscale xy
set xlabel '{xlabel}'
set ylabel 'error'
set key left top
set title '{title}'
{ref}
$errors << EOD
{data}
EOD
plot $errors using 1:2 with linespoints title '{table.norms[0]}', \\
     $errors using 1:3 with linespoints title '{table.norms[1]}', \\
     ref(x) with lines dashtype 2 title 'O({xname}^{order:g})'
"""
    Path(path).write_text(script)


def write_json_report(table: ErrorTable, config: dict, path, extra: dict | None = None) -> None:
    report = {
        "config": config,
        "norms": list(table.norms),
        "rows": [asdict(r) for r in table.rows],
        "failure": table.failure,
        "wall_clock_seconds": table.timings,
    }
    if extra:
        report.update(extra)
    Path(path).write_text(json.dumps(report, indent=2) + "\n")
