"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one line ``ACCEPTANCE <n> PASS|FAIL <summary>`` to the
terminal (bypassing capture) before asserting.
"""

import time
from math import factorial

import numpy as np
import pytest

from esfem.assembly import (
    EDGE_MIDPOINT,
    assemble_gform,
    assemble_mass,
    assemble_newton_correction,
    assemble_stiffness_linear,
    assemble_stiffness_nonlinear,
)
from esfem.cli import main as cli_main
from esfem.experiments import (
    ConvergenceConfig,
    elliptic_convergence_test,
    run_convergence_study,
    solve_level,
    temporal_convergence_study,
)
from esfem.geometry import (
    SurfaceSpec,
    flow_map,
    manufactured_rhs_f,
    material_velocity,
)
from esfem.mesh import EvolvingMesh, icosphere
from esfem.timestepping import (
    bdf_delta,
    bdf_gamma,
    check_algebraic_stability,
    check_zero_stability,
    is_stiffly_accurate,
    radau_iia,
)


@pytest.fixture
def report(capsys):
    def emit(number, ok, summary):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'} {summary}")
        assert ok, summary
    return emit


def _fmt(values):
    return "[" + ", ".join("-" if v is None else f"{v:.3f}" for v in values) + "]"


def test_1_spatial_order_backward_euler(report):
    t0 = time.perf_counter()
    table = run_convergence_study(ConvergenceConfig())
    elapsed = time.perf_counter() - t0
    assert table.failure is None, table.failure
    e_l2 = table.rows[-1].eoc_LinfL2
    e_h1 = table.rows[-1].eoc_L2H1
    ok = 1.85 <= e_l2 <= 2.15 and 1.4 <= e_h1 <= 2.0 and elapsed < 600
    report(1, ok, f"BE levels 1..4: Linf(L2) EOCs {_fmt(table.column('eoc_LinfL2'))} (final in [1.85, 2.15]), "
                  f"L2(H1) EOCs {_fmt(table.column('eoc_L2H1'))} (final in [1.4, 2.0]), {elapsed:.0f}s")


TEMPORAL_TARGETS = {"bdf1": 0.8, "bdf2": 1.8, "bdf3": 2.8, "libdf2": 1.8, "libdf3": 2.8, "radau2": 2.8}


@pytest.fixture(scope="module")
def temporal_level4():
    t0 = time.perf_counter()
    tables = temporal_convergence_study(4, list(TEMPORAL_TARGETS), [1 / 40, 1 / 80, 1 / 160], ConvergenceConfig())
    return tables, time.perf_counter() - t0


@pytest.mark.parametrize("name", list(TEMPORAL_TARGETS))
def test_2_temporal_order(report, temporal_level4, name):
    tables, elapsed = temporal_level4
    table = tables[name]
    assert table.failure is None, table.failure
    order = table.rows[-1].eoc_LinfL2
    ok = order >= TEMPORAL_TARGETS[name] and elapsed < 1200
    report(2, ok, f"{name} level 4, tau 1/40..1/160 vs shared bdf3 reference at tau/256: "
                  f"final-time L2 EOCs {_fmt(table.column('eoc_LinfL2'))} (need >= {TEMPORAL_TARGETS[name]}), "
                  f"study {elapsed:.0f}s")


def test_3_implicit_vs_linearly_implicit(report):
    tau = 0.1 / 4 ** 2  # the level-3 row of the backward Euler ladder
    rows = {name: solve_level(3, tau, ConvergenceConfig(integrator=name)) for name in ("bdf3", "libdf3")}
    a, b = rows["bdf3"].err_LinfL2, rows["libdf3"].err_LinfL2
    rel = abs(a - b) / a
    report(3, rel <= 0.01, f"level 3, tau {tau:g}: Linf(L2) bdf3 {a:.6e}, libdf3 {b:.6e}, relative gap {rel:.2e} "
                           f"(need <= 1e-2)")


def test_4_elliptic_rates(report):
    table = elliptic_convergence_test([2, 3, 4, 5], t=0.5)
    l2 = table.column("eoc_LinfL2")[1:]
    h1 = table.column("eoc_L2H1")[1:]
    ok = all(1.85 <= v <= 2.15 for v in l2) and all(0.85 <= v <= 1.15 for v in h1)
    report(4, ok, f"elliptic t=0.5 levels 2..5: L2 EOCs {_fmt(l2)} in [1.85, 2.15], H1 EOCs {_fmt(h1)} "
                  f"in [0.85, 1.15]")


def _structural_checks():
    rng = np.random.default_rng(7)
    spec = SurfaceSpec()
    emesh = EvolvingMesh(icosphere(2), spec)
    m = emesh.at(0.3)
    n = m.n_vertices
    M, S = assemble_mass(m), assemble_stiffness_linear(m)
    X = rng.standard_normal((100, n))
    quad = lambda A: np.einsum("ij,ij->i", X, (A.scipy @ X.T).T)  # noqa: E731
    checks = {}

    checks["mass SPD"] = M.is_symmetric() and bool(np.all(quad(M) > 0))
    eig = np.linalg.eigvalsh(S.to_dense())
    checks["stiffness kernel = constants"] = (np.abs(S @ np.ones(n)).max() < 1e-13 and abs(eig[0]) < 1e-12
                                              and eig[1] > 1e-3)
    sandwich = True
    for _ in range(5):
        qa, qs = quad(assemble_stiffness_nonlinear(m, rng.normal(0, 2, n))), quad(S)
        sandwich &= bool(np.all(qa >= 0.5 * qs * (1 - 1e-12)) and np.all(qa <= qs * (1 + 1e-12)))
    checks["ellipticity sandwich"] = sandwich

    G = assemble_gform(m, emesh.velocities(0.3)).to_dense()
    errs = [np.abs((assemble_mass(emesh.at(0.3 + e)).to_dense() - assemble_mass(emesh.at(0.3 - e)).to_dense())
                   / (2 * e) - G).max() for e in (1e-3, 1e-4)]
    checks["transport property order 2"] = abs(np.log10(errs[0] / errs[1]) - 2) < 0.1

    alpha, d = rng.normal(0, 1, n), rng.normal(0, 1, n)
    J = assemble_stiffness_nonlinear(m, alpha) + assemble_newton_correction(m, alpha)
    F = lambda x: assemble_stiffness_nonlinear(m, x) @ x  # noqa: E731
    jerr = [np.linalg.norm((F(alpha + e * d) - F(alpha)) / e - J @ d) for e in (1e-4, 1e-5)]
    checks["Newton Jacobian first order"] = 8 < jerr[0] / jerr[1] < 12

    lam = EDGE_MIDPOINT.points
    qerr = max(abs(EDGE_MIDPOINT.weights @ (lam[:, 0] ** a * lam[:, 1] ** b * lam[:, 2] ** c)
                   - 2 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2))
               for a in range(3) for b in range(3 - a) for c in range(3 - a - b))
    checks["quadrature degree 2 exact"] = qerr < 1e-14

    from fractions import Fraction
    from math import comb
    coeff_ok = True
    for k in range(1, 6):
        delta = [sum((Fraction((-1) ** j * comb(ell, j), ell) for ell in range(max(j, 1), k + 1)), Fraction(0))
                 for j in range(k + 1)]
        coeff_ok &= np.allclose(bdf_delta(k), [float(v) for v in delta], rtol=0, atol=1e-15)
        # gamma reproduces polynomials of degree < k at t_n from t_{n-1}, ..., t_{n-k}
        for p in range(k):
            coeff_ok &= sum(int(g) * (-j) ** p for j, g in enumerate(bdf_gamma(k), start=1)) == (1 if p == 0 else 0)
    checks["BDF delta/gamma exact"] = bool(coeff_ok)
    checks["zero stability k=1..5"] = all(check_zero_stability(k) for k in range(1, 6))
    checks["algebraic stability radau1..3"] = all(check_algebraic_stability(radau_iia(s))[0] for s in (1, 2, 3))
    checks["stiff accuracy radau1..3"] = all(is_stiffly_accurate(radau_iia(s)) for s in (1, 2, 3))

    X0 = icosphere(3).vertices
    h = 1e-6
    verr = max(np.abs((flow_map(spec, X0, t + h) - flow_map(spec, X0, t - h)) / (2 * h)
                      - material_velocity(spec, flow_map(spec, X0, t), t)).max() for t in (0.1, 0.45, 0.8))
    checks["velocity = flow derivative"] = verr < 1e-8
    checks["f vs tangential finite differences"] = _forcing_fd_error(spec, rng) < 1e-5
    return checks


def _forcing_fd_error(spec, rng):
    """Forcing against tangential central differences on the level set.

    The diffusive flux A(u) grad_G u is formed at points one step along an
    orthonormal tangent frame, projected back onto Gamma(t), and its
    tangential divergence taken by central differences. The material
    derivative comes from time differences along the flow.
    """
    from esfem.geometry import closest_point, coefficient_A, exact_solution
    from esfem.geometry import normal_projection_curvature as npc

    h, ht = 1e-4, 1e-5
    worst = 0.0
    for t in np.linspace(0.05, 0.95, 5):
        X = rng.standard_normal((40, 3))
        X /= np.linalg.norm(X, axis=1)[:, None]
        x = flow_map(spec, X, t)

        def sgrad(p):
            nu = npc(spec, p, t).normal
            g = np.zeros_like(p)
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                g[:, i] = (exact_solution(p + e, t) - exact_solution(p - e, t)) / (2 * h)
            # project the ambient difference gradient
            return g - np.sum(g * nu, axis=1)[:, None] * nu

        nu = npc(spec, x, t).normal
        t1 = np.cross(nu, [0.3, 0.5, 0.8])
        t1 /= np.linalg.norm(t1, axis=1)[:, None]
        t2 = np.cross(nu, t1)
        div = 0.0
        for tv in (t1, t2):
            xp = closest_point(spec, x + h * tv, t)
            xm = closest_point(spec, x - h * tv, t)
            up, um = exact_solution(xp, t), exact_solution(xm, t)
            fp = coefficient_A(up)[:, None] * sgrad(xp)
            fm = coefficient_A(um)[:, None] * sgrad(xm)
            div += np.sum((fp - fm) * tv, axis=1) / (np.linalg.norm(xp - xm, axis=1))
        material = (exact_solution(flow_map(spec, X, t + ht), t + ht)
                    - exact_solution(flow_map(spec, X, t - ht), t - ht)) / (2 * ht)
        vel_grad = np.zeros((len(x), 3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            vel_grad[:, :, i] = (material_velocity(spec, x + e, t) - material_velocity(spec, x - e, t)) / (2 * h)
        div_v = np.einsum("nii->n", vel_grad) - np.einsum("ni,nij,nj->n", nu, vel_grad, nu)
        f_fd = material + exact_solution(x, t) * div_v - div
        worst = max(worst, np.abs(f_fd - manufactured_rhs_f(spec, x, t)).max())
    return worst


def test_5_structural_suite(report):
    checks = _structural_checks()
    failed = [k for k, v in checks.items() if not v]
    report(5, not failed, f"{len(checks) - len(failed)}/{len(checks)} structural checks"
                          + (f"; failed: {', '.join(failed)}" if failed else f": {', '.join(checks)}"))


def test_6_cli_determinism_across_threads(report, tmp_path, capsys):
    codes = []
    for threads, sub in (("1", "a"), ("4", "b")):
        codes.append(cli_main(["--threads", threads, "--out-dir", str(tmp_path / sub), "--quiet", "convergence"]))
    capsys.readouterr()
    same = (tmp_path / "a" / "convergence.csv").read_bytes() == (tmp_path / "b" / "convergence.csv").read_bytes()
    report(6, codes == [0, 0] and same, f"default convergence CSV with --threads 1 and --threads 4 "
                                        f"{'byte-identical' if same else 'differ'}")
