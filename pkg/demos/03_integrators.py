"""Time integrators: coefficients, stability properties and a short run of each."""

import time

import numpy as np

from esfem.assembly import EsfemSystem, discrete_norm_M
from esfem.geometry import paper_problem
from esfem.mesh import EvolvingMesh, icosphere
from esfem.timestepping import (
    bdf_coefficients,
    bdf_root_moduli,
    check_algebraic_stability,
    integrate,
    radau_iia,
)

for k in range(1, 6):
    c = bdf_coefficients(k)
    print(f"bdf{k}: delta = {np.round(c.delta, 4)}, gamma = {c.gamma}, "
          f"max root modulus = {bdf_root_moduli(k).max():.12f}")

for s in (1, 2, 3):
    ok, lam = check_algebraic_stability(radau_iia(s))
    print(f"radau{s}: algebraically stable {ok}, smallest eigenvalue {lam:+.2e}")

problem = paper_problem()
system = EsfemSystem(EvolvingMesh(icosphere(3)), problem)
alpha0 = system.interpolate(problem.exact, 0.0)
print(f"\nlevel 3 ({system.n} nodes), tau = 1/80, errors at T = 1:")
for name in ("be", "bdf2", "bdf3", "libdf3", "radau2", "radau3"):
    t0 = time.perf_counter()
    traj = integrate(system, name, 1 / 80, 1.0, alpha0, save_every=80)
    err = discrete_norm_M(system.mass(1.0), traj.final() - system.exact_nodal(1.0))
    print(f"  {name:7s} |e(T)|_M = {err:.4e}   ({time.perf_counter() - t0:.1f}s)")
# Past second order the spatial error of this mesh dominates.
