"""Two diagnostics that do not involve time stepping: the elliptic problem on
a frozen surface, and the dual norm of the residual of I_h u."""

from esfem.assembly import EsfemSystem
from esfem.experiments import elliptic_convergence_test, residual_dual_norm_diagnostic
from esfem.geometry import paper_problem
from esfem.mesh import EvolvingMesh, icosphere

print(elliptic_convergence_test([2, 3, 4, 5], t=0.5).format())

print("\nresidual dual norm at t = 0.5")
for level in range(1, 6):
    system = EsfemSystem(EvolvingMesh(icosphere(level)), paper_problem())
    print(f"  level {level}: {residual_dual_norm_diagnostic(system, 0.5):.4e}")
