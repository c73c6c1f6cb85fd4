"""Icosphere meshes moving with the surface, and the P1 operators on them."""

import numpy as np

from esfem.assembly import (
    assemble_gform,
    assemble_mass,
    assemble_stiffness_linear,
    assemble_stiffness_nonlinear,
    discrete_norm_M,
    nodal_interpolant,
)
from esfem.geometry import SurfaceSpec, exact_solution
from esfem.mesh import EvolvingMesh, admissibility_ratio, icosphere, mesh_size_h

spec = SurfaceSpec()
print(f"{'level':>5} {'V':>6} {'F':>6} {'h':>8} {'ratio':>7} {'area':>9}")
for level in range(6):
    m = EvolvingMesh(icosphere(level), spec).at(0.0)
    area = assemble_mass(m).values.sum()
    print(f"{level:>5} {m.n_vertices:>6} {m.n_triangles:>6} {mesh_size_h(m):8.4f} "
          f"{admissibility_ratio(m):7.4f} {area:9.6f}")
print(f"sphere area 4 pi = {4 * np.pi:.6f}")

emesh = EvolvingMesh(icosphere(4), spec)
m = emesh.at(0.0)
z = nodal_interpolant(m, exact_solution, 0.0)
print(f"\n|I_h u0|_M^2 = {discrete_norm_M(assemble_mass(m), z) ** 2:.6f}, exact {4 * np.pi / 15:.6f}")

# d/dt M(t) = G(t): the g-form weights the mass by the divergence of the velocity.
t, eps = 0.3, 1e-4
G = assemble_gform(emesh.at(t), emesh.velocities(t)).to_dense()
dM = (assemble_mass(emesh.at(t + eps)).to_dense() - assemble_mass(emesh.at(t - eps)).to_dense()) / (2 * eps)
print(f"max |dM/dt - G| = {np.abs(dM - G).max():.2e}")

# The coefficient lies in [1/2, 1), so A(alpha) sits between S/2 and S.
S = assemble_stiffness_linear(emesh.at(t))
A = assemble_stiffness_nonlinear(emesh.at(t), np.random.default_rng(1).normal(0, 2, emesh.n_vertices))
x = np.random.default_rng(2).standard_normal(emesh.n_vertices)
print(f"x^T A x / x^T S x = {(x @ (A @ x)) / (x @ (S @ x)):.4f}")
