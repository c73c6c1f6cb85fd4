"""The oscillating ellipsoid x1^2/a(t) + x2^2 + x3^2 = 1 and the forcing of
the manufactured solution u = exp(-6t) x1 x2."""

import numpy as np

from esfem.geometry import (
    SurfaceSpec,
    closest_point,
    flow_map,
    level_set,
    manufactured_rhs_f,
    material_velocity,
    normal_projection_curvature,
)

spec = SurfaceSpec()
for t in (0.0, 0.25, 0.5, 0.75):
    print(f"t = {t:4.2f}   a(t) = {spec.a(t):.4f}   a'(t) = {spec.a_prime(t):+.4f}")

# Points on the unit sphere ride along x -> (sqrt(a) X1, X2, X3).
X = np.array([[1.0, 0, 0], [0.6, 0.8, 0], [0, 0.6, 0.8]])
x = flow_map(spec, X, 0.25)
print("\nflowed points at t = 0.25:\n", x)
print("level set there:", level_set(spec, x, 0.25))
print("velocity:\n", material_velocity(spec, x, 0.25))

# Mean curvature is the sum of principal curvatures: 2 on the unit sphere,
# and at the tip of the stretched semi-axis sqrt(a) both principal
# curvatures equal sqrt(a), so H = 2 sqrt(a).
d = normal_projection_curvature(spec, np.array([np.sqrt(1.25), 0, 0]), 0.25)
print("\nnormal at the tip:", d.normal, " H =", d.mean_curvature,
      " expected", 2 * np.sqrt(1.25))

p = closest_point(spec, np.array([0.9, 0.9, 0.9]), 0.25)
print("closest point to (0.9, 0.9, 0.9):", p, " phi =", level_set(spec, p, 0.25))

# The forcing is smooth and decays like exp(-6t).
rng = np.random.default_rng(0)
pts = rng.standard_normal((2000, 3))
pts /= np.linalg.norm(pts, axis=1)[:, None]
for t in (0.0, 0.5, 1.0):
    f = manufactured_rhs_f(spec, flow_map(spec, pts, t), t)
    print(f"t = {t:3.1f}   max |f| = {np.abs(f).max():.4e}")
