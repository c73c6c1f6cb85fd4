"""Closed-form geometry of the oscillating ellipsoid and the manufactured problem.

The surface is the zero level set of

    phi(x, t) = x1**2 / a(t) + x2**2 + x3**2 - 1,    a(t) = 1 + A sin(2 pi t / P),

and material points move with the flow ``X -> (sqrt(a(t)) X1, X2, X3)``.
All point functions are vectorised: ``x`` may be a single 3-vector or an
``(n, 3)`` array, and return values follow the same leading shape.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "GeometryError",
    "SurfaceKind",
    "SurfaceSpec",
    "SurfacePointData",
    "ProblemDefinition",
    "level_set",
    "flow_map",
    "material_velocity",
    "material_velocity_gradient",
    "normal_projection_curvature",
    "closest_point",
    "coefficient_A",
    "coefficient_A_prime",
    "exact_solution",
    "exact_solution_gradient",
    "exact_solution_surface_gradient",
    "manufactured_rhs_f",
    "surface_operators",
    "paper_problem",
    "zero_problem",
]


class GeometryError(ValueError):
    """Raised for points off the surface, singular normals or failed projections."""


class SurfaceKind(enum.Enum):
    OSCILLATING_ELLIPSOID = "OscillatingEllipsoid"
    UNIT_SPHERE = "UnitSphere"


@dataclass(frozen=True)
class SurfaceSpec:
    kind: SurfaceKind = SurfaceKind.OSCILLATING_ELLIPSOID
    amplitude: float = 0.25
    period: float = 1.0

    def __post_init__(self):
        if not abs(self.amplitude) < 1.0:
            raise GeometryError(f"|amplitude| must be < 1, got {self.amplitude}")
        if self.period <= 0:
            raise GeometryError(f"period must be positive, got {self.period}")

    @classmethod
    def sphere(cls) -> "SurfaceSpec":
        return cls(kind=SurfaceKind.UNIT_SPHERE, amplitude=0.0)

    def a(self, t: float) -> float:
        """Squared semi-axis along x1."""
        if self.kind is SurfaceKind.UNIT_SPHERE:
            return 1.0
        return 1.0 + self.amplitude * np.sin(2.0 * np.pi * t / self.period)

    def a_prime(self, t: float) -> float:
        if self.kind is SurfaceKind.UNIT_SPHERE:
            return 0.0
        w = 2.0 * np.pi / self.period
        return self.amplitude * w * np.cos(w * t)


@dataclass(frozen=True)
class SurfacePointData:
    normal: np.ndarray
    projection: np.ndarray
    mean_curvature: np.ndarray
    velocity: np.ndarray


def _as_points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


def _out(value: np.ndarray, single: bool):
    return value[0] if single else value


def level_set(spec: SurfaceSpec, x, t: float):
    p, single = _as_points(x)
    val = p[:, 0] ** 2 / spec.a(t) + p[:, 1] ** 2 + p[:, 2] ** 2 - 1.0
    return _out(val, single)


def _level_set_grad(spec: SurfaceSpec, p: np.ndarray, t: float) -> np.ndarray:
    g = 2.0 * p
    g[:, 0] /= spec.a(t)
    return g


def flow_map(spec: SurfaceSpec, X, t: float, tol: float = 1e-10):
    """Carry reference points on Gamma(0) to their positions on Gamma(t)."""
    p, single = _as_points(X)
    off = np.abs(level_set(spec, p, 0.0))
    if np.any(off > tol):
        raise GeometryError(f"point not on the reference surface (|phi| = {off.max():.3e})")
    out = p.copy()
    out[:, 0] *= np.sqrt(spec.a(t) / spec.a(0.0))
    return _out(out, single)


def material_velocity(spec: SurfaceSpec, x, t: float):
    p, single = _as_points(x)
    v = np.zeros_like(p)
    v[:, 0] = spec.a_prime(t) / (2.0 * spec.a(t)) * p[:, 0]
    return _out(v, single)


def material_velocity_gradient(spec: SurfaceSpec, t: float) -> np.ndarray:
    """Constant ambient Jacobian dv_i/dx_j of the velocity field."""
    J = np.zeros((3, 3))
    J[0, 0] = spec.a_prime(t) / (2.0 * spec.a(t))
    return J


def _normal_curvature(spec: SurfaceSpec, p: np.ndarray, t: float):
    grad = _level_set_grad(spec, p, t)
    norm = np.sqrt(np.sum(grad * grad, axis=1))
    if np.any(norm < 1e-10):
        raise GeometryError("level-set gradient vanishes; normal undefined")
    nu = grad / norm[:, None]
    hess_diag = np.array([2.0 / spec.a(t), 2.0, 2.0])
    # div(grad phi / |grad phi|) = (tr D2phi - nu^T D2phi nu) / |grad phi|
    H = (hess_diag.sum() - (nu * nu) @ hess_diag) / norm
    return nu, H


def normal_projection_curvature(spec: SurfaceSpec, x, t: float) -> SurfacePointData:
    """Unit normal, tangential projection, mean curvature (sum of principal
    curvatures, 2 on the unit sphere) and material velocity at ``x``."""
    p, single = _as_points(x)
    nu, H = _normal_curvature(spec, p, t)
    P = np.eye(3)[None] - nu[:, :, None] * nu[:, None, :]
    v = material_velocity(spec, p, t)
    if single:
        return SurfacePointData(nu[0], P[0], H[0], v[0])
    return SurfacePointData(nu, P, H, v)


def closest_point(spec: SurfaceSpec, x, t: float, max_iter: int = 50):
    """Orthogonal projection onto Gamma(t) by damped Newton.

    Solves ``p + mu * grad phi(p) = x`` and ``phi(p) = 0`` for ``(p, mu)``.
    """
    q, single = _as_points(x)
    a = spec.a(t)
    scale = np.sqrt(q[:, 0] ** 2 / a + q[:, 1] ** 2 + q[:, 2] ** 2)
    if np.any(scale == 0):
        raise GeometryError("closest point undefined at the origin")
    p = q / scale[:, None]
    mu = np.zeros(len(q))
    hess = np.array([2.0 / a, 2.0, 2.0])

    def residual(p, mu):
        g = _level_set_grad(spec, p, t)
        return np.concatenate([p + mu[:, None] * g - q, level_set(spec, p, t)[:, None]], axis=1)

    r = residual(p, mu)
    for _ in range(max_iter):
        rn = np.linalg.norm(r, axis=1)
        if np.all(rn <= 1e-14 * (1.0 + np.linalg.norm(q, axis=1))):
            break
        g = _level_set_grad(spec, p, t)
        J = np.zeros((len(q), 4, 4))
        J[:, :3, :3] = np.eye(3) + mu[:, None, None] * np.diag(hess)[None]
        J[:, :3, 3] = g
        J[:, 3, :3] = g
        step = np.linalg.solve(J, -r[:, :, None])[:, :, 0]
        lam = np.ones(len(q))
        for _ in range(30):
            p_new = p + lam[:, None] * step[:, :3]
            mu_new = mu + lam * step[:, 3]
            r_new = residual(p_new, mu_new)
            worse = np.linalg.norm(r_new, axis=1) > (1 - 1e-4 * lam) * rn
            worse &= rn > 1e-14
            if not worse.any():
                break
            lam = np.where(worse, 0.5 * lam, lam)
        p, mu, r = p_new, mu_new, r_new
    else:
        raise GeometryError("closest-point Newton did not converge in %d iterations" % max_iter)
    return _out(p, single)


def coefficient_A(s):
    """Diffusion coefficient 1 - exp(-s^2/4) / 2, with values in [1/2, 1)."""
    s = np.asarray(s, dtype=float)
    return 1.0 - 0.5 * np.exp(-0.25 * s * s)


def coefficient_A_prime(s):
    s = np.asarray(s, dtype=float)
    return 0.25 * s * np.exp(-0.25 * s * s)


def exact_solution(x, t: float):
    p, single = _as_points(x)
    return _out(np.exp(-6.0 * t) * p[:, 0] * p[:, 1], single)


def exact_solution_gradient(x, t: float):
    """Ambient gradient of e^{-6t} x1 x2."""
    p, single = _as_points(x)
    e = np.exp(-6.0 * t)
    g = np.stack([e * p[:, 1], e * p[:, 0], np.zeros(len(p))], axis=1)
    return _out(g, single)


def exact_solution_surface_gradient(spec: SurfaceSpec, x, t: float):
    p, single = _as_points(x)
    nu, _ = _normal_curvature(spec, p, t)
    g = exact_solution_gradient(p, t)
    g = g - np.sum(g * nu, axis=1)[:, None] * nu
    return _out(g, single)


_XY_HESSIAN = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def surface_operators(spec: SurfaceSpec, p: np.ndarray, t: float, grad_u: np.ndarray, hess_u: np.ndarray):
    """Surface gradient and Laplace-Beltrami of a function given by its ambient
    gradient ``(n, 3)`` and Hessian ``(n, 3, 3)`` (or a shared ``(3, 3)``).

    Returns ``(surface_gradient, laplace_beltrami, normal)``.
    """
    nu, H = _normal_curvature(spec, p, t)
    nu_grad = np.sum(nu * grad_u, axis=1)
    sgrad = grad_u - nu_grad[:, None] * nu
    hess_u = np.asarray(hess_u, dtype=float)
    if hess_u.ndim == 2:
        trace = np.trace(hess_u)
        nHn = np.sum((nu @ hess_u) * nu, axis=1)
    else:
        trace = np.trace(hess_u, axis1=1, axis2=2)
        nHn = np.sum(np.matmul(hess_u, nu[:, :, None])[:, :, 0] * nu, axis=1)
    return sgrad, trace - nHn - H * nu_grad, nu


def manufactured_rhs_f(
    spec: SurfaceSpec,
    x,
    t: float,
    coeff: Callable = coefficient_A,
    coeff_prime: Callable = coefficient_A_prime,
):
    """Right-hand side making e^{-6t} x1 x2 solve the quasilinear problem
    ``d*u + u div_G v - div_G(A(u) grad_G u) = f``."""
    p, single = _as_points(x)
    e = np.exp(-6.0 * t)
    u = e * p[:, 0] * p[:, 1]
    grad_u = exact_solution_gradient(p, t)
    sgrad, lap, nu = surface_operators(spec, p, t, grad_u, e * _XY_HESSIAN)
    # v = c x1 e1 has ambient Jacobian c e1 e1^T
    c = spec.a_prime(t) / (2.0 * spec.a(t))
    div_v = c * (1.0 - nu[:, 0] ** 2)
    mat_u = -6.0 * u + c * p[:, 0] * grad_u[:, 0]
    diffusion = coeff(u) * lap + coeff_prime(u) * np.sum(sgrad * sgrad, axis=1)
    return _out(mat_u + u * div_v - diffusion, single)


def _zero_field(x, t):
    p, single = _as_points(x)
    return _out(np.zeros(len(p)), single)


def _zero_vector_field(spec, x, t):
    p, single = _as_points(x)
    return _out(np.zeros_like(p), single)


@dataclass(frozen=True)
class ProblemDefinition:
    """Coefficient, forcing and exact solution of a quasilinear surface problem.

    ``rhs`` and ``exact`` take ``(x, t)`` with ``x`` an ``(n, 3)`` array;
    ``exact_surface_gradient`` takes ``(spec, x, t)``.
    """

    spec: SurfaceSpec = field(default_factory=SurfaceSpec)
    coeff: Callable = coefficient_A
    coeff_prime: Callable = coefficient_A_prime
    rhs: Callable | None = None
    exact: Callable = exact_solution
    exact_surface_gradient: Callable = exact_solution_surface_gradient

    def f(self, x, t: float):
        if self.rhs is None:
            return manufactured_rhs_f(self.spec, x, t, self.coeff, self.coeff_prime)
        return self.rhs(x, t)

    def initial_value(self, x):
        return self.exact(x, 0.0)


def paper_problem(spec: SurfaceSpec | None = None) -> ProblemDefinition:
    return ProblemDefinition(spec=spec or SurfaceSpec())


def zero_problem(spec: SurfaceSpec | None = None, coeff: Callable = coefficient_A,
                 coeff_prime: Callable = coefficient_A_prime) -> ProblemDefinition:
    """Zero forcing and zero exact solution."""
    return ProblemDefinition(
        spec=spec or SurfaceSpec(),
        coeff=coeff,
        coeff_prime=coeff_prime,
        rhs=_zero_field,
        exact=_zero_field,
        exact_surface_gradient=_zero_vector_field,
    )
