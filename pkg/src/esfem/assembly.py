"""Piecewise-linear evolving surface finite element assembly.

Every operator shares the sparsity pattern of its mesh topology, so element
matrices are scattered with ``np.bincount``: contributions to one CSR slot are
summed in element order, which makes assembly bit-reproducible.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .geometry import ProblemDefinition, closest_point, coefficient_A, coefficient_A_prime
from .linalg import SparseMatrixCSR
from .mesh import EvolvingMesh, MeshError, TriMesh

__all__ = [
    "QuadratureRule",
    "EDGE_MIDPOINT",
    "DUNAVANT4",
    "CENTROID",
    "ElementGeometry",
    "element_geometry",
    "assemble_mass",
    "assemble_stiffness_linear",
    "assemble_stiffness_nonlinear",
    "assemble_newton_correction",
    "assemble_load",
    "assemble_gform",
    "discrete_norm_M",
    "discrete_norm_A",
    "nodal_interpolant",
    "EsfemSystem",
    "FemOperators",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights (summing to one) on a triangle."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-14:
            raise ValueError("quadrature weights must be positive and sum to 1")

    def __len__(self):
        return len(self.weights)


CENTROID = QuadratureRule([[1 / 3, 1 / 3, 1 / 3]], [1.0], degree=1)

EDGE_MIDPOINT = QuadratureRule(
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]],
    [1 / 3, 1 / 3, 1 / 3],
    degree=2,
)


def _dunavant4():
    a1, w1 = 0.44594849091596488632, 0.22338158967801146570
    a2, w2 = 0.09157621350977074346, 0.10995174365532186764
    pts, wts = [], []
    for a, w in ((a1, w1), (a2, w2)):
        b = 1.0 - 2.0 * a
        pts += [[b, a, a], [a, b, a], [a, a, b]]
        wts += [w] * 3
    wts = np.array(wts)
    return QuadratureRule(pts, wts / wts.sum(), degree=4)


DUNAVANT4 = _dunavant4()


@dataclass(frozen=True)
class ElementGeometry:
    """Areas ``(F,)`` and tangential P1 basis gradients ``(F, 3, 3)``
    indexed as [element, local vertex, component]."""

    areas: np.ndarray
    grads: np.ndarray

    @cached_property
    def grad_products(self) -> np.ndarray:
        """``(F, 3, 3)`` matrix of grad lambda_i . grad lambda_j."""
        g = self.grads
        return (g[:, :, None, 0] * g[:, None, :, 0] + g[:, :, None, 1] * g[:, None, :, 1]
                + g[:, :, None, 2] * g[:, None, :, 2])


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def element_geometry(mesh: TriMesh) -> ElementGeometry:
    p = mesh.vertices[mesh.triangles]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    g11 = _dot(e1, e1)
    g12 = _dot(e1, e2)
    g22 = _dot(e2, e2)
    det = g11 * g22 - g12 * g12
    if np.any(det <= 0):
        raise MeshError("degenerate triangle")
    # gradients of barycentric coordinates 1, 2 via the inverse metric
    d1 = (g22[:, None] * e1 - g12[:, None] * e2) / det[:, None]
    d2 = (g11[:, None] * e2 - g12[:, None] * e1) / det[:, None]
    grads = np.stack([-d1 - d2, d1, d2], axis=1)
    return ElementGeometry(0.5 * np.sqrt(det), grads)


def _scatter(mesh: TriMesh, local: np.ndarray) -> SparseMatrixCSR:
    top = mesh.topology
    n = mesh.n_vertices
    values = np.bincount(top.scatter, weights=local.reshape(-1), minlength=len(top.indices))
    return SparseMatrixCSR(n, n, top.indptr, top.indices, values)


_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


def assemble_mass(mesh: TriMesh, geo: ElementGeometry | None = None) -> SparseMatrixCSR:
    geo = geo or element_geometry(mesh)
    return _scatter(mesh, geo.areas[:, None, None] * _MASS_REF)


def assemble_stiffness_linear(mesh: TriMesh, geo: ElementGeometry | None = None) -> SparseMatrixCSR:
    geo = geo or element_geometry(mesh)
    return _scatter(mesh, geo.areas[:, None, None] * geo.grad_products)


def _check_nodal(mesh: TriMesh, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (mesh.n_vertices,):
        raise ValueError(f"nodal vector has shape {alpha.shape}, expected ({mesh.n_vertices},)")
    return alpha


def assemble_stiffness_nonlinear(
    mesh: TriMesh,
    alpha,
    coeff: Callable = coefficient_A,
    rule: QuadratureRule = EDGE_MIDPOINT,
    geo: ElementGeometry | None = None,
) -> SparseMatrixCSR:
    """Stiffness matrix weighted by coeff(U_h) at quadrature points."""
    alpha = _check_nodal(mesh, alpha)
    geo = geo or element_geometry(mesh)
    uq = alpha[mesh.triangles] @ rule.points.T
    weight = geo.areas * (coeff(uq) @ rule.weights)
    return _scatter(mesh, weight[:, None, None] * geo.grad_products)


def assemble_newton_correction(
    mesh: TriMesh,
    alpha,
    coeff_prime: Callable = coefficient_A_prime,
    rule: QuadratureRule = EDGE_MIDPOINT,
    geo: ElementGeometry | None = None,
) -> SparseMatrixCSR:
    """N[k, j] = int coeff'(U_h) chi_j (grad U_h . grad chi_k).

    ``A(alpha) + N(alpha)`` is the Jacobian of ``alpha -> A(alpha) alpha``.
    """
    alpha = _check_nodal(mesh, alpha)
    geo = geo or element_geometry(mesh)
    nodal = alpha[mesh.triangles]
    uq = nodal @ rule.points.T
    grad_u = (nodal[:, :, None] * geo.grads).sum(axis=1)
    flux = _dot(grad_u[:, None, :], geo.grads)
    # int coeff'(U_h) lambda_j over each element
    moment = (coeff_prime(uq) * rule.weights) @ rule.points
    local = geo.areas[:, None, None] * flux[:, :, None] * moment[:, None, :]
    return _scatter(mesh, local)


def assemble_load(
    mesh: TriMesh,
    f: Callable,
    t: float,
    rule: QuadratureRule = DUNAVANT4,
    geo: ElementGeometry | None = None,
    lift_spec=None,
) -> np.ndarray:
    """b[k] = sum_E |E| sum_q w_q f(x_q, t) lambda_k(x_q).

    With ``lift_spec`` set, f is evaluated at the closest points on Gamma(t)
    of the planar quadrature nodes.
    """
    geo = geo or element_geometry(mesh)
    p = mesh.vertices[mesh.triangles]
    xq = np.tensordot(rule.points, p, axes=(1, 1)).transpose(1, 0, 2).reshape(-1, 3)
    if lift_spec is not None:
        xq = closest_point(lift_spec, xq, t)
    fq = np.asarray(f(xq, t), dtype=float).reshape(len(p), len(rule))
    local = geo.areas[:, None] * ((fq * rule.weights) @ rule.points)
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def assemble_gform(mesh: TriMesh, velocity, geo: ElementGeometry | None = None) -> SparseMatrixCSR:
    """Mass matrix weighted by the elementwise surface divergence of the
    interpolated nodal velocity ``(V, 3)`` (or flat ``3V``)."""
    V = np.asarray(velocity, dtype=float)
    if V.size != 3 * mesh.n_vertices:
        raise ValueError(f"velocity has {V.size} entries, expected {3 * mesh.n_vertices}")
    V = V.reshape(mesh.n_vertices, 3)
    geo = geo or element_geometry(mesh)
    div = _dot(V[mesh.triangles], geo.grads).sum(axis=1)
    return _scatter(mesh, (geo.areas * div)[:, None, None] * _MASS_REF)


def _quadratic_norm(A: SparseMatrixCSR, z) -> float:
    z = np.asarray(z, dtype=float)
    q = float(z @ (A @ z))
    scale = float(np.abs(z) @ (np.abs(A.scipy) @ np.abs(z)))
    if q < -1e-12 * max(scale, 1e-300):
        raise ValueError(f"negative quadratic form {q:.3e}; operator is not positive semi-definite")
    return float(np.sqrt(max(q, 0.0)))


def discrete_norm_M(M: SparseMatrixCSR, z) -> float:
    return _quadratic_norm(M, z)


def discrete_norm_A(S: SparseMatrixCSR, z) -> float:
    return _quadratic_norm(S, z)


def nodal_interpolant(mesh: TriMesh, func: Callable, t: float) -> np.ndarray:
    return np.asarray(func(mesh.vertices, t), dtype=float).reshape(mesh.n_vertices)


@dataclass(frozen=True)
class FemOperators:
    M: SparseMatrixCSR
    S: SparseMatrixCSR
    t: float


class EsfemSystem:
    """The ODE system d/dt(M(t) alpha) + A(alpha; t) alpha = b(t) on an evolving mesh.

    Operators at a given time are reassembled on demand and the
    solution-independent ones (mass, linear stiffness, load) are kept in a
    small LRU cache, since stage and Newton loops revisit the same times.
    """

    def __init__(
        self,
        emesh: EvolvingMesh,
        problem: ProblemDefinition,
        lift_quadrature: bool = False,
        rule: QuadratureRule = EDGE_MIDPOINT,
        load_rule: QuadratureRule = DUNAVANT4,
        cache_size: int = 16,
    ):
        self.emesh = emesh
        self.problem = problem
        self.lift_quadrature = lift_quadrature
        self.rule = rule
        self.load_rule = load_rule
        self._cache: OrderedDict[float, dict] = OrderedDict()
        self._cache_size = cache_size

    @property
    def n(self) -> int:
        return self.emesh.n_vertices

    def _slot(self, t: float) -> dict:
        t = float(t)
        slot = self._cache.get(t)
        if slot is None:
            mesh = self.emesh.at(t)
            slot = {"mesh": mesh, "geo": element_geometry(mesh)}
            self._cache[t] = slot
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(t)
        return slot

    def mesh(self, t: float) -> TriMesh:
        return self._slot(t)["mesh"]

    def geometry(self, t: float) -> ElementGeometry:
        return self._slot(t)["geo"]

    def mass(self, t: float) -> SparseMatrixCSR:
        slot = self._slot(t)
        if "M" not in slot:
            slot["M"] = assemble_mass(slot["mesh"], slot["geo"])
        return slot["M"]

    def stiffness(self, t: float) -> SparseMatrixCSR:
        slot = self._slot(t)
        if "S" not in slot:
            slot["S"] = assemble_stiffness_linear(slot["mesh"], slot["geo"])
        return slot["S"]

    def operators(self, t: float) -> FemOperators:
        return FemOperators(self.mass(t), self.stiffness(t), float(t))

    def load(self, t: float) -> np.ndarray:
        slot = self._slot(t)
        if "b" not in slot:
            lift = self.problem.spec if self.lift_quadrature else None
            slot["b"] = assemble_load(slot["mesh"], self.problem.f, t, self.load_rule, slot["geo"], lift)
        return slot["b"]

    def nonlinear_stiffness(self, t: float, alpha) -> SparseMatrixCSR:
        slot = self._slot(t)
        return assemble_stiffness_nonlinear(slot["mesh"], alpha, self.problem.coeff, self.rule, slot["geo"])

    def newton_correction(self, t: float, alpha) -> SparseMatrixCSR:
        slot = self._slot(t)
        return assemble_newton_correction(slot["mesh"], alpha, self.problem.coeff_prime, self.rule, slot["geo"])

    def gform(self, t: float) -> SparseMatrixCSR:
        slot = self._slot(t)
        return assemble_gform(slot["mesh"], self.emesh.velocities(t), slot["geo"])

    def interpolate(self, func: Callable, t: float) -> np.ndarray:
        return nodal_interpolant(self.mesh(t), func, t)

    def exact_nodal(self, t: float) -> np.ndarray:
        return self.interpolate(self.problem.exact, t)
