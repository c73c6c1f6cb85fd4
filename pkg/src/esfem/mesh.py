"""Icosphere triangulations of the reference surface and their evolution."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import SurfaceSpec, flow_map, level_set, material_velocity, normal_projection_curvature

__all__ = [
    "MeshError",
    "Topology",
    "TriMesh",
    "EvolvingMesh",
    "icosphere",
    "positions_at",
    "mesh_size_h",
    "admissibility_ratio",
    "triangle_areas",
    "write_mesh",
    "read_mesh",
    "MAX_LEVEL",
]

MAX_LEVEL = 8


class MeshError(ValueError):
    pass


class Topology:
    """Connectivity shared by every time slice of an evolving mesh.

    Holds the CSR sparsity pattern of P1 operators and the map that scatters
    the ``(F, 3, 3)`` element matrices into CSR value slots.
    """

    def __init__(self, triangles: np.ndarray, n_vertices: int):
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.n_vertices = int(n_vertices)

    @cached_property
    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def _pattern(self):
        n = self.n_vertices
        t = self.triangles
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        key = rows * n + cols
        uniq, scatter = np.unique(key, return_inverse=True)
        r, c = np.divmod(uniq, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        return np.cumsum(indptr), c.astype(np.int64), scatter.ravel()

    @property
    def indptr(self) -> np.ndarray:
        return self._pattern[0]

    @property
    def indices(self) -> np.ndarray:
        return self._pattern[1]

    @property
    def scatter(self) -> np.ndarray:
        return self._pattern[2]


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    level: int = 0
    topology: Topology | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))
        if self.topology is None:
            object.__setattr__(self, "topology", Topology(self.triangles, len(self.vertices)))
        object.__setattr__(self, "triangles", self.topology.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.topology.edges)

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        """Same connectivity, new node positions."""
        return TriMesh(vertices, self.triangles, self.level, self.topology)

    def is_closed_manifold(self) -> bool:
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def orientation_signs(self, spec: SurfaceSpec | None = None, t: float = 0.0) -> np.ndarray:
        """Sign of (p1-p0)x(p2-p0) . nu at each centroid (nu = radial if no spec)."""
        p = self.vertices[self.triangles]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        c = p.mean(axis=1)
        nu = c if spec is None else normal_projection_curvature(spec, c, t).normal
        return np.sign(np.einsum("ni,ni->n", n, nu))


def _icosahedron():
    g = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0],
            [0, -1, g], [0, 1, g], [0, -1, -g], [0, 1, -g],
            [g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _refine(v: np.ndarray, f: np.ndarray):
    n = len(v)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = v[uniq[:, 0]] + v[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    nf = len(f)
    m01, m12, m20 = inv[:nf] + n, inv[nf:2 * nf] + n, inv[2 * nf:] + n
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    new_f = np.concatenate(
        [
            np.stack([a, m01, m20], axis=1),
            np.stack([b, m12, m01], axis=1),
            np.stack([c, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return np.vstack([v, mid]), new_f


def icosphere(level: int) -> TriMesh:
    """Subdivided icosahedron on the unit sphere: 10*4^L + 2 vertices."""
    if not 0 <= level <= MAX_LEVEL:
        raise MeshError(f"level must be in [0, {MAX_LEVEL}], got {level}")
    v, f = _icosahedron()
    for _ in range(level):
        v, f = _refine(v, f)
    # exact unit length keeps reference vertices on the level set to rounding
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return TriMesh(v, f, level)


@dataclass(frozen=True, eq=False)
class EvolvingMesh:
    reference: TriMesh
    spec: SurfaceSpec = field(default_factory=SurfaceSpec)

    def __post_init__(self):
        off = np.abs(level_set(self.spec, self.reference.vertices, 0.0))
        if off.max() > 1e-12:
            raise MeshError(f"reference vertices not on Gamma(0): max |phi| = {off.max():.2e}")

    @property
    def n_vertices(self) -> int:
        return self.reference.n_vertices

    def at(self, t: float) -> TriMesh:
        return self.reference.with_vertices(positions_at(self, t))

    def velocities(self, t: float) -> np.ndarray:
        return material_velocity(self.spec, positions_at(self, t), t)


def positions_at(emesh: EvolvingMesh, t: float) -> np.ndarray:
    return flow_map(emesh.spec, emesh.reference.vertices, t, tol=1e-12)


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def _edge_lengths(mesh: TriMesh) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    return np.stack(
        [
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ],
        axis=1,
    )


def mesh_size_h(mesh: TriMesh) -> float:
    if np.any(triangle_areas(mesh) <= 0):
        raise MeshError("degenerate triangle")
    return float(_edge_lengths(mesh).max())


def admissibility_ratio(mesh: TriMesh) -> float:
    """min over triangles of inradius / h."""
    areas = triangle_areas(mesh)
    if np.any(areas <= 0):
        raise MeshError("degenerate triangle")
    lengths = _edge_lengths(mesh)
    inradius = 2.0 * areas / lengths.sum(axis=1)
    return float(inradius.min() / lengths.max())


def write_mesh(mesh: TriMesh, path) -> None:
    lines = ["ESFEM-MESH 1", f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += ["%.17g %.17g %.17g" % tuple(p) for p in mesh.vertices]
    lines += ["%d %d %d" % tuple(t) for t in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ESFEM-MESH 1":
        raise MeshError(f"{path}: missing 'ESFEM-MESH 1' header")
    nv, nf = (int(s) for s in lines[1].split())
    v = np.array([[float(s) for s in ln.split()] for ln in lines[2:2 + nv]]).reshape(nv, 3)
    f = np.array([[int(s) for s in ln.split()] for ln in lines[2 + nv:2 + nv + nf]], dtype=np.int64).reshape(nf, 3)
    return TriMesh(v, f)

