"""Triangulated closed-surface geometry: sphere generation, charts, file I/O.

The reference triangle used throughout is {(s, t) : 0 <= t <= s <= 1}; the
affine chart of a triangle with (permuted) vertices v0, v1, v2 is

    Phi(s, t) = v0 + s * (v1 - v0) + t * (v2 - v1),

so Phi(0,0) = v0, Phi(1,0) = v1, Phi(1,1) = v2, and the Gramian
sqrt(det(DPhi^T DPhi)) = |(v1 - v0) x (v2 - v1)| equals twice the triangle
area independently of the vertex permutation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_SPHERE_LEVEL = 12


class MeshError(ValueError):
    """Invalid or unsupported mesh input."""


@dataclass(frozen=True)
class AffineChart:
    origin: np.ndarray
    edge1: np.ndarray
    edge2: np.ndarray
    gramian: float

    def map_points(self, ref_points: np.ndarray) -> np.ndarray:
        """Map (n, 2) reference coordinates onto the triangle; returns (n, 3)."""
        s = ref_points[:, 0:1]
        t = ref_points[:, 1:2]
        return self.origin[None, :] + s * self.edge1[None, :] + t * self.edge2[None, :]


@dataclass(frozen=True)
class SurfaceMesh:
    """Indexed triangle mesh of a closed, consistently oriented surface.

    vertices: (nv, 3) float64, triangles: (nt, 3) int64 vertex indices,
    normals: (nt, 3) unit outward normals, gramians: (nt,) = 2 * area.
    Immutable after construction; safe to share across threads.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = field(repr=False)
    gramians: np.ndarray = field(repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def areas(self) -> np.ndarray:
        return 0.5 * self.gramians

    def midpoints(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        return (v[t[:, 0]] + v[t[:, 1]] + v[t[:, 2]]) / 3.0

    def triangle_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-triangle axis-aligned bounds (lo, hi), each (nt, 3)."""
        corners = self.vertices[self.triangles]  # (nt, 3, 3)
        return corners.min(axis=1), corners.max(axis=1)

    def diameter(self) -> float:
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))


def _chart_vectors(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """edge1/edge2/cross for per-triangle corner stacks of shape (..., 3, 3)."""
    v0 = vertices[..., 0, :]
    v1 = vertices[..., 1, :]
    v2 = vertices[..., 2, :]
    e1 = v1 - v0
    e2 = v2 - v1
    return e1, e2, np.cross(e1, e2)


def make_surface_mesh(vertices, triangles, validate: bool = True) -> SurfaceMesh:
    """Build a SurfaceMesh from raw arrays, computing normals and Gramians.

    Normals follow the stored vertex orientation, which must be consistent
    and outward for a closed surface; orientation is validated, not repaired.
    """
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError("vertices must have shape (nv, 3)")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError("triangles must have shape (nt, 3)")
    nv = vertices.shape[0]
    if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
        raise MeshError("triangle index out of range")
    if np.any(triangles[:, 0] == triangles[:, 1]) or \
       np.any(triangles[:, 1] == triangles[:, 2]) or \
       np.any(triangles[:, 0] == triangles[:, 2]):
        raise MeshError("degenerate triangle: repeated vertex index")

    corners = vertices[triangles]
    _, _, cr = _chart_vectors(corners)
    gram = np.linalg.norm(cr, axis=1)
    if np.any(gram <= 0.0):
        raise MeshError("zero-area triangle")
    normals = cr / gram[:, None]

    mesh = SurfaceMesh(vertices, triangles, normals, gram)
    if validate:
        _validate_closed_oriented(mesh)
    return mesh


def _validate_closed_oriented(mesh: SurfaceMesh) -> None:
    """Each directed edge must occur exactly once and oppose its twin."""
    t = mesh.triangles
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    directed = edges[:, 0] * np.int64(mesh.num_vertices) + edges[:, 1]
    if len(np.unique(directed)) != len(directed):
        raise MeshError("surface not consistently oriented: repeated directed edge")
    reversed_ = edges[:, 1] * np.int64(mesh.num_vertices) + edges[:, 0]
    if not np.array_equal(np.sort(directed), np.sort(reversed_)):
        raise MeshError("surface not closed: unmatched edge")
    # outwardness: signed enclosed volume must be positive
    corners = mesh.vertices[t]
    vol = np.sum(np.einsum("ij,ij->i", corners[:, 0],
                           np.cross(corners[:, 1], corners[:, 2]))) / 6.0
    if vol <= 0.0:
        raise MeshError("normals do not point outward (non-positive enclosed volume)")


def build_sphere_mesh(level: int) -> SurfaceMesh:
    """Octahedron-based subdivision sphere with nt = 8 * 4**level triangles.

    New vertices are edge midpoints (deduplicated by index pairs, not by
    coordinates) projected radially onto the unit sphere.
    """
    if level < 0:
        raise MeshError("level must be nonnegative")
    if level > MAX_SPHERE_LEVEL:
        raise MeshError(
            f"level {level} exceeds the maximum of {MAX_SPHERE_LEVEL} "
            f"({8 * 4 ** MAX_SPHERE_LEVEL} triangles)")

    vertices = [
        (1.0, 0.0, 0.0), (-1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0), (0.0, -1.0, 0.0),
        (0.0, 0.0, 1.0), (0.0, 0.0, -1.0),
    ]
    vertices = [np.array(v) for v in vertices]
    # outward (counter-clockwise seen from outside) octahedron faces
    triangles = [
        (0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4),
        (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5),
    ]

    for _ in range(level):
        midpoint_index: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            idx = midpoint_index.get(key)
            if idx is None:
                m = vertices[i] + vertices[j]
                m /= np.linalg.norm(m)
                idx = len(vertices)
                vertices.append(m)
                midpoint_index[key] = idx
            return idx

        refined = []
        for a, b, c in triangles:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            refined += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        triangles = refined

    return make_surface_mesh(np.array(vertices), np.array(triangles))


def chart(mesh: SurfaceMesh, tri: int, perm: tuple[int, int, int] = (0, 1, 2)) -> AffineChart:
    """Affine chart of triangle `tri` with vertices taken in order `perm`."""
    if not 0 <= tri < mesh.num_triangles:
        raise IndexError(f"triangle index {tri} out of range")
    if sorted(perm) != [0, 1, 2]:
        raise ValueError(f"perm must be a permutation of (0, 1, 2), got {perm}")
    idx = mesh.triangles[tri]
    v0 = mesh.vertices[idx[perm[0]]]
    v1 = mesh.vertices[idx[perm[1]]]
    v2 = mesh.vertices[idx[perm[2]]]
    e1 = v1 - v0
    e2 = v2 - v1
    return AffineChart(v0, e1, e2, float(mesh.gramians[tri]))


def chart_arrays(mesh: SurfaceMesh, tris: np.ndarray,
                 perms: np.ndarray | None = None):
    """Vectorized charts: (origins, edge1s, edge2s, gramians) for many triangles.

    perms, if given, is (n, 3) with one vertex permutation per triangle.
    """
    tris = np.asarray(tris, dtype=np.int64)
    idx = mesh.triangles[tris]  # (n, 3)
    if perms is not None:
        perms = np.asarray(perms, dtype=np.int64)
        idx = np.take_along_axis(idx, perms, axis=1)
    v = mesh.vertices
    v0 = v[idx[:, 0]]
    e1 = v[idx[:, 1]] - v0
    e2 = v[idx[:, 2]] - v[idx[:, 1]]
    return v0, e1, e2, mesh.gramians[tris]


def write_mesh(mesh: SurfaceMesh, path) -> None:
    """ASCII interchange format: 'nv nt', nv vertex lines, nt 0-based index lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.num_vertices} {mesh.num_triangles}\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"{t[0]} {t[1]} {t[2]}\n")


def read_mesh(path) -> SurfaceMesh:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise MeshError("mesh file too short")
    nv, nt = int(tokens[0]), int(tokens[1])
    need = 2 + 3 * nv + 3 * nt
    if len(tokens) != need:
        raise MeshError(f"mesh file has {len(tokens)} fields, expected {need}")
    vals = tokens[2:]
    vertices = np.array(vals[: 3 * nv], dtype=np.float64).reshape(nv, 3)
    triangles = np.array(vals[3 * nv:], dtype=np.int64).reshape(nt, 3)
    return make_surface_mesh(vertices, triangles)
