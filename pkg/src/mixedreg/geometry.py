"""Triangulated planar domains with piecewise-linear boundary loops.

Meshes are value objects: ``refine`` returns a new mesh and never mutates
its input, so meshes can be shared freely across solver calls.  Supported
analytic presets are the unit disk and an axis-aligned ellipse; boundary
vertices of preset meshes always lie exactly on the analytic curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "build_disk_mesh",
    "build_ellipse_mesh",
    "mesh_from_arrays",
    "refine",
    "boundary_geodesic_gap",
]

MAX_LEVEL = 10

ELLIPSE_A = 1.5
ELLIPSE_B = 1.0


class MeshError(ValueError):
    """Raised for invalid mesh construction requests."""


def _curve_point(preset: str, theta: np.ndarray) -> np.ndarray:
    """Point on the analytic boundary curve at parameter angle theta."""
    if preset == "disk":
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if preset == "ellipse":
        return np.stack([ELLIPSE_A * np.cos(theta), ELLIPSE_B * np.sin(theta)], axis=-1)
    raise MeshError(f"unknown boundary preset {preset!r}")


@dataclass
class Mesh:
    """Conforming triangulation with an oriented closed boundary loop.

    Attributes
    ----------
    vertices : (n, 2) float array
    triangles : (T, 3) int array, counterclockwise vertex ordering
    boundary_loop : (nb,) int array
        Boundary vertex indices in counterclockwise loop order; edge k
        joins ``boundary_loop[k]`` to ``boundary_loop[(k+1) % nb]``.
    refinement_level : int
    preset : str or None
        Analytic curve the boundary vertices lie on ("disk", "ellipse"),
        or None for hand-built meshes (refinement then uses chord midpoints).
    boundary_params : (nb,) float array or None
        Curve parameter of each boundary vertex for preset meshes.
    parents : (n, 2) int array or None
        For refined meshes, the coarse vertices each fine vertex was
        derived from (i == parents[i, 0] == parents[i, 1] for carried-over
        vertices).  Used for nodal prolongation in warm starts.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loop: np.ndarray
    refinement_level: int = 0
    preset: str | None = None
    boundary_params: np.ndarray | None = None
    parents: np.ndarray | None = None

    boundary_edges: np.ndarray = field(init=False)
    boundary_normals: np.ndarray = field(init=False)
    boundary_edge_lengths: np.ndarray = field(init=False)
    boundary_weights: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary_loop = np.ascontiguousarray(self.boundary_loop, dtype=np.int64)

        loop = self.boundary_loop
        self.boundary_edges = np.stack([loop, np.roll(loop, -1)], axis=1)
        tang = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        self.boundary_edge_lengths = np.linalg.norm(tang, axis=1)
        # outward normal of a CCW loop: tangent rotated by -90 degrees
        self.boundary_normals = (
            np.stack([tang[:, 1], -tang[:, 0]], axis=1) / self.boundary_edge_lengths[:, None]
        )
        # trapezoidal arc weights: half the length of each incident edge
        lens = self.boundary_edge_lengths
        self.boundary_weights = 0.5 * (lens + np.roll(lens, 1))
        self._validate()

    def _validate(self) -> None:
        if np.any(self.triangle_areas() <= 0.0):
            bad = int(np.argmin(self.triangle_areas()))
            raise MeshError(f"triangle {bad} has non-positive signed area")
        edges = self._undirected_edge_counts()
        boundary_set = {tuple(sorted(e)) for e in self.boundary_edges}
        for e, cnt in edges.items():
            if cnt == 1 and e not in boundary_set:
                raise MeshError(f"boundary edge {e} missing from the loop")
            if cnt > 2:
                raise MeshError(f"edge {e} shared by more than two triangles")
        if len(boundary_set) != len(self.boundary_edges):
            raise MeshError("boundary loop repeats an edge")
        if self.preset is not None:
            centroid = self.vertices.mean(axis=0)
            mids = 0.5 * (
                self.vertices[self.boundary_edges[:, 0]] + self.vertices[self.boundary_edges[:, 1]]
            )
            if np.any(np.einsum("ij,ij->i", mids - centroid, self.boundary_normals) <= 0.0):
                raise MeshError("boundary normal points inward")

    def _undirected_edge_counts(self) -> dict:
        counts: dict = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(min(a, b)), int(max(a, b)))
                counts[key] = counts.get(key, 0) + 1
        return counts

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.boundary_loop.shape[0]

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(np.sum(self.triangle_areas()))

    def perimeter(self) -> float:
        return float(np.sum(self.boundary_edge_lengths))

    def mesh_size(self) -> float:
        """Longest triangle edge."""
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return float(np.max(np.linalg.norm(e, axis=2)))

    def boundary_positions(self) -> np.ndarray:
        """Loop position of every vertex (-1 for interior vertices)."""
        pos = np.full(self.n_vertices, -1, dtype=np.int64)
        pos[self.boundary_loop] = np.arange(self.n_boundary)
        return pos


def _fan_mesh(preset: str, level: int) -> Mesh:
    thetas = 2.0 * np.pi * np.arange(8) / 8.0
    ring = _curve_point(preset, thetas)
    vertices = np.vstack([[0.0, 0.0], ring])
    tris = np.array([[0, 1 + k, 1 + (k + 1) % 8] for k in range(8)], dtype=np.int64)
    mesh = Mesh(
        vertices=vertices,
        triangles=tris,
        boundary_loop=np.arange(1, 9, dtype=np.int64),
        refinement_level=0,
        preset=preset,
        boundary_params=thetas,
    )
    for _ in range(level):
        mesh = refine(mesh)
    return mesh


def build_disk_mesh(level: int) -> Mesh:
    """Uniform triangulation of the unit disk with 8 * 2**level boundary edges.

    Level 0 is a fan of 8 triangles around the origin; each refinement
    splits every triangle in four and snaps new boundary vertices onto
    the unit circle.
    """
    if not 0 <= level <= MAX_LEVEL:
        raise MeshError(f"level must lie in [0, {MAX_LEVEL}], got {level}")
    return _fan_mesh("disk", level)


def build_ellipse_mesh(level: int) -> Mesh:
    """Uniform triangulation of the ellipse with semi-axes 1.5 and 1.0."""
    if not 0 <= level <= MAX_LEVEL:
        raise MeshError(f"level must lie in [0, {MAX_LEVEL}], got {level}")
    return _fan_mesh("ellipse", level)


def refine(mesh: Mesh) -> Mesh:
    """Split every triangle in four, returning a new conforming mesh.

    New boundary vertices of preset meshes are placed on the analytic
    curve at the parameter midpoint of their edge; hand-built meshes use
    chord midpoints.
    """
    nv = mesh.n_vertices
    pos = mesh.boundary_positions()
    params = mesh.boundary_params

    new_vertices = [mesh.vertices]
    new_params: dict[int, float] = {}
    midpoint_of: dict[tuple, int] = {}
    parent_rows = [np.stack([np.arange(nv), np.arange(nv)], axis=1)]

    boundary_pairs = {tuple(sorted(e)): k for k, e in enumerate(mesh.boundary_edges)}
    extra = []

    def midpoint(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        idx = midpoint_of.get(key)
        if idx is not None:
            return idx
        idx = nv + len(extra)
        if key in boundary_pairs and mesh.preset is not None:
            ta = params[pos[key[0]]]
            tb = params[pos[key[1]]]
            delta = (tb - ta) % (2.0 * np.pi)
            if delta > np.pi:
                ta, tb = tb, ta
                delta = (tb - ta) % (2.0 * np.pi)
            tm = (ta + 0.5 * delta) % (2.0 * np.pi)
            extra.append(_curve_point(mesh.preset, np.asarray(tm)))
            new_params[idx] = float(tm)
        else:
            extra.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        midpoint_of[key] = idx
        parent_rows.append(np.array([[a, b]]))
        return idx

    tris = []
    for a, b, c in mesh.triangles:
        mab, mbc, mca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris.extend([[a, mab, mca], [b, mbc, mab], [c, mca, mbc], [mab, mbc, mca]])

    vertices = np.vstack(new_vertices + [np.array(extra)])
    loop = []
    loop_params = []
    for k in range(mesh.n_boundary):
        a = int(mesh.boundary_loop[k])
        b = int(mesh.boundary_loop[(k + 1) % mesh.n_boundary])
        m = midpoint_of[(min(a, b), max(a, b))]
        loop.extend([a, m])
        if params is not None:
            loop_params.extend([float(params[pos[a]]), new_params[m]])

    return Mesh(
        vertices=vertices,
        triangles=np.asarray(tris, dtype=np.int64),
        boundary_loop=np.asarray(loop, dtype=np.int64),
        refinement_level=mesh.refinement_level + 1,
        preset=mesh.preset,
        boundary_params=np.asarray(loop_params) if params is not None else None,
        parents=np.vstack(parent_rows).astype(np.int64),
    )


def mesh_from_arrays(vertices: np.ndarray, triangles: np.ndarray) -> Mesh:
    """Build a mesh from raw arrays, deriving the boundary loop.

    Triangles are reoriented counterclockwise if needed.  Intended for
    hand-built test geometries; preset builders should be used for the
    analytic domains.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64).copy()
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    flip = signed < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    counts: dict = {}
    directed: dict = {}
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (int(min(a, b)), int(max(a, b)))
            counts[key] = counts.get(key, 0) + 1
            directed[key] = (int(a), int(b))
    # boundary edges appear in exactly one triangle; walk them into a loop
    succ = {}
    for key, cnt in counts.items():
        if cnt == 1:
            a, b = directed[key]
            succ[a] = b
    if not succ:
        raise MeshError("mesh has no boundary")
    start = min(succ)
    loop = [start]
    while True:
        nxt = succ.get(loop[-1])
        if nxt is None:
            raise MeshError("boundary walk broke; non-manifold boundary")
        if nxt == start:
            break
        loop.append(nxt)
        if len(loop) > len(succ):
            raise MeshError("boundary is not a single closed loop")
    if len(loop) != len(succ):
        raise MeshError("boundary is not a single closed loop")
    return Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_loop=np.asarray(loop, dtype=np.int64),
    )


def boundary_geodesic_gap(mesh: Mesh, i: int, j: int) -> float:
    """Chordal distance between two boundary vertices (global indices).

    The chordal metric is used consistently for all boundary pair
    separations, including the fractional-seminorm kernels.
    """
    pos = mesh.boundary_positions()
    for idx in (i, j):
        if not 0 <= idx < mesh.n_vertices or pos[idx] < 0:
            raise MeshError(f"vertex {idx} is not a boundary vertex")
    return float(np.linalg.norm(mesh.vertices[i] - mesh.vertices[j]))
