"""Conforming triangle meshes with newest-vertex bisection refinement.

Meshes are immutable after construction; refinement returns a new mesh.
Local edge convention: edge ``i`` of a triangle is the edge opposite its
local vertex ``i``, i.e. between local vertices ``(i+1)%3`` and ``(i+2)%3``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshError(Exception):
    """Invalid topology or degenerate geometry."""


@dataclass(frozen=True)
class Vertex:
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class Triangle:
    """Counterclockwise triangle. ``h`` is the diameter (longest edge)."""

    id: int
    vertices: tuple[int, int, int]
    refinement_edge: int
    facets: tuple[int, int, int]
    h: float
    area: float


@dataclass(frozen=True)
class Facet:
    """Edge of the triangulation.

    ``elements`` lists adjacent triangles in ascending id order; the facet
    normal is the outward normal of ``elements[0]``.  Jumps across the facet
    are taken first-minus-second; on boundary facets the jump is the trace.
    """

    id: int
    vertices: tuple[int, int]
    elements: tuple[int, ...]
    normal: tuple[float, float]
    length: float
    is_boundary: bool


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class Mesh:
    """Conforming triangulation built from vertex coordinates and CCW triples."""

    def __init__(self, coords, triangles, refinement_edges, generation: int = 0):
        coords = np.asarray(coords, dtype=float)
        tris = np.asarray(triangles, dtype=np.int64)
        refs = np.asarray(refinement_edges, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise MeshError("coords must be (nv, 2)")
        if not np.all(np.isfinite(coords)):
            raise MeshError("non-finite vertex coordinates")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("triangles must be (nt, 3)")
        if refs.shape != (tris.shape[0],) or np.any((refs < 0) | (refs > 2)):
            raise MeshError("refinement edges must be local indices 0..2")

        p = coords[tris]  # (nt, 3, 2)
        cross = _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        if np.any(cross <= 0.0):
            bad = int(np.argmax(cross <= 0.0))
            raise MeshError(f"triangle {bad} is not counterclockwise or degenerate")

        self.coords = coords
        self.tris = tris
        self.refinement_edges = refs
        self.generation = generation
        self._build_facets()

    # -- construction ---------------------------------------------------

    def _build_facets(self):
        adjacency: dict[tuple[int, int], list[tuple[int, int]]] = {}
        for t in range(self.n_triangles):
            v = self.tris[t]
            for i in range(3):
                key = _edge_key(int(v[(i + 1) % 3]), int(v[(i + 2) % 3]))
                adjacency.setdefault(key, []).append((t, i))

        n_facets = len(adjacency)
        facet_nodes = np.empty((n_facets, 2), dtype=np.int64)
        facet_elems = np.full((n_facets, 2), -1, dtype=np.int64)
        facet_local = np.full((n_facets, 2), -1, dtype=np.int64)
        tri_facets = np.empty((self.n_triangles, 3), dtype=np.int64)

        for fid, key in enumerate(sorted(adjacency)):
            sides = sorted(adjacency[key])
            if len(sides) > 2:
                raise MeshError(f"edge {key} shared by more than two triangles")
            facet_nodes[fid] = key
            for col, (t, i) in enumerate(sides):
                facet_elems[fid, col] = t
                facet_local[fid, col] = i
                tri_facets[t, i] = fid

        self.facet_nodes = facet_nodes
        self.facet_elems = facet_elems
        self.facet_local = facet_local
        self.tri_facets = tri_facets
        self.is_boundary_facet = facet_elems[:, 1] < 0

    # -- sizes ------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return self.coords.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.tris.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facet_nodes.shape[0]

    # -- cached geometry ----------------------------------------------------

    @cached_property
    def tri_coords(self):
        """Vertex coordinates per triangle, shape (nt, 3, 2)."""
        return self.coords[self.tris]

    @cached_property
    def areas(self):
        p = self.tri_coords
        return 0.5 * _cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def edge_lengths(self):
        """Length of local edge i (opposite vertex i), shape (nt, 3)."""
        p = self.tri_coords
        out = np.empty((self.n_triangles, 3))
        for i in range(3):
            d = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            out[:, i] = np.hypot(d[:, 0], d[:, 1])
        return out

    @cached_property
    def h(self):
        """Triangle diameters h_T."""
        return self.edge_lengths.max(axis=1)

    @cached_property
    def grad_bary(self):
        """Gradients of the three barycentric coordinates, shape (nt, 3, 2)."""
        p = self.tri_coords
        out = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            out[:, i, 0] = -e[:, 1]
            out[:, i, 1] = e[:, 0]
        return out / (2.0 * self.areas)[:, None, None]

    @cached_property
    def outward_normals(self):
        """Unit outward normal on local edge i, shape (nt, 3, 2)."""
        p = self.tri_coords
        out = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
            out[:, i, 0] = e[:, 1]
            out[:, i, 1] = -e[:, 0]
        return out / self.edge_lengths[:, :, None]

    @cached_property
    def facet_lengths(self):
        d = self.coords[self.facet_nodes[:, 1]] - self.coords[self.facet_nodes[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def facet_normals(self):
        """Canonical facet normal = outward normal of the first adjacent element."""
        t = self.facet_elems[:, 0]
        i = self.facet_local[:, 0]
        return self.outward_normals[t, i]

    @cached_property
    def facet_sign(self):
        """+1 where the element's outward normal equals the facet normal, (nt, 3)."""
        sign = np.full((self.n_triangles, 3), -1.0)
        t0 = self.facet_elems[:, 0]
        i0 = self.facet_local[:, 0]
        sign[t0, i0] = 1.0
        return sign

    @cached_property
    def is_boundary_vertex(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.facet_nodes[self.is_boundary_facet].ravel()] = True
        return mask

    @cached_property
    def interior_vertices(self):
        return np.nonzero(~self.is_boundary_vertex)[0]

    @property
    def n_interior_vertices(self) -> int:
        return int(self.interior_vertices.size)

    # -- object views -----------------------------------------------------

    def vertex(self, i: int) -> Vertex:
        return Vertex(i, float(self.coords[i, 0]), float(self.coords[i, 1]))

    def triangle(self, t: int) -> Triangle:
        return Triangle(
            t,
            tuple(int(v) for v in self.tris[t]),
            int(self.refinement_edges[t]),
            tuple(int(f) for f in self.tri_facets[t]),
            float(self.h[t]),
            float(self.areas[t]),
        )

    def facet(self, f: int) -> Facet:
        elems = tuple(int(t) for t in self.facet_elems[f] if t >= 0)
        return Facet(
            f,
            tuple(int(v) for v in self.facet_nodes[f]),
            elems,
            tuple(float(c) for c in self.facet_normals[f]),
            float(self.facet_lengths[f]),
            bool(self.is_boundary_facet[f]),
        )

    # -- plain text dump ----------------------------------------------------

    def dumps(self) -> str:
        """One ``v x y`` line per vertex, one ``t i j k`` line per triangle."""
        lines = [f"v {x:.17g} {y:.17g}" for x, y in self.coords]
        lines += [f"t {i} {j} {k}" for i, j, k in self.tris]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def _longest_edge_refinement(coords, tris):
    """Longest edge per triangle; ties broken by smallest opposite vertex id."""
    refs = np.empty(len(tris), dtype=np.int64)
    for t, v in enumerate(tris):
        p = coords[list(v)]
        lens = [np.hypot(*(p[(i + 2) % 3] - p[(i + 1) % 3])) for i in range(3)]
        lmax = max(lens)
        cand = [i for i in range(3) if lens[i] >= lmax * (1.0 - 1e-12)]
        refs[t] = min(cand, key=lambda i: v[i])
    return refs


def make_structured_square(corner_min, corner_max, n: int) -> Mesh:
    """Uniform n-by-n grid of squares, each split along the SW-NE diagonal."""
    if n < 1:
        raise MeshError("n must be >= 1")
    x0, y0 = float(corner_min[0]), float(corner_min[1])
    x1, y1 = float(corner_max[0]), float(corner_max[1])
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate box")

    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    coords = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    tris = np.asarray(tris, dtype=np.int64)
    refs = _longest_edge_refinement(coords, tris)
    return Mesh(coords, tris, refs)


def refine_nvb(mesh: Mesh, marked) -> Mesh:
    """Bisect the marked triangles, closing up recursively for conformity.

    Children inherit refinement edges per standard NVB: each child's
    refinement edge is the parent edge opposite the new midpoint vertex.
    """
    marked = set(int(t) for t in marked)
    if not marked:
        return mesh
    if marked - set(range(mesh.n_triangles)):
        raise MeshError("marked set contains unknown triangle ids")

    tris = [tuple(int(v) for v in row) for row in mesh.tris]
    refs = [int(r) for r in mesh.refinement_edges]

    def ref_key(verts, r):
        return _edge_key(verts[(r + 1) % 3], verts[(r + 2) % 3])

    split: set[tuple[int, int]] = {ref_key(tris[t], refs[t]) for t in marked}

    # closure: a triangle with any split edge must have its refinement edge split
    changed = True
    while changed:
        changed = False
        for verts, r in zip(tris, refs):
            keys = [_edge_key(verts[(i + 1) % 3], verts[(i + 2) % 3]) for i in range(3)]
            rk = keys[r]
            if rk not in split and any(k in split for k in keys):
                split.add(rk)
                changed = True

    coords = [tuple(xy) for xy in mesh.coords]
    midpoint: dict[tuple[int, int], int] = {}

    def midpoint_id(key):
        m = midpoint.get(key)
        if m is None:
            a, b = key
            coords.append(
                (0.5 * (coords[a][0] + coords[b][0]), 0.5 * (coords[a][1] + coords[b][1]))
            )
            m = len(coords) - 1
            midpoint[key] = m
        return m

    out_tris: list[tuple[int, int, int]] = []
    out_refs: list[int] = []

    def emit(verts, r):
        key = ref_key(verts, r)
        if key not in split:
            out_tris.append(verts)
            out_refs.append(r)
            return
        apex = verts[r]
        p = verts[(r + 1) % 3]
        q = verts[(r + 2) % 3]
        m = midpoint_id(key)
        emit((p, m, apex), 1)
        emit((m, q, apex), 0)

    for verts, r in zip(tris, refs):
        emit(verts, r)

    return Mesh(np.asarray(coords), out_tris, out_refs, generation=mesh.generation + 1)


def uniform_refine(mesh: Mesh, passes: int = 1) -> Mesh:
    """All-marked NVB applied ``passes`` times."""
    for _ in range(passes):
        mesh = refine_nvb(mesh, range(mesh.n_triangles))
    return mesh


def shape_regularity(mesh: Mesh) -> float:
    """max_T h_T^2 / |T|, the shape-regularity monitor."""
    return float(np.max(mesh.h**2 / mesh.areas))
