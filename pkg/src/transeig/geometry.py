"""Triangulations of the model domains and their refinement.

Triangles are stored counterclockwise as ``(v0, v1, v2)`` where the edge
``(v1, v2)`` opposite ``v0`` is the refinement edge used by newest-vertex
bisection.  Refinement never renumbers existing vertices: new vertices are
appended and ``vertex_parents`` records the edge each one bisects, which is
all the genealogy prolongation needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

DOMAINS = ("unit-disk", "unit-square", "L-shape")
# triangles in the disk fan; 16 puts the uniform hierarchy at 16 * 4**k + 2 dofs
# (..., 65538, 262146), 8 would skip from 131074 straight to 524290
DISK_FAN = 16


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    domain: str
    level: int = 0
    parent: Optional["TriMesh"] = None
    parent_of: Optional[np.ndarray] = None
    vertex_parents: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def _edges(self):
        if "edges" not in self._cache:
            t = self.triangles
            # local edge i is opposite local vertex i
            loc = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
            flat = np.sort(loc.reshape(-1, 2), axis=1)
            edges, inv, counts = np.unique(
                flat, axis=0, return_inverse=True, return_counts=True
            )
            self._cache["edges"] = (edges, inv.reshape(-1, 3), counts)
        return self._cache["edges"]

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, shape (ne, 2), sorted vertex pairs."""
        return self._edges()[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of local edge i (opposite local vertex i), shape (nt, 3)."""
        return self._edges()[1]

    @property
    def boundary_edges(self) -> np.ndarray:
        """Boundary edges oriented so the domain lies to their left."""
        if "bedges" not in self._cache:
            t = self.triangles
            _, tri_edges, counts = self._edges()
            on_b = counts[tri_edges] == 1
            tri, loc = np.nonzero(on_b)
            a = t[tri, (loc + 1) % 3]
            b = t[tri, (loc + 2) % 3]
            self._cache["bedges"] = np.column_stack([a, b])
        return self._cache["bedges"]

    @property
    def boundary_vertices(self) -> np.ndarray:
        if "bverts" not in self._cache:
            self._cache["bverts"] = np.unique(self.boundary_edges)
        return self._cache["bverts"]

    @property
    def is_boundary_vertex(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = True
        return mask

    @property
    def areas(self) -> np.ndarray:
        """Signed triangle areas (positive for counterclockwise triangles)."""
        if "areas" not in self._cache:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache["areas"]

    @property
    def neighbors(self) -> np.ndarray:
        """Triangle across local edge i, or -1 on the boundary."""
        if "nbrs" not in self._cache:
            _, tri_edges, _ = self._edges()
            flat = tri_edges.ravel()
            order = np.argsort(flat, kind="stable")
            sorted_e = flat[order]
            nbr = -np.ones(flat.size, dtype=np.int64)
            same = sorted_e[1:] == sorted_e[:-1]
            i0 = order[:-1][same]
            i1 = order[1:][same]
            nbr[i0] = i1 // 3
            nbr[i1] = i0 // 3
            self._cache["nbrs"] = nbr.reshape(-1, 3)
        return self._cache["nbrs"]

    def total_area(self) -> float:
        return float(self.areas.sum())

    def ancestors(self):
        m = self
        while m is not None:
            yield m
            m = m.parent


def mesh_size(mesh: TriMesh) -> float:
    """Longest edge over all triangles."""
    e = mesh.edges
    d = mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]
    return float(np.sqrt((d**2).sum(axis=1)).max())


def min_angle(mesh: TriMesh) -> float:
    p = mesh.vertices[mesh.triangles]
    angles = []
    for i in range(3):
        a = p[:, (i + 1) % 3] - p[:, i]
        b = p[:, (i + 2) % 3] - p[:, i]
        c = (a * b).sum(1) / np.sqrt((a * a).sum(1) * (b * b).sum(1))
        angles.append(np.arccos(np.clip(c, -1.0, 1.0)))
    return float(np.min(angles))


def _orient_longest_edge(vertices, triangles):
    """Rotate each triangle so its longest edge is the refinement edge."""
    p = vertices[triangles]
    lengths = np.stack(
        [((p[:, (i + 2) % 3] - p[:, (i + 1) % 3]) ** 2).sum(1) for i in range(3)],
        axis=1,
    )
    start = np.argmax(lengths, axis=1)
    idx = (start[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(triangles, idx, axis=1)


def _base_mesh(domain: str) -> TriMesh:
    if domain == "unit-square":
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        tris = np.array([[0, 1, 2], [0, 2, 3]])
    elif domain == "L-shape":
        verts = np.array(
            [
                [-1.0, -1.0], [0.0, -1.0],
                [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0],
                [-1.0, 1.0], [0.0, 1.0], [1.0, 1.0],
            ]
        )
        tris = np.array(
            [[0, 1, 3], [0, 3, 2], [2, 3, 6], [2, 6, 5], [3, 4, 7], [3, 7, 6]]
        )
    elif domain == "unit-disk":
        theta = 2 * np.pi * np.arange(DISK_FAN) / DISK_FAN
        ring = np.column_stack([np.cos(theta), np.sin(theta)])
        verts = np.vstack([[0.0, 0.0], ring])
        # origin is the newest vertex; the chords are refinement edges
        tris = np.array([[0, 1 + i, 1 + (i + 1) % DISK_FAN] for i in range(DISK_FAN)])
        return TriMesh(verts, tris, domain)
    else:
        raise MeshError(f"unknown domain {domain!r}; expected one of {DOMAINS}")
    return TriMesh(verts, _orient_longest_edge(verts, tris), domain)


def build_initial_mesh(domain: str, target_h: float) -> TriMesh:
    """Coarsest mesh of ``domain`` with mesh size at most ``sqrt(2) * target_h``.

    The base triangulations (2 triangles for the square, 6 for the L-shape,
    a fan of ``DISK_FAN`` for the disk) are refined uniformly until small enough; the
    returned mesh is the root of its hierarchy (no parent).
    """
    if not target_h > 0:
        raise MeshError("target_h must be positive")
    mesh = _base_mesh(domain)
    while mesh_size(mesh) > np.sqrt(2) * target_h * (1 + 1e-12):
        mesh = refine_uniform(mesh)
    return TriMesh(mesh.vertices, mesh.triangles, domain)


def _project_to_circle(vertices, idx):
    r = np.sqrt((vertices[idx] ** 2).sum(1))
    vertices[idx] /= r[:, None]


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Red refinement: each triangle split into four by its edge midpoints."""
    t = mesh.triangles
    edges = mesh.edges
    tri_edges = mesh.triangle_edges
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    if mesh.domain == "unit-disk":
        _, _, counts = mesh._edges()
        _project_to_circle(vertices, nv + np.nonzero(counts == 1)[0])
    m0, m1, m2 = (nv + tri_edges[:, i] for i in range(3))  # mid of edge opposite vi
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    # children are the homothetic images of the parent so labels stay consistent
    children = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([m2, v1, m0]),
            np.column_stack([m1, m0, v2]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent_of = np.repeat(np.arange(len(t)), 4)
    vparents = np.vstack([np.column_stack([np.arange(nv)] * 2), edges])
    return TriMesh(
        vertices, children, mesh.domain, mesh.level + 1, mesh, parent_of, vparents
    )


def refine_adaptive(mesh: TriMesh, marked: Iterable[int]) -> TriMesh:
    """Newest-vertex bisection of the marked triangles plus conforming closure.

    Every marked triangle is bisected at least once.  Closure marks the
    refinement edge of any triangle that has some other edge marked, so each
    triangle is split into 2, 3 or 4 children and the result is conforming.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_triangles):
        raise MeshError("marked triangle index out of range")
    if marked.size == 0:
        return TriMesh(
            mesh.vertices.copy(), mesh.triangles.copy(), mesh.domain, mesh.level + 1,
            mesh, np.arange(mesh.n_triangles),
            np.column_stack([np.arange(mesh.n_vertices)] * 2),
        )
    t = mesh.triangles
    edges = mesh.edges
    te = mesh.triangle_edges
    emark = np.zeros(len(edges), dtype=bool)
    emark[te[marked, 0]] = True
    while True:
        need = emark[te[:, 1]] | emark[te[:, 2]]
        new = need & ~emark[te[:, 0]]
        if not new.any():
            break
        emark[te[new, 0]] = True

    nv = mesh.n_vertices
    split_edges = np.nonzero(emark)[0]
    mid_index = -np.ones(len(edges), dtype=np.int64)
    mid_index[split_edges] = nv + np.arange(split_edges.size)
    vertices = np.vstack(
        [mesh.vertices,
         0.5 * (mesh.vertices[edges[split_edges, 0]] + mesh.vertices[edges[split_edges, 1]])]
    )
    if mesh.domain == "unit-disk":
        _, _, counts = mesh._edges()
        bnd = split_edges[counts[split_edges] == 1]
        _project_to_circle(vertices, mid_index[bnd])

    keep = ~emark[te[:, 0]]
    out_tris = [t[keep]]
    out_par = [np.nonzero(keep)[0]]

    bis = np.nonzero(emark[te[:, 0]])[0]
    v0, v1, v2 = t[bis, 0], t[bis, 1], t[bis, 2]
    m = mid_index[te[bis, 0]]
    # first bisection: (m, v0, v1) has refinement edge (v0, v1), opposite v2;
    # (m, v2, v0) has refinement edge (v2, v0), opposite v1
    left_split = emark[te[bis, 2]]
    right_split = emark[te[bis, 1]]
    m_left = mid_index[te[bis, 2]]
    m_right = mid_index[te[bis, 1]]

    sel = ~left_split
    out_tris.append(np.column_stack([m, v0, v1])[sel])
    out_par.append(bis[sel])
    sel = left_split
    out_tris.append(np.column_stack([m_left, v1, m])[sel])
    out_tris.append(np.column_stack([m_left, m, v0])[sel])
    out_par += [bis[sel], bis[sel]]

    sel = ~right_split
    out_tris.append(np.column_stack([m, v2, v0])[sel])
    out_par.append(bis[sel])
    sel = right_split
    out_tris.append(np.column_stack([m_right, v0, m])[sel])
    out_tris.append(np.column_stack([m_right, m, v2])[sel])
    out_par += [bis[sel], bis[sel]]

    vparents = np.vstack([np.column_stack([np.arange(nv)] * 2), edges[split_edges]])
    return TriMesh(
        vertices, np.vstack(out_tris), mesh.domain, mesh.level + 1, mesh,
        np.concatenate(out_par), vparents,
    )


@dataclass
class MeshHierarchy:
    meshes: list
    beta: int = 2

    @classmethod
    def uniform(cls, coarse: TriMesh, levels: int) -> "MeshHierarchy":
        meshes = [coarse]
        for _ in range(levels):
            meshes.append(refine_uniform(meshes[-1]))
        return cls(meshes)

    def __len__(self):
        return len(self.meshes)

    def __getitem__(self, i):
        return self.meshes[i]


def check_mesh(mesh: TriMesh, tol: float = 1e-12) -> None:
    """Raise MeshError if any structural invariant is violated."""
    if np.any(mesh.areas <= 0):
        raise MeshError("non-positive triangle area")
    _, _, counts = mesh._edges()
    if np.any(counts > 2):
        raise MeshError("edge shared by more than two triangles")
    # a hanging node shows up as a vertex lying inside a boundary edge
    be = mesh.boundary_edges
    if mesh.domain in ("unit-square", "L-shape"):
        p, q = mesh.vertices[be[:, 0]], mesh.vertices[be[:, 1]]
        mid = 0.5 * (p + q)
        if mesh.domain == "unit-square":
            on = (
                np.isclose(mid[:, 0], 0) | np.isclose(mid[:, 0], 1)
                | np.isclose(mid[:, 1], 0) | np.isclose(mid[:, 1], 1)
            )
        else:
            x, y = mid[:, 0], mid[:, 1]
            on = (
                np.isclose(np.abs(x), 1) | np.isclose(np.abs(y), 1)
                | (np.isclose(x, 0) & (y < 0)) | (np.isclose(y, 0) & (x > 0))
            )
        if not on.all():
            raise MeshError("interior edge with a single incident triangle")
    if mesh.domain == "unit-disk":
        r = np.sqrt((mesh.vertices[mesh.boundary_vertices] ** 2).sum(1))
        if np.abs(r - 1).max() > tol:
            raise MeshError("disk boundary vertex off the unit circle")
    if mesh.parent_of is not None:
        if len(mesh.parent_of) != mesh.n_triangles:
            raise MeshError("genealogy length mismatch")
        child_area = np.bincount(
            mesh.parent_of, weights=mesh.areas, minlength=mesh.parent.n_triangles
        )
        if mesh.domain != "unit-disk" and not np.allclose(
            child_area, mesh.parent.areas, rtol=1e-10, atol=1e-14
        ):
            raise MeshError("children do not tile their parents")


def write_mesh(mesh: TriMesh, path) -> None:
    """Plain-text dump: ``nv nt nbe`` header, then vertices, triangles, boundary edges."""
    be = mesh.boundary_edges
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles} {len(be)}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        for i, j in be:
            fh.write(f"{i} {j}\n")


def read_mesh(path, domain: str) -> TriMesh:
    with open(path) as fh:
        nv, nt, nbe = (int(s) for s in fh.readline().split())
        data = [fh.readline().split() for _ in range(nv + nt + nbe)]
    verts = np.array(data[:nv], dtype=float)
    tris = np.array(data[nv:nv + nt], dtype=np.int64)
    return TriMesh(verts, tris, domain)


def locate(mesh: TriMesh, points: Sequence, tol: float = 1e-10):
    """Containing triangle and barycentric coordinates for each point.

    Walks the adjacency graph from the previously found triangle, stepping
    across the edge with the most negative barycentric coordinate; falls back
    to a scan of all triangles if the walk leaves the mesh (non-convex
    domains).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    p = mesh.vertices[mesh.triangles]
    nbr = mesh.neighbors
    tris = np.empty(len(pts), dtype=np.int64)
    bary = np.empty((len(pts), 3))
    current = 0

    def bc(k, x):
        a, b, c = p[k]
        det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (x[1] - a[1]) * (c[0] - a[0])) / det
        l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0])) / det
        return np.array([1.0 - l1 - l2, l1, l2])

    for i, x in enumerate(pts):
        k = current
        lam = None
        for _ in range(4 * int(np.sqrt(mesh.n_triangles)) + 20):
            lam = bc(k, x)
            j = int(np.argmin(lam))
            if lam[j] >= -tol:
                break
            if nbr[k, j] < 0:
                lam = None
                break
            k = nbr[k, j]
        else:
            lam = None
        if lam is None or lam.min() < -tol:
            a, b, c = p[:, 0], p[:, 1], p[:, 2]
            det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
            l1 = ((x[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (x[1] - a[:, 1]) * (c[:, 0] - a[:, 0])) / det
            l2 = ((b[:, 0] - a[:, 0]) * (x[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (x[0] - a[:, 0])) / det
            lmin = np.minimum(np.minimum(1 - l1 - l2, l1), l2)
            k = int(np.argmax(lmin))
            if lmin[k] < -tol:
                raise MeshError(f"point {tuple(x)} lies outside the mesh")
            lam = bc(k, x)
        tris[i] = k
        bary[i] = lam
        current = k
    return tris, bary
