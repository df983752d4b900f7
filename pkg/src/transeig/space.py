"""The constrained product space of P1 pairs ``(w, v)`` with ``w = v`` on the boundary.

Global numbering: interior ``w`` values first, then interior ``v`` values,
then one shared value per boundary vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import MeshError, TriMesh, locate


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: TriMesh
    w_dofs: np.ndarray
    v_dofs: np.ndarray
    n_interior_w: int
    n_interior_v: int
    n_boundary_shared: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def total_dofs(self) -> int:
        return self.n_interior_w + self.n_interior_v + self.n_boundary_shared

    def dof_of(self, component: str, vertex: int) -> int:
        if component == "w":
            return int(self.w_dofs[vertex])
        if component == "v":
            return int(self.v_dofs[vertex])
        raise ValueError(f"component must be 'w' or 'v', got {component!r}")

    @property
    def extract_w(self) -> sp.csr_matrix:
        """Sparse (n_vertices x total_dofs) map from coefficients to nodal w values."""
        if "Ew" not in self._cache:
            self._cache["Ew"] = _selection(self.w_dofs, self.total_dofs)
        return self._cache["Ew"]

    @property
    def extract_v(self) -> sp.csr_matrix:
        if "Ev" not in self._cache:
            self._cache["Ev"] = _selection(self.v_dofs, self.total_dofs)
        return self._cache["Ev"]

    def components(self, coeffs):
        """Nodal values (w, v) of a coefficient vector or column stack."""
        return self.extract_w @ coeffs, self.extract_v @ coeffs

    def from_components(self, w, v) -> np.ndarray:
        """Coefficient vector of the pair (w, v); boundary values taken from w."""
        w = np.asarray(w)
        v = np.asarray(v)
        out = np.zeros(self.total_dofs, dtype=np.result_type(w, v, float))
        out[self.v_dofs] = v
        out[self.w_dofs] = w
        return out


def _selection(dofs, ncols):
    n = len(dofs)
    return sp.csr_matrix((np.ones(n), (np.arange(n), dofs)), shape=(n, ncols))


def build_dof_map(mesh: TriMesh) -> DofMap:
    bnd = mesh.is_boundary_vertex
    interior = np.nonzero(~bnd)[0]
    boundary = np.nonzero(bnd)[0]
    ni, nb = interior.size, boundary.size
    w = np.empty(mesh.n_vertices, dtype=np.int64)
    v = np.empty(mesh.n_vertices, dtype=np.int64)
    w[interior] = np.arange(ni)
    v[interior] = ni + np.arange(ni)
    w[boundary] = v[boundary] = 2 * ni + np.arange(nb)
    return DofMap(mesh, w, v, ni, ni, nb)


def vertex_prolongation(coarse: TriMesh, fine: TriMesh) -> sp.csr_matrix:
    """Nodal prolongation between vertex values of a mesh and a descendant.

    Each vertex created by refinement takes the mean of the two endpoints of
    the edge it bisects; on the disk this is the linear interpolant along the
    parent chord evaluated before the radial projection.
    """
    chain = []
    for m in fine.ancestors():
        if m is coarse:
            break
        chain.append(m)
    else:
        raise MeshError("fine mesh is not a refinement descendant of coarse mesh")
    P = sp.identity(coarse.n_vertices, format="csr")
    for m in reversed(chain):
        P = _one_level(m) @ P
    return P.tocsr()


def _one_level(mesh: TriMesh) -> sp.csr_matrix:
    vp = mesh.vertex_parents
    nv_old = mesh.parent.n_vertices
    n = len(vp)
    rows = np.concatenate([np.arange(nv_old), np.repeat(np.arange(nv_old, n), 2)])
    cols = np.concatenate([np.arange(nv_old), vp[nv_old:].ravel()])
    vals = np.concatenate([np.ones(nv_old), np.full(2 * (n - nv_old), 0.5)])
    # adaptive closure only bisects edges of the parent mesh, so every
    # column index refers to an old vertex
    if cols.max(initial=0) >= nv_old:
        raise MeshError("vertex genealogy refers to a vertex created in the same step")
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, nv_old))


def prolongation(coarse: DofMap, fine: DofMap) -> sp.csr_matrix:
    """Matrix mapping coarse-space coefficients to fine-space coefficients."""
    Pv = vertex_prolongation(coarse.mesh, fine.mesh)
    Pw_full = fine.extract_w.T @ Pv @ coarse.extract_w
    Pv_full = fine.extract_v.T @ Pv @ coarse.extract_v
    # boundary fine dofs appear in both products; interior ones in exactly one
    scale = np.ones(fine.total_dofs)
    scale[2 * fine.n_interior_w:] = 0.5
    P = sp.diags(scale) @ (Pw_full + Pv_full)
    P = P.tocsr()
    P.eliminate_zeros()
    return P


@dataclass
class FieldVector:
    coefficients: np.ndarray
    dofmap: DofMap

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != (self.dofmap.total_dofs,):
            raise ValueError("coefficient length does not match the dof map")

    @property
    def w(self) -> np.ndarray:
        return self.dofmap.extract_w @ self.coefficients

    @property
    def v(self) -> np.ndarray:
        return self.dofmap.extract_v @ self.coefficients


def evaluate_field(U: FieldVector, points) -> np.ndarray:
    """Barycentric P1 interpolation of both components; returns (npts, 2) complex."""
    mesh = U.dofmap.mesh
    tris, bary = locate(mesh, points)
    verts = mesh.triangles[tris]
    w, v = U.w, U.v
    return np.column_stack([(w[verts] * bary).sum(1), (v[verts] * bary).sum(1)])


def write_field_csv(U: FieldVector, path) -> None:
    """One row per vertex: ``x,y,w_re,w_im,v_re,v_im``."""
    mesh = U.dofmap.mesh
    w, v = U.w, U.v
    with open(path, "w") as fh:
        fh.write("x,y,w_re,w_im,v_re,v_im\n")
        for (x, y), a, b in zip(mesh.vertices, w, v):
            fh.write(
                f"{x:.17g},{y:.17g},{a.real:.17g},{a.imag:.17g},{b.real:.17g},{b.imag:.17g}\n"
            )
