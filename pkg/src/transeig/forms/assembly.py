"""Assembly of the transmission forms on the constrained P1 product space.

With scalar P1 matrices ``K_A`` (stiffness weighted by A), ``M_n`` (mass
weighted by n), ``K`` and ``M`` and the component extraction maps ``Ew``,
``Ev`` of the dof map, the global matrices are::

    a     = Ew' (K_A + M_n) Ew - Ev' (K + M) Ev
    b     = Ew' M_n Ew         - Ev' M Ev
    gramV = Ew' (K + M) Ew     + Ev' (K + M) Ev
    gramW = Ew' M Ew           + Ev' M Ev

Entry ``[r, c]`` is the form evaluated at (basis c, basis r).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..geometry import TriMesh
from ..space import DofMap, FieldVector
from .coefficients import CoefficientField
from .quadrature import DEGREE4

FORMS = ("a", "b", "gramV", "gramW")


def barycentric_gradients(mesh: TriMesh) -> np.ndarray:
    """Gradients of the three barycentric functions per triangle, shape (nt, 3, 2)."""
    p = mesh.vertices[mesh.triangles]
    area2 = 2.0 * mesh.areas
    g = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
        g[:, i, 0] = (a[:, 1] - b[:, 1]) / area2
        g[:, i, 1] = (b[:, 0] - a[:, 0]) / area2
    return g


def _scatter(mesh, local):
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def local_stiffness(mesh: TriMesh, Abar=None) -> np.ndarray:
    """Element stiffness matrices (nt, 3, 3); Abar is the element mean of A."""
    g = barycentric_gradients(mesh)
    if Abar is None:
        Ag = g
    else:
        Ag = np.einsum("tde,tje->tjd", Abar, g)
    return mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", g, Ag)


def local_mass(mesh: TriMesh, weight=None) -> np.ndarray:
    """Element mass matrices (nt, 3, 3) with optional weight values at quadrature points."""
    q = DEGREE4
    if weight is None:
        weight = np.ones((mesh.n_triangles, len(q.weights)))
    phi = q.points  # barycentric values of the basis at the points
    w = weight * q.weights[None, :]
    return mesh.areas[:, None, None] * np.einsum("tq,qi,qj->tij", w, phi, phi)


@dataclass
class ScalarMatrices:
    K: sp.csr_matrix
    M: sp.csr_matrix
    KA: sp.csr_matrix
    Mn: sp.csr_matrix


def scalar_matrices(mesh: TriMesh, coeff: CoefficientField) -> ScalarMatrices:
    q = DEGREE4
    xq = q.physical_points(mesh.vertices[mesh.triangles])
    Aq = coeff.matrix(xq)
    Abar = np.einsum("q,tqde->tde", q.weights, Aq)
    nq = coeff.index(xq)
    return ScalarMatrices(
        K=_scatter(mesh, local_stiffness(mesh)),
        M=_scatter(mesh, local_mass(mesh)),
        KA=_scatter(mesh, local_stiffness(mesh, Abar)),
        Mn=_scatter(mesh, local_mass(mesh, nq)),
    )


@dataclass
class Forms:
    """All four assembled operators on one dof map."""

    a: sp.csr_matrix
    b: sp.csr_matrix
    gramV: sp.csr_matrix
    gramW: sp.csr_matrix
    dofmap: DofMap

    def __getitem__(self, name):
        if name not in FORMS:
            raise KeyError(name)
        return getattr(self, name)


def _clean(m):
    m = sp.csr_matrix(m)
    m.sum_duplicates()
    m.sort_indices()
    return m


def assemble_forms(mesh: TriMesh, dofmap: DofMap, coeff: CoefficientField) -> Forms:
    if dofmap.mesh is not mesh:
        raise ValueError("dof map was built on a different mesh")
    s = scalar_matrices(mesh, coeff)
    Ew, Ev = dofmap.extract_w, dofmap.extract_v
    H1 = s.K + s.M
    return Forms(
        a=_clean(Ew.T @ (s.KA + s.Mn) @ Ew - Ev.T @ H1 @ Ev),
        b=_clean(Ew.T @ s.Mn @ Ew - Ev.T @ s.M @ Ev),
        gramV=_clean(Ew.T @ H1 @ Ew + Ev.T @ H1 @ Ev),
        gramW=_clean(Ew.T @ s.M @ Ew + Ev.T @ s.M @ Ev),
        dofmap=dofmap,
    )


def assemble(mesh: TriMesh, dofmap: DofMap, coeff: CoefficientField, form: str) -> sp.csr_matrix:
    if form not in FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {FORMS}")
    return assemble_forms(mesh, dofmap, coeff)[form]


def t_matrix(dofmap: DofMap, condition: str = "gamma>1") -> sp.csr_matrix:
    """Matrix of the isomorphism T on coefficient vectors.

    ``gamma>1``: (phi, psi) -> (phi, 2 phi - psi)
    ``gamma<1``: (phi, psi) -> (phi - 2 psi, -psi)
    """
    Ew, Ev = dofmap.extract_w, dofmap.extract_v
    if condition == "gamma>1":
        new_w, new_v = Ew, 2 * Ew - Ev
    elif condition == "gamma<1":
        new_w, new_v = Ew - 2 * Ev, -Ev
    else:
        raise ValueError(f"unknown condition {condition!r}")
    # a boundary dof receives the same value from both components
    nb0 = 2 * dofmap.n_interior_w
    scale = np.ones(dofmap.total_dofs)
    scale[nb0:] = 0.5
    T = sp.diags(scale) @ (Ew.T @ new_w + Ev.T @ new_v)
    T = sp.csr_matrix(T)
    T.eliminate_zeros()
    return T


def apply_T(U: FieldVector, condition: str = "gamma>1") -> FieldVector:
    w, v = U.w, U.v
    if condition == "gamma>1":
        nw, nv = w, 2 * w - v
    elif condition == "gamma<1":
        nw, nv = w - 2 * v, -v
    else:
        raise ValueError(f"unknown condition {condition!r}")
    return FieldVector(U.dofmap.from_components(nw, nv), U.dofmap)


def coercivity_constant(mesh: TriMesh, dofmap: DofMap, coeff: CoefficientField,
                        condition: str | None = None, dense_max: int = 3000) -> float:
    """Smallest eigenvalue of sym(T' A) relative to the V inner product.

    A positive value certifies discrete T-coercivity of the a-form.  Spaces
    up to ``dense_max`` dofs use a dense symmetric solve, larger ones
    shift-invert Lanczos below a Gershgorin-type bound.
    """
    import scipy.linalg as sla
    import scipy.sparse.linalg as spla

    forms = assemble_forms(mesh, dofmap, coeff)
    T = t_matrix(dofmap, condition or coeff.condition)
    TA = T.T @ forms.a
    S = 0.5 * (TA + TA.T)
    G = forms.gramV
    try:
        if dofmap.total_dofs <= dense_max:
            return float(sla.eigh(S.toarray(), G.toarray(), eigvals_only=True)[0])
        bound = float(abs(forms.a).sum(axis=1).max() / G.diagonal().min()) + 10.0
        vals = spla.eigsh(S.tocsc(), k=1, M=G.tocsc(), sigma=-bound, which="LM",
                          return_eigenvectors=False)
        return float(vals.min())
    except (np.linalg.LinAlgError, spla.ArpackError) as exc:
        raise np.linalg.LinAlgError(f"coercivity eigensolve failed: {exc}") from exc
