"""Multilevel correction for transmission eigenvalues.

A correction step lifts an eigenpair cluster to the next mesh, improves it
by one linear solve per vector (primal with ``A``, adjoint with ``A^T``)
and then solves a small Petrov-Galerkin eigenproblem on the coarse space
augmented by the corrected vectors.  No eigenproblem is ever solved on a
fine mesh.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import linalg
from .eigensolve import (
    CLUSTER_RADIUS,
    K0_TOL,
    EigenCluster,
    EigenError,
    algebraic_eigenspace,
    k_values,
    match_cluster,
    normalize_columns,
    solve_direct,
)
from .forms import CoefficientField, Forms, assemble_forms
from .geometry import TriMesh, build_initial_mesh, mesh_size, refine_uniform
from .space import DofMap, build_dof_map, prolongation

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Level:
    """Mesh, dof map, assembled forms and (lazily) the LU of the a-form."""

    mesh: TriMesh
    dofmap: DofMap
    forms: Forms
    index: int = 0
    _lu: linalg.LUFactors | None = field(default=None, repr=False)

    @classmethod
    def build(cls, mesh: TriMesh, coeff: CoefficientField, index: int = 0) -> "Level":
        dofmap = build_dof_map(mesh)
        return cls(mesh, dofmap, assemble_forms(mesh, dofmap, coeff), index)

    @property
    def dofs(self) -> int:
        return self.dofmap.total_dofs

    @property
    def h(self) -> float:
        return mesh_size(self.mesh)

    @property
    def lu(self) -> linalg.LUFactors:
        if self._lu is None:
            self._lu = linalg.sparse_lu(self.forms.a)
        return self._lu

    def release(self):
        self._lu = None


class CoarseSpace:
    """The coarse space V_H lifted to one fine level, W-orthonormalised.

    The lifted basis is ``P L^{-H}`` with ``P`` the sparse prolongation and
    ``L`` the Cholesky factor of ``P' W P``; it is never formed densely.
    """

    def __init__(self, P: sp.csr_matrix, fine: Level):
        self.P = sp.csr_matrix(P)
        W = fine.forms.gramW
        G = (self.P.T @ W @ self.P).toarray()
        self.L = np.linalg.cholesky(0.5 * (G + G.T))
        self.fine = fine
        self._a = (self.P.T @ fine.forms.a @ self.P).toarray()
        self._b = (self.P.T @ fine.forms.b @ self.P).toarray()

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    def _apply_Linv(self, M):
        return sla.solve_triangular(self.L, M, lower=True)

    def project_out(self, X):
        """W-orthogonal complement of X against the lifted coarse space."""
        W = self.fine.forms.gramW
        c = self._apply_Linv(self.P.T @ (W @ X))  # coefficients in orthonormal basis
        y = sla.solve_triangular(self.L.conj().T, c, lower=False)
        return X - self.P @ y

    def expand(self, coeffs):
        """Fine-level vectors from coefficients in [coarse basis, extra] form."""
        return self.P @ sla.solve_triangular(self.L.T, coeffs, lower=False)

    def blocks(self, mat_name: str):
        M = self._a if mat_name == "a" else self._b
        Li = self._apply_Linv
        return Li(Li(M).T).T  # L^{-1} M L^{-T}


def _augment(coarse: CoarseSpace, X, drop_tol: float):
    """Columns of X made W-orthonormal to the lifted coarse space and to each other."""
    W = coarse.fine.forms.gramW
    R = coarse.project_out(X)
    # residual measured against the norm before projection
    n0 = np.sqrt(np.abs(np.einsum("ij,ij->j", X.conj(), W @ X)))
    n1 = np.sqrt(np.abs(np.einsum("ij,ij->j", R.conj(), W @ R)))
    R = R[:, n1 >= drop_tol * n0]
    return linalg.gram_orthonormalize(R, W, drop_tol=drop_tol)


def _small_matrix(coarse: CoarseSpace, mat, trial_extra, test_extra, name):
    """Test^H M Trial for trial = [coarse, trial_extra], test = [coarse, test_extra]."""
    n_h = coarse.dim
    HH = coarse.blocks(name)
    MX = mat @ trial_extra
    MtY = mat.T @ test_extra.conj()
    Li = coarse._apply_Linv
    HR = Li(coarse.P.T @ MX)
    SH = Li(coarse.P.T @ MtY).T
    SR = test_extra.conj().T @ MX
    out = np.zeros((n_h + test_extra.shape[1], n_h + trial_extra.shape[1]), dtype=complex)
    out[:n_h, :n_h] = HH
    out[:n_h, n_h:] = HR
    out[n_h:, :n_h] = SH
    out[n_h:, n_h:] = SR
    return out


def one_correction_step(coarse: CoarseSpace, cluster: EigenCluster, fine: Level,
                        P_step: sp.csr_matrix, *, radius: float = CLUSTER_RADIUS,
                        drop_tol: float = 1e-10, seed: int = 20140101) -> EigenCluster:
    """Advance a cluster from its level to ``fine``.

    ``P_step`` prolongs coefficient vectors from the cluster's level to
    ``fine``; ``coarse`` is V_H lifted to ``fine``.
    """
    A, B, W = fine.forms.a, fine.forms.b, fine.forms.gramW
    U = P_step @ cluster.primal
    Us = P_step @ cluster.adjoint
    # auxiliary boundary value problems, one factorisation for all of them
    Ut = fine.lu.solve(B @ U)
    Ust = fine.lu.solve(B.T @ Us, trans="T")

    trial = _augment(coarse, Ut, drop_tol)
    test = _augment(coarse, Ust, drop_tol)
    if trial.shape[1] == 0 or test.shape[1] == 0:
        raise EigenError("augmentation basis is empty after dropping dependent corrections")

    A_s = _small_matrix(coarse, A, trial, test, "a")
    B_s = _small_matrix(coarse, B, trial, test, "b")
    if A_s.shape[0] != A_s.shape[1]:
        # unequal drop counts; keep the common number of augmentation vectors
        r = min(trial.shape[1], test.shape[1])
        trial, test = trial[:, :r], test[:, :r]
        A_s = _small_matrix(coarse, A, trial, test, "a")
        B_s = _small_matrix(coarse, B, trial, test, "b")

    lam, x, y = linalg.dense_eig_generalized(A_s, B_s, left=True, check=False)
    incoming = cluster.lambdas[: cluster.q]
    chosen = match_cluster(incoming, lam)
    sel = lam[chosen]
    if np.any(np.abs(sel - incoming) > 10 * radius * np.abs(incoming)):
        raise EigenError(
            f"no small-problem eigenvalue within range of {incoming} (closest {sel})"
        )
    # the small pencil is complex; drop round-off imaginary parts of real eigenvalues
    real_in = incoming.imag == 0
    sel = np.where(real_in & (np.abs(sel.imag) <= 1e-10 * np.abs(sel)), sel.real + 0j, sel)
    n_h = coarse.dim
    Xc, Yc = x[:, chosen], y[:, chosen]
    U_new = coarse.expand(Xc[:n_h]) + trial @ Xc[n_h:]
    Us_new = coarse.expand(Yc[:n_h]) + test @ Yc[n_h:]
    U_new = normalize_columns(U_new, W)
    Us_new = normalize_columns(Us_new, W)
    lams = sel
    if cluster.m > cluster.q:
        U_new, lams = algebraic_eigenspace(U_new[:, : cluster.q], sel, A, B, W, seed=seed)
        Us_new, _ = algebraic_eigenspace(Us_new[:, : cluster.q], np.conj(sel), A.T, B.T, W, seed=seed)
        U_new = normalize_columns(U_new, W)
        Us_new = normalize_columns(Us_new, W)
    return EigenCluster(
        lams, U_new, Us_new, fine.dofmap, cluster.q, fine.index,
        {"small_dim": A_s.shape[0]},
    )


@dataclass
class MultilevelConfig:
    """Parameters of the multilevel scheme.

    ``H`` sets the coarse mesh T_H; the first eigensolve happens
    ``h1_refinements`` uniform refinements below it, and ``levels`` counts
    the meshes T_{h_1} ... T_{h_n}.
    """

    H: float
    levels: int
    first: int = 6
    nev: int = 16
    sigma: complex | None = None
    beta: int = 2
    h1_refinements: int = 1
    radius: float = CLUSTER_RADIUS
    k0_tol: float = K0_TOL
    eig_tol: float = 1e-10
    drop_tol: float = 1e-10
    cluster: tuple[int, int, int] | None = None
    seed: int = 20140101

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be at least 1")
        if self.h1_refinements < 0:
            raise ValueError("h1 must not be coarser than H")
        if self.cluster is not None:
            i, m, q = self.cluster
            if not (i >= 1 and m >= q >= 1):
                raise ValueError("cluster spec needs i >= 1 and m >= q >= 1")
        if self.beta != 2:
            raise ValueError("only beta = 2 (uniform red refinement) is supported")
        if self.H <= 0 or self.first < 1 or self.nev < 1:
            raise ValueError("H, first and nev must be positive")

    def default_sigma(self) -> complex:
        return self.sigma if self.sigma is not None else 1.0 + 2.0**2


@dataclass
class TraceRow:
    level: int
    dofs: int
    h: float
    j: int
    lam: complex

    @property
    def k(self) -> complex:
        return complex(k_values([self.lam])[0])


@dataclass
class MultilevelResult:
    clusters: list
    trace: list
    levels: list = field(default_factory=list)
    coarse: Level | None = None

    @property
    def lambdas(self) -> np.ndarray:
        return np.concatenate([c.lambdas for c in self.clusters])

    @property
    def k(self) -> np.ndarray:
        return k_values(self.lambdas)

    def per_level(self):
        """Mapping level -> (dofs, h, lambdas in tracked order)."""
        out = {}
        for r in self.trace:
            d, h, ls = out.setdefault(r.level, (r.dofs, r.h, []))
            ls.append(r.lam)
        return {k: (d, h, np.array(ls)) for k, (d, h, ls) in out.items()}


def _trace_rows(level: Level, clusters, rows):
    j = 1
    for c in clusters:
        for lam in c.lambdas:
            rows.append(TraceRow(level.index, level.dofs, level.h, j, complex(lam)))
            j += 1


def _partner_map(clusters, radius):
    """Index of the cluster whose eigenvalues are the conjugates of each cluster, or -1."""
    out = [-1] * len(clusters)
    for i, c in enumerate(clusters):
        if c.mean.imag >= 0:
            continue
        for j, d in enumerate(clusters):
            if j != i and d.m == c.m and abs(d.mean - np.conj(c.mean)) <= radius * abs(c.mean):
                out[i] = j
    return out


def correct_all(coarse: CoarseSpace, clusters, fine: Level, P_step, radius, drop_tol,
                seed: int = 20140101):
    """One correction step for each cluster; conjugate partners by conjugation."""
    partner = _partner_map(clusters, radius)
    new = [None] * len(clusters)
    for i, c in enumerate(clusters):
        if partner[i] < 0:
            new[i] = one_correction_step(coarse, c, fine, P_step, radius=radius,
                                         drop_tol=drop_tol, seed=seed)
    for i, p in enumerate(partner):
        if p >= 0:
            new[i] = new[p].conjugate()
    return new


def pin_cluster(clusters, i: int, m: int, q: int, forms: Forms,
                seed: int = 20140101) -> EigenCluster:
    """Regroup eigenvalues i..i+m-1 (1-based, tracked order) as one cluster.

    With ``q < m`` only the first q eigenvectors are kept and the rest of
    the algebraic eigenspace is rebuilt by the generalized-eigenvector
    recursion.
    """
    lams = np.concatenate([c.lambdas for c in clusters])
    P = np.column_stack([c.primal for c in clusters])
    Ps = np.column_stack([c.adjoint for c in clusters])
    sl = slice(i - 1, i - 1 + m)
    if i - 1 + m > len(lams):
        raise EigenError(f"cluster spec ({i}, {m}, {q}) exceeds the {len(lams)} computed eigenvalues")
    lam, U, Us = lams[sl], P[:, sl], Ps[:, sl]
    if q < m:
        A, B, W = forms.a, forms.b, forms.gramW
        U, lam_ext = algebraic_eigenspace(U[:, :q], lam[:q], A, B, W, seed=seed)
        Us, _ = algebraic_eigenspace(Us[:, :q], np.conj(lam[:q]), A.T, B.T, W, seed=seed)
        if U.shape[1] != m or Us.shape[1] != m:
            raise EigenError(f"algebraic eigenspace has dimension {U.shape[1]}, expected {m}")
        lam, U, Us = lam_ext, normalize_columns(U, W), normalize_columns(Us, W)
    return EigenCluster(lam, U, Us, clusters[0].dofmap, q, clusters[0].level)


def convergence_slope(dofs, errors, min_points: int = 3) -> float:
    """Least-squares slope of log(error) against log(dofs)."""
    dofs = np.asarray(dofs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    ok = errors > 0
    if ok.sum() < min_points:
        raise ValueError(f"need at least {min_points} positive errors, got {int(ok.sum())}")
    return float(np.polyfit(np.log(dofs[ok]), np.log(errors[ok]), 1)[0])


def convergence_trace(dofs, quantities: dict, last: int | None = None,
                      min_points: int = 3) -> dict:
    """Observed orders: slope per named error sequence, optionally over the last rows only."""
    dofs = np.asarray(dofs, dtype=float)
    sl = slice(-last, None) if last else slice(None)
    return {name: convergence_slope(dofs[sl], np.asarray(vals)[sl], min_points)
            for name, vals in quantities.items()}


def multilevel_solve(config: MultilevelConfig, domain: str, coeff: CoefficientField,
                     keep_levels: bool = False, callback=None) -> MultilevelResult:
    """Run the full scheme: direct solve on T_{h_1}, then corrections up to T_{h_n}."""
    coarse_mesh = build_initial_mesh(domain, config.H)
    coarse = Level.build(coarse_mesh, coeff, index=0)
    mesh = coarse_mesh
    for _ in range(config.h1_refinements):
        mesh = refine_uniform(mesh)
    level = Level.build(mesh, coeff, index=1)
    clusters = solve_direct(
        level.mesh, level.dofmap, coeff, config.nev, config.default_sigma(),
        forms=level.forms, k0_tol=config.k0_tol, radius=config.radius,
        first=config.first, tol=config.eig_tol,
    )
    if config.cluster is not None:
        clusters = [pin_cluster(clusters, *config.cluster, level.forms, seed=config.seed)]
    for c in clusters:
        c.level = 1
    rows: list[TraceRow] = []
    _trace_rows(level, clusters, rows)
    log.info("level 1: %d dofs, k = %s", level.dofs, np.round(k_values(np.concatenate([c.lambdas for c in clusters])), 6))
    if callback:
        callback(level, clusters)
    kept = [level]
    P_H = prolongation(coarse.dofmap, level.dofmap)
    for ell in range(2, config.levels + 1):
        fine = Level.build(refine_uniform(level.mesh), coeff, index=ell)
        P_step = prolongation(level.dofmap, fine.dofmap)
        P_H = (P_step @ P_H).tocsr()
        cspace = CoarseSpace(P_H, fine)
        clusters = correct_all(cspace, clusters, fine, P_step, config.radius, config.drop_tol,
                               config.seed)
        fine.release()
        _trace_rows(fine, clusters, rows)
        log.info("level %d: %d dofs, k = %s", ell, fine.dofs, np.round(k_values(np.concatenate([c.lambdas for c in clusters])), 6))
        if callback:
            callback(fine, clusters)
        if not keep_levels:
            level.forms = None
            kept = []
        level = fine
        kept.append(level)
    return MultilevelResult(clusters, rows, kept, coarse)
