"""Gradient-recovery error indicators and the adaptive multilevel loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .eigensolve import CLUSTER_RADIUS, K0_TOL, EigenCluster, k_values, solve_direct
from .forms import CoefficientField
from .forms.assembly import barycentric_gradients
from .geometry import TriMesh, build_initial_mesh, refine_adaptive, refine_uniform
from .multilevel import CoarseSpace, Level, MultilevelResult, _trace_rows, correct_all
from .space import build_dof_map, prolongation

log = logging.getLogger(__name__)


def element_gradients(u, mesh: TriMesh) -> np.ndarray:
    """Constant gradient of the P1 field with nodal values ``u`` on each triangle."""
    g = barycentric_gradients(mesh)
    return np.einsum("tid,ti->td", g, np.asarray(u)[mesh.triangles])


def zz_recover(u, mesh: TriMesh) -> np.ndarray:
    """Nodal gradients (nv, 2): area-weighted average over the incident triangles."""
    ge = element_gradients(u, mesh)
    area = mesh.areas
    nv = mesh.n_vertices
    num = np.zeros((nv, 2), dtype=ge.dtype)
    den = np.zeros(nv)
    for i in range(3):
        idx = mesh.triangles[:, i]
        np.add.at(num, idx, area[:, None] * ge)
        np.add.at(den, idx, area)
    return num / den[:, None]


def _local_sq(u, mesh: TriMesh) -> np.ndarray:
    """Per-triangle ``||grad u_h - G(u_h)||^2``, integrated exactly (G is P1)."""
    ge = element_gradients(u, mesh)
    G = zz_recover(u, mesh)
    d = ge[:, None, :] - G[mesh.triangles]  # (nt, 3, 2)
    s1 = np.sum(np.abs(d) ** 2, axis=(1, 2))
    s2 = np.sum(np.abs(d.sum(axis=1)) ** 2, axis=1)
    return mesh.areas / 12.0 * (s1 + s2)


@dataclass
class ErrorIndicators:
    eta: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        if np.any(self.eta < 0):
            raise ValueError("indicators must be nonnegative")

    @property
    def total(self) -> float:
        return float(np.sqrt(np.sum(self.eta**2)))


def indicators(clusters, mesh: TriMesh, dofmap=None) -> ErrorIndicators:
    """ZZ indicators summed over primal and adjoint fields and both components."""
    if isinstance(clusters, EigenCluster):
        clusters = [clusters]
    eta2 = np.zeros(mesh.n_triangles)
    for c in clusters:
        dm = dofmap or c.dofmap
        if dm.mesh is not mesh:
            raise ValueError("cluster is not defined on this mesh")
        for vecs in (c.primal, c.adjoint):
            for j in range(vecs.shape[1]):
                for E in (dm.extract_w, dm.extract_v):
                    eta2 += _local_sq(E @ vecs[:, j], mesh)
    return ErrorIndicators(np.sqrt(eta2))


def dorfler_mark(ind, theta: float = 0.5) -> set[int]:
    """Smallest greedy set (descending eta, ties by index) holding theta of total^2."""
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    eta = ind.eta if isinstance(ind, ErrorIndicators) else np.asarray(ind, dtype=float)
    order = np.argsort(-eta, kind="stable")
    e2 = eta[order] ** 2
    csum = np.cumsum(e2)
    if len(csum) == 0 or csum[-1] == 0:
        return set()
    count = int(np.searchsorted(csum, theta * csum[-1], side="left")) + 1
    return set(int(i) for i in order[:count])


@dataclass
class AdaptiveConfig:
    H: float
    first: int = 7
    nev: int = 16
    sigma: complex | None = None
    theta: float = 0.5
    max_dofs: int = 120_000
    max_iterations: int = 60
    radius: float = CLUSTER_RADIUS
    k0_tol: float = K0_TOL
    eig_tol: float = 1e-10
    drop_tol: float = 1e-10
    h1_refinements: int = 1
    seed: int = 20140101

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if self.max_dofs <= 0 or self.H <= 0:
            raise ValueError("max_dofs and H must be positive")


def adaptive_multilevel(config: AdaptiveConfig, domain: str, coeff: CoefficientField,
                        callback=None, mesh_callback=None) -> MultilevelResult:
    """Solve on T_{h_1}, then repeat: estimate, mark, bisect, correct.

    V_H stays the initial mesh throughout.  Refinement stops before the
    first mesh whose dof count would exceed ``max_dofs``.
    """
    if domain == "unit-disk":
        raise ValueError("adaptive refinement requires a polygonal domain")
    coarse_mesh = build_initial_mesh(domain, config.H)
    coarse = Level.build(coarse_mesh, coeff, index=0)
    mesh = coarse_mesh
    for _ in range(config.h1_refinements):
        mesh = refine_uniform(mesh)
    level = Level.build(mesh, coeff, index=1)
    sigma = config.sigma if config.sigma is not None else 1.0 + 2.0**2
    clusters = solve_direct(
        level.mesh, level.dofmap, coeff, config.nev, sigma, forms=level.forms,
        k0_tol=config.k0_tol, radius=config.radius, first=config.first, tol=config.eig_tol,
    )
    for c in clusters:
        c.level = 1
    rows = []
    _trace_rows(level, clusters, rows)
    if callback:
        callback(level, clusters)
    P_H = prolongation(coarse.dofmap, level.dofmap)
    for it in range(2, config.max_iterations + 2):
        ind = indicators(clusters, level.mesh, level.dofmap)
        marked = dorfler_mark(ind, config.theta)
        new_mesh = refine_adaptive(level.mesh, marked)
        if build_dof_map(new_mesh).total_dofs > config.max_dofs:
            break
        fine = Level.build(new_mesh, coeff, index=it)
        P_step = prolongation(level.dofmap, fine.dofmap)
        P_H = (P_step @ P_H).tocsr()
        clusters = correct_all(CoarseSpace(P_H, fine), clusters, fine, P_step,
                               config.radius, config.drop_tol, config.seed)
        fine.release()
        _trace_rows(fine, clusters, rows)
        log.info("adaptive %d: %d dofs, k = %s", it, fine.dofs,
                 np.round(k_values(np.concatenate([c.lambdas for c in clusters])), 5))
        if callback:
            callback(fine, clusters)
        if mesh_callback:
            mesh_callback(it, fine.mesh)
        level.forms = None
        level = fine
    return MultilevelResult(clusters, rows, [level], coarse)
