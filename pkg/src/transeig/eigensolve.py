"""Primal/adjoint discrete eigensolution and eigenvalue bookkeeping.

Eigenvalues are in the shifted form ``lam = k**2 + 1``.  Vectors are
coefficient arrays in the constrained product space, stored column-wise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .forms import Forms, assemble_forms
from .space import DofMap, FieldVector

K0_TOL = 1e-3
CLUSTER_RADIUS = 5e-3


class EigenError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransmissionValue:
    lam: complex
    k: complex


def to_k(lam) -> TransmissionValue:
    """Principal root ``k = sqrt(lam - 1)`` with Re k >= 0 and Im k >= 0 on ties."""
    lam = complex(lam)
    k = np.sqrt(complex(lam - 1))
    if k.real < 0 or (k.real == 0 and k.imag < 0):
        k = -k
    return TransmissionValue(lam, complex(k))


def k_values(lams) -> np.ndarray:
    return np.array([to_k(z).k for z in np.atleast_1d(lams)], dtype=complex)


@dataclass
class EigenCluster:
    """m discrete eigenvalues approximating one continuous eigenvalue.

    ``primal`` and ``adjoint`` hold the bases of the algebraic eigenspaces as
    columns; column j belongs to ``lambdas[j]`` (adjoint column j to its
    conjugate).
    """

    lambdas: np.ndarray
    primal: np.ndarray
    adjoint: np.ndarray
    dofmap: DofMap
    q: int | None = None
    level: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=complex)
        if self.q is None:
            self.q = len(self.lambdas)

    @property
    def m(self) -> int:
        return len(self.lambdas)

    @property
    def mean(self) -> complex:
        return complex(np.mean(self.lambdas))

    @property
    def k(self) -> np.ndarray:
        return k_values(self.lambdas)

    def fields(self, which: str = "primal"):
        vecs = self.primal if which == "primal" else self.adjoint
        return [FieldVector(vecs[:, j], self.dofmap) for j in range(vecs.shape[1])]

    def conjugate(self) -> "EigenCluster":
        return EigenCluster(
            np.conj(self.lambdas), np.conj(self.primal), np.conj(self.adjoint),
            self.dofmap, self.q, self.level, dict(self.meta),
        )


def normalize(U, gramW) -> np.ndarray:
    """Unit W-norm with the largest-modulus coefficient made real positive."""
    if isinstance(U, FieldVector):
        U = U.coefficients
    U = np.asarray(U, dtype=complex)
    nrm = np.sqrt(abs(np.vdot(U, gramW @ U)))
    if nrm == 0 or not np.isfinite(nrm):
        raise EigenError("cannot normalize a zero vector")
    U = U / nrm
    i = int(np.argmax(np.abs(U)))
    U = U * (abs(U[i]) / U[i])
    U[i] = abs(U[i])
    return U


def normalize_columns(V, gramW) -> np.ndarray:
    V = np.asarray(V, dtype=complex)
    if V.ndim == 1:
        return normalize(V, gramW)
    return np.column_stack([normalize(V[:, j], gramW) for j in range(V.shape[1])])


def match_cluster(previous, candidates) -> list[int]:
    """Greedy nearest-neighbour assignment of previous eigenvalues to candidates.

    ``candidates`` is a sequence of eigenvalues (or ``(eigenvalue, vector)``
    pairs).  Pairs are taken in order of increasing distance, each side used
    once; returns the candidate index chosen for each previous value.
    """
    prev = np.asarray(previous, dtype=complex)
    cand = [c[0] if isinstance(c, tuple) else c for c in candidates]
    cand = np.asarray(cand, dtype=complex)
    if len(cand) < len(prev):
        raise EigenError("fewer candidates than eigenvalues to match")
    dist = np.abs(prev[:, None] - cand[None, :])
    order = np.argsort(dist, axis=None, kind="stable")
    chosen = [-1] * len(prev)
    used_p, used_c = set(), set()
    for flat in order:
        i, j = divmod(int(flat), len(cand))
        if i in used_p or j in used_c:
            continue
        chosen[i] = j
        used_p.add(i)
        used_c.add(j)
        if len(used_p) == len(prev):
            break
    return chosen


def group_clusters(lams, radius: float = CLUSTER_RADIUS) -> list[list[int]]:
    """Single-linkage groups of eigenvalues within ``radius * |lam|``, ordered by Re k."""
    lams = np.asarray(lams, dtype=complex)
    ks = k_values(lams)
    order = sorted(range(len(lams)), key=lambda i: (round(ks[i].real, 12), ks[i].imag))
    groups: list[list[int]] = []
    for i in order:
        for g in groups:
            if any(abs(lams[i] - lams[j]) <= radius * max(abs(lams[i]), abs(lams[j])) for j in g):
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


_BORDER_SEED = 20140101


def algebraic_eigenspace(Q, lambdas, A, B, gramW=None, max_order: int = 8,
                         consistency_tol: float = 1e-8, seed: int = _BORDER_SEED):
    """Extend eigenvectors by generalized eigenvectors of increasing order.

    For each column U^1 of ``Q`` solves the chain
    ``(A - lam B) U^p = lam A U^{p-1}`` with ``(B U^p) ⟂ Q``, using a square
    bordered system whose extra columns are fixed generic vectors.  A
    nonzero multiplier means the right-hand side left the range of
    ``A - lam B``, i.e. the ascent has been reached.

    Returns ``(basis, lambdas)`` with the generalized vectors appended.
    """
    Q = np.asarray(Q, dtype=complex)
    if Q.ndim == 1:
        Q = Q[:, None]
    lambdas = np.asarray(lambdas, dtype=complex)
    n, q = Q.shape
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n, q))
    Y /= np.linalg.norm(Y, axis=0)
    Z = (B.conj().T @ Q)  # constraint rows Q^H B
    basis = [Q[:, j] for j in range(q)]
    lams = list(lambdas)
    for j in range(q):
        lam = lambdas[j]
        T = (A - lam * B).astype(complex)
        bordered = sp.bmat([[T, sp.csr_matrix(Y)], [sp.csr_matrix(Z.conj().T), None]], format="csc")
        try:
            lu = linalg.sparse_lu(bordered)
        except linalg.SingularPivotError as exc:
            raise EigenError(f"bordered system singular: {exc}") from exc
        prev = Q[:, j]
        for _ in range(2, max_order + 1):
            rhs = np.concatenate([lam * (A @ prev), np.zeros(q)])
            sol = lu.solve(rhs)
            x, mult = sol[:n], sol[n:]
            if np.linalg.norm(Y @ mult) > consistency_tol * np.linalg.norm(rhs):
                break
            basis.append(x)
            lams.append(lam)
            prev = x
    V = np.column_stack(basis)
    return V, np.array(lams, dtype=complex)


def _select_first(lams, count, radius=CLUSTER_RADIUS):
    """Indices of the first ``count`` eigenvalues by Re k, whole clusters kept together."""
    groups = group_clusters(lams, radius)
    picked: list[list[int]] = []
    total = 0
    for g in groups:
        if total >= count:
            break
        picked.append(g)
        total += len(g)
    return picked


def solve_direct(mesh, dofmap, coeff, nev: int, sigma, *, forms: Forms | None = None,
                 k0_tol: float = K0_TOL, radius: float = CLUSTER_RADIUS,
                 first: int | None = None, tol: float = 1e-10) -> list[EigenCluster]:
    """Primal and adjoint eigenpairs nearest ``sigma`` grouped into clusters.

    The adjoint problem is the transposed pencil solved at ``conj(sigma)``;
    its eigenvalues are matched to the conjugates of the primal ones.
    Eigenvalues with ``|k| < k0_tol`` (the constant pair at lam = 1) are
    dropped.  With ``first`` given, only the clusters covering the first
    ``first`` eigenvalues by Re k are returned.
    """
    if forms is None:
        forms = assemble_forms(mesh, dofmap, coeff)
    A, B, W = forms.a, forms.b, forms.gramW
    lam, V = linalg.shift_invert_arnoldi(A, B, sigma, nev, tol=tol)
    mu, Vs = linalg.shift_invert_arnoldi(A.T, B.T, np.conj(complex(sigma)), nev, tol=tol)

    keep = np.abs(k_values(lam)) >= k0_tol
    lam, V = lam[keep], V[:, keep]
    keep_s = np.abs(k_values(mu)) >= k0_tol
    mu, Vs = mu[keep_s], Vs[:, keep_s]
    if len(mu) < len(lam):
        raise EigenError("adjoint solve returned fewer eigenvalues than the primal solve")
    idx = match_cluster(np.conj(lam), mu)
    mismatch = np.abs(np.conj(lam) - mu[idx])
    if np.any(mismatch > 1e-6 * np.maximum(1.0, np.abs(lam))):
        raise EigenError(f"adjoint/primal eigenvalue mismatch {mismatch.max():.3e}")
    Vs = Vs[:, idx]

    groups = _select_first(lam, first, radius) if first else group_clusters(lam, radius)
    clusters = []
    for g in groups:
        clusters.append(
            EigenCluster(
                lam[g], normalize_columns(V[:, g], W), normalize_columns(Vs[:, g], W),
                dofmap, len(g), 0,
            )
        )
    return clusters


def eigen_residual(A, B, lam, U) -> float:
    """Relative residual ``||A u - lam B u|| / ((||A||_1 + |lam| ||B||_1) ||u||)``."""
    from scipy.sparse.linalg import norm as spnorm

    r = A @ U - lam * (B @ U)
    return float(np.linalg.norm(r) / ((spnorm(A, 1) + abs(lam) * spnorm(B, 1)) * np.linalg.norm(U)))
