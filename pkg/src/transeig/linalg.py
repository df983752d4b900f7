"""Sparse factorisation, eigensolvers and subspace gaps.

Sparse LU is SuperLU (COLAMD ordering) and the dense generalized
eigensolver is LAPACK, both through scipy.  Shift-invert Arnoldi drives
ARPACK with the factorised shifted operator.  Every eigensolver call is
recorded in :data:`OPERATION_LOG` while a :func:`record_operations` block
is active, so callers can verify which problems were solved and at what
size.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinAlgFailure(RuntimeError):
    pass


class SingularPivotError(LinAlgFailure):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class ConvergenceError(LinAlgFailure):
    pass


_LOGS: list = []


@contextlib.contextmanager
def record_operations():
    """Collect (kind, dimension) tuples for every solve inside the block."""
    log: list = []
    _LOGS.append(log)
    try:
        yield log
    finally:
        _LOGS.remove(log)


def _record(kind, dim):
    for log in _LOGS:
        log.append((kind, int(dim)))


@dataclass
class LUFactors:
    """Sparse LU of a square matrix; ``solve(rhs, trans)`` handles complex rhs."""

    lu: spla.SuperLU
    shape: tuple
    dtype: np.dtype

    def solve(self, rhs, trans: str = "N"):
        rhs = np.asarray(rhs)
        if np.iscomplexobj(rhs) and not np.iscomplexobj(np.empty(0, self.dtype)):
            return self.lu.solve(np.ascontiguousarray(rhs.real), trans) + 1j * self.lu.solve(
                np.ascontiguousarray(rhs.imag), trans
            )
        return self.lu.solve(np.ascontiguousarray(rhs, dtype=np.result_type(rhs, self.dtype)), trans)


def sparse_lu(mat, pivot_tol: float = 1e-14) -> LUFactors:
    mat = sp.csc_matrix(mat)
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("matrix must be square")
    _record("lu", mat.shape[0])
    try:
        lu = spla.splu(mat, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularPivotError(f"sparse LU failed: {exc}") from exc
    d = np.abs(lu.U.diagonal())
    scale = abs(mat).max() if mat.nnz else 1.0
    bad = np.nonzero(d <= pivot_tol * scale)[0]
    if bad.size:
        row = int(lu.perm_r.argsort()[bad[0]])
        raise SingularPivotError(
            f"numerically singular pivot {d[bad[0]]:.3e} at row {row}", row=row
        )
    return LUFactors(lu, mat.shape, mat.dtype)


def dense_eig_generalized(A, B, left: bool = False, check: bool = True):
    """All eigenpairs of ``A x = lam B x`` for dense matrices.

    Returns ``(lams, right)`` or ``(lams, right, left_vectors)`` where the
    left vectors satisfy ``y^H A = lam y^H B``.  Infinite eigenvalues (from
    a singular B) raise.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise ValueError("A and B must be square and of equal size")
    _record("dense_eig", A.shape[0])
    try:
        if left:
            lam, vl, vr = sla.eig(A, B, left=True, right=True)
        else:
            lam, vr = sla.eig(A, B)
    except sla.LinAlgError as exc:
        raise ConvergenceError(f"QZ iteration failed: {exc}") from exc
    if not np.all(np.isfinite(lam)):
        raise LinAlgFailure("B is singular to working precision")
    if check:
        nA = np.linalg.norm(A, 1)
        nB = np.linalg.norm(B, 1)
        res = np.linalg.norm(A @ vr - (B @ vr) * lam, axis=0) / np.linalg.norm(vr, axis=0)
        bound = 1e-9 * (nA + np.abs(lam) * nB)
        if np.any(res > bound):
            raise ConvergenceError("dense eigenpair residual above tolerance")
    if left:
        return lam, vr, vl
    return lam, vr


def conjugate_closure(lams, vecs, tol: float = 1e-9):
    """Append missing conjugate partners of non-real eigenpairs of real pencils."""
    lams = list(lams)
    cols = [vecs[:, i] for i in range(vecs.shape[1])]
    scale = max(1.0, max((abs(z) for z in lams), default=1.0))
    for i in range(len(lams)):
        z = lams[i]
        if abs(z.imag) <= tol * scale:
            continue
        if not any(abs(w - np.conj(z)) <= 1e-7 * scale for w in lams):
            lams.append(np.conj(z))
            cols.append(np.conj(cols[i]))
    return np.array(lams, dtype=complex), np.column_stack(cols)


def shift_invert_arnoldi(A, B, sigma, nev: int, tol: float = 1e-10,
                         ncv: int | None = None, max_restarts: int = 40, v0=None):
    """Eigenpairs of ``A x = lam B x`` nearest ``sigma``.

    ARPACK is run on ``(A - sigma B)^{-1} B`` whose dominant eigenvalues
    ``1 / (lam - sigma)`` correspond to the wanted ``lam``.  For real
    matrices, conjugate partners cut off by ``nev`` are appended, so the
    returned list may hold ``nev + 1`` pairs.
    """
    if nev < 1:
        raise ValueError("nev must be at least 1")
    A = sp.csc_matrix(A)
    B = sp.csc_matrix(B)
    n = A.shape[0]
    real_problem = np.isrealobj(A.data) and np.isrealobj(B.data)
    sigma = complex(sigma)
    if n <= max(2 * nev + 2, 60):
        lam, vec = dense_eig_generalized(A.toarray(), B.toarray(), check=False)
        order = np.argsort(np.abs(lam - sigma), kind="stable")[:nev]
        lam, vec = lam[order], vec[:, order]
    else:
        shifted = A - sigma.real * B if sigma.imag == 0 else A.astype(complex) - sigma * B
        lu = sparse_lu(shifted)
        dtype = np.complex128 if sigma.imag != 0 else A.dtype

        def matvec(x):
            return lu.solve(B @ x)

        op = spla.LinearOperator((n, n), matvec=matvec, dtype=dtype)
        ncv = ncv or min(n - 1, max(2 * nev + 10, 30))
        if v0 is None:
            v0 = np.ones(n, dtype=dtype) + np.linspace(0, 1, n)
        _record("arnoldi", n)
        try:
            nu, vec = spla.eigs(op, k=min(nev, n - 2), which="LM", ncv=ncv,
                                tol=tol * 1e-2, maxiter=max_restarts * ncv, v0=v0)
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceError(f"Arnoldi did not converge: {exc}") from exc
        lam = sigma + 1.0 / nu
        order = np.argsort(np.abs(lam - sigma), kind="stable")
        lam, vec = lam[order], vec[:, order]
    if real_problem:
        lam, vec = conjugate_closure(lam, vec)
    vec = vec / np.linalg.norm(vec, axis=0)
    nA = spla.norm(A, 1)
    nB = spla.norm(B, 1)
    res = np.linalg.norm(A @ vec - (B @ vec) * lam, axis=0)
    if np.any(res > max(tol, 1e-12) * 1e2 * (nA + np.abs(lam) * nB)):
        raise ConvergenceError("Arnoldi eigenpair residual above tolerance")
    return lam, vec


def gram_orthonormalize(basis, gram, drop_tol: float | None = None):
    """Orthonormalise columns in the ``gram`` inner product.

    Uses Cholesky of the small Gram matrix; raises on rank deficiency unless
    ``drop_tol`` is given, in which case dependent columns are dropped
    (modified Gram-Schmidt with a relative residual threshold).
    """
    basis = np.asarray(basis)
    if basis.ndim == 1:
        basis = basis[:, None]
    if drop_tol is None:
        G = basis.conj().T @ (gram @ basis)
        G = 0.5 * (G + G.conj().T)
        try:
            L = np.linalg.cholesky(G)
        except np.linalg.LinAlgError:
            raise LinAlgFailure("rank-deficient basis") from None
        if np.min(np.abs(np.diag(L))) ** 2 < 1e-13 * np.max(np.abs(np.diag(G))):
            raise LinAlgFailure("rank-deficient basis")
        return sla.solve_triangular(L, basis.T, lower=True).T if np.isrealobj(basis) else \
            sla.solve_triangular(L.conj(), basis.T, lower=True).T
    cols = []
    for j in range(basis.shape[1]):
        x = basis[:, j].astype(complex)
        nrm0 = np.sqrt(abs(np.vdot(x, gram @ x)))
        for _ in range(2):
            for q in cols:
                x = x - q * np.vdot(q, gram @ x)
        nrm = np.sqrt(abs(np.vdot(x, gram @ x)))
        if nrm0 == 0 or nrm < drop_tol * nrm0:
            continue
        cols.append(x / nrm)
    if not cols:
        return np.zeros((basis.shape[0], 0), dtype=complex)
    return np.column_stack(cols)


def _one_sided_gap(Qa, Qb, gram):
    if Qa.shape[1] == 0:
        return 0.0
    R = Qa - Qb @ (Qb.conj().T @ (gram @ Qa))
    H = R.conj().T @ (gram @ R)
    H = 0.5 * (H + H.conj().T)
    top = float(np.max(np.linalg.eigvalsh(H)))
    return float(np.sqrt(min(max(top, 0.0), 1.0)))


def subspace_gap(basis1, basis2, gram) -> float:
    """Symmetric gap max(sup_a dist(a, B), sup_b dist(b, A)) in the gram norm."""
    if gram is None:
        gram = sp.identity(np.asarray(basis1).shape[0])
    Q1 = gram_orthonormalize(basis1, gram)
    Q2 = gram_orthonormalize(basis2, gram)
    return max(_one_sided_gap(Q1, Q2, gram), _one_sided_gap(Q2, Q1, gram))
