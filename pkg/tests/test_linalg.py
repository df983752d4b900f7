import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from transeig import linalg
from transeig.linalg import (
    LinAlgFailure, SingularPivotError, dense_eig_generalized,
    gram_orthonormalize, record_operations, shift_invert_arnoldi, sparse_lu, subspace_gap,
)


# sparse LU -----------------------------------------------------------------

def test_lu_identity():
    lu = sparse_lu(sp.identity(5, format="csc"))
    b = np.arange(5.0)
    assert np.array_equal(lu.solve(b), b)


def test_lu_poisson_1d():
    n = 50
    h = 1.0 / (n + 1)
    T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]) / h**2
    x = sparse_lu(T).solve(np.ones(n))
    i = np.arange(1, n + 1)
    assert np.abs(x - h**2 * i * (n + 1 - i) / 2).max() <= 1e-12


def test_lu_random_diagonally_dominant(rng):
    n = 200
    A = sp.random(n, n, density=0.05, random_state=1, format="csr")
    A = A + sp.diags(np.asarray(abs(A).sum(axis=1)).ravel() + 1.0)
    b = rng.standard_normal(n)
    x = sparse_lu(A).solve(b)
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10
    # complex right-hand side and transpose solve on a real factorisation
    bc = b + 1j * rng.standard_normal(n)
    lu = sparse_lu(A)
    assert np.linalg.norm(A @ lu.solve(bc) - bc) <= 1e-10 * np.linalg.norm(bc)
    assert np.linalg.norm(A.T @ lu.solve(bc, trans="T") - bc) <= 1e-10 * np.linalg.norm(bc)


def test_lu_singular_pivot():
    A = sp.csc_matrix(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(SingularPivotError) as err:
        sparse_lu(A)
    assert isinstance(err.value, LinAlgFailure)
    with pytest.raises(ValueError):
        sparse_lu(sp.csc_matrix(np.ones((2, 3))))


# dense generalized eigensolver ---------------------------------------------

def test_dense_eig_diagonal():
    lam, V = dense_eig_generalized(np.diag([2.0, 3.0]), np.eye(2))
    assert np.allclose(np.sort(lam.real), [2.0, 3.0])
    assert np.allclose(lam.imag, 0.0)


def test_dense_eig_rotation():
    lam, V = dense_eig_generalized(np.array([[0.0, -1.0], [1.0, 0.0]]), np.eye(2))
    assert np.allclose(sorted(lam, key=lambda z: z.imag), [-1j, 1j], atol=1e-14)


@given(seed=st.integers(0, 2**32 - 1))
def test_dense_eig_random_residual_and_closure(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((20, 20))
    B = rng.standard_normal((20, 20)) + 20 * np.eye(20)
    lam, V, W = dense_eig_generalized(A, B, left=True)
    scale = np.linalg.norm(A, 1) + np.abs(lam) * np.linalg.norm(B, 1)
    res = np.linalg.norm(A @ V - (B @ V) * lam, axis=0) / np.linalg.norm(V, axis=0)
    assert np.all(res <= 1e-9 * scale)
    resl = np.linalg.norm(W.conj().T @ A - lam[:, None] * (W.conj().T @ B), axis=1)
    assert np.all(resl <= 1e-9 * scale * np.linalg.norm(W, axis=0))
    # spectra of real pencils are closed under conjugation
    for z in lam:
        assert np.min(np.abs(lam - np.conj(z))) <= 1e-9 * max(1, abs(z))


def test_dense_eig_singular_B_raises():
    with pytest.raises(LinAlgFailure):
        dense_eig_generalized(np.eye(2), np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        dense_eig_generalized(np.eye(2), np.eye(3))


# shift-invert Arnoldi ------------------------------------------------------

def test_arnoldi_small_diagonal():
    A = sp.diags([2.0, 3.0, 10.0])
    lam, V = shift_invert_arnoldi(A, sp.identity(3), 2.4, 2)
    assert np.allclose(np.sort(lam.real), [2.0, 3.0])


def test_arnoldi_matches_dense(square_coarse):
    _, _, _, forms = square_coarse
    lam, V = shift_invert_arnoldi(forms.a, forms.b, 8.0, 8)
    ref = np.linalg.eigvals(np.linalg.solve(forms.b.toarray(), forms.a.toarray()))
    for z in lam:
        assert np.min(np.abs(ref - z)) <= 1e-8 * abs(z)
    # the nearest eigenvalues to the shift are the ones returned
    nearest = np.sort(np.abs(ref - 8.0))[:8]
    assert np.allclose(np.sort(np.abs(lam - 8.0))[:8], nearest, rtol=1e-8)


def test_arnoldi_conjugate_closed_large():
    rng = np.random.default_rng(5)
    n = 300
    A = sp.diags(np.linspace(1, 30, n)) + sp.random(n, n, density=0.02, random_state=rng) * 3
    B = sp.identity(n)
    lam, V = shift_invert_arnoldi(A, B, 10.0, 10)
    for z in lam:
        assert np.min(np.abs(lam - np.conj(z))) <= 1e-9 * abs(z)
    res = np.linalg.norm(A @ V - (B @ V) * lam, axis=0)
    assert res.max() <= 1e-8


def test_arnoldi_rejects_bad_nev():
    with pytest.raises(ValueError):
        shift_invert_arnoldi(sp.identity(3), sp.identity(3), 0.0, 0)


def test_record_operations():
    with record_operations() as log:
        sparse_lu(sp.identity(4, format="csc"))
        dense_eig_generalized(np.eye(3), np.eye(3))
    assert log == [("lu", 4), ("dense_eig", 3)]
    sparse_lu(sp.identity(4, format="csc"))
    assert len(log) == 2
    assert linalg._LOGS == []


# orthonormalisation and gaps -----------------------------------------------

def test_gram_orthonormalize(rng):
    G = sp.diags(rng.uniform(1, 2, 30))
    X = rng.standard_normal((30, 4))
    Q = gram_orthonormalize(X, G)
    assert np.allclose(Q.T @ (G @ Q), np.eye(4), atol=1e-12)
    with pytest.raises(LinAlgFailure):
        gram_orthonormalize(np.column_stack([X[:, 0], 2 * X[:, 0]]), G)
    Qd = gram_orthonormalize(np.column_stack([X, X[:, :2] @ [1.0, -3.0]]), G, drop_tol=1e-10)
    assert Qd.shape[1] == 4


def test_subspace_gap_examples():
    I = sp.identity(3)
    e1, e2 = np.eye(3)[:, :1], np.eye(3)[:, 1:2]
    assert subspace_gap(e1, e1, I) == pytest.approx(0.0, abs=1e-15)
    assert subspace_gap(e1, e2, I) == pytest.approx(1.0, abs=1e-15)
    t = 0.3
    u = np.array([[np.cos(t)], [np.sin(t)], [0.0]])
    assert subspace_gap(e1, u, I) == pytest.approx(np.sin(t), abs=1e-14)


@given(seed=st.integers(0, 2**32 - 1))
def test_subspace_gap_properties(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((12, 3))
    Y = rng.standard_normal((12, 3))
    G = sp.diags(rng.uniform(0.5, 2, 12))
    g = subspace_gap(X, Y, G)
    assert 0 <= g <= 1
    assert g == pytest.approx(subspace_gap(Y, X, G), abs=1e-12)
    # invariant under change of basis
    R = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    assert subspace_gap(X, X @ R, G) <= 1e-7
