import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from transeig.forms import (
    DEGREE4, ExprError, assemble, assemble_forms, apply_T, coercivity_constant,
    constant_field, parse_expr, preset, t_matrix,
)
from transeig.forms.assembly import local_mass, local_stiffness
from transeig.geometry import TriMesh, build_initial_mesh, refine_uniform
from transeig.space import FieldVector, build_dof_map, prolongation

from conftest import problem


# expressions ---------------------------------------------------------------

@pytest.mark.parametrize("text, x, expected", [
    ("2+abs(x1+x2)", (0.5, -1.0), 2.5),
    ("4+2*(x1+x2)", (0.0, 0.0), 4.0),
    ("2+3*2^2", (0.3, 0.7), 14.0),
    ("-x1^2", (3.0, 0.0), -9.0),
    ("2^3^2", (0.0, 0.0), 512.0),
    ("1/2+x1^2/8", (2.0, 0.0), 1.0),
    ("x1*x2/8 - -1", (2.0, 4.0), 2.0),
    ("1e-1*x2", (0.0, 5.0), 0.5),
])
def test_expression_values(text, x, expected):
    assert parse_expr(text)(*x) == pytest.approx(expected, abs=1e-14)


def test_expression_vectorised():
    f = parse_expr("x1 + 2*x2")
    x = np.linspace(0, 1, 7)
    assert np.allclose(f(x, x), 3 * x)
    pts = np.column_stack([x, x])
    assert np.allclose(f(pts), 3 * x)
    assert parse_expr("3").is_constant
    assert not parse_expr("3*x1").is_constant
    assert parse_expr("3")(x, x).shape == x.shape


@pytest.mark.parametrize("text, pos", [
    ("2+*x1", 2),
    ("x3", 0),
    ("(x1", 3),
    ("2 $ 3", 2),
    ("abs x1", 4),
    ("1 2", 2),
])
def test_expression_errors_report_position(text, pos):
    with pytest.raises(ExprError) as err:
        parse_expr(text)
    assert err.value.position == pos
    assert f"position {pos}" in str(err.value)


def test_expression_runtime_errors():
    with pytest.raises(ExprError):
        parse_expr("")
    with pytest.raises(ExprError):
        parse_expr("1/x1")(0.0, 1.0)
    with pytest.raises(ExprError):
        parse_expr("(-1)^0.5")(0.0, 0.0)


# quadrature ----------------------------------------------------------------

def test_quadrature_weights_and_points():
    assert DEGREE4.weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(DEGREE4.points.sum(axis=1), 1.0)
    assert np.all(DEGREE4.points > 0)


def _monomial_exact(i, j):
    # integral of x^i y^j over the reference triangle, divided by its area 1/2
    from math import factorial
    return 2.0 * factorial(i) * factorial(j) / factorial(i + j + 2)


@pytest.mark.parametrize("i, j", [(i, j) for i in range(5) for j in range(5) if i + j <= 4])
def test_quadrature_degree4_exact(i, j):
    corners = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    x = DEGREE4.physical_points(corners)[0]
    approx = np.sum(DEGREE4.weights * x[:, 0] ** i * x[:, 1] ** j)
    assert approx == pytest.approx(_monomial_exact(i, j), abs=1e-15)


# local matrices ------------------------------------------------------------

def _reference_mesh():
    return TriMesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                   np.array([[0, 1, 2]]), "unit-square")


def test_local_stiffness_reference_triangle():
    K = local_stiffness(_reference_mesh())[0]
    expected = 0.5 * np.array([[2.0, -1.0, -1.0], [-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])
    assert np.allclose(K, expected, atol=1e-15)
    A = np.array([[[2.0, 0.5], [0.5, 3.0]]])
    KA = local_stiffness(_reference_mesh(), A)[0]
    assert np.allclose(KA, KA.T)
    assert np.allclose(KA.sum(axis=1), 0.0, atol=1e-14)


def test_local_mass_reference_triangle():
    M = local_mass(_reference_mesh())[0]
    expected = (0.5 / 12.0) * np.array([[2.0, 1, 1], [1, 2, 1], [1, 1, 2]])
    assert np.allclose(M, expected, atol=1e-15)


# global forms --------------------------------------------------------------

def test_b_with_unit_index_vanishes_on_constrained_diagonal():
    # with n = 1, b(U, U) = ||w||^2 - ||v||^2, zero when w == v
    mesh = build_initial_mesh("unit-square", 0.25)
    dm = build_dof_map(mesh)
    forms = assemble_forms(mesh, dm, constant_field(2.0, 1.0))
    U = dm.from_components(np.ones(mesh.n_vertices), np.ones(mesh.n_vertices))
    assert abs(U @ forms.b @ U) <= 1e-14


@pytest.mark.parametrize("domain, area", [("unit-square", 1.0), ("L-shape", 3.0)])
def test_gramW_of_constant_pair(domain, area):
    mesh = build_initial_mesh(domain, 0.25)
    dm = build_dof_map(mesh)
    forms = assemble_forms(mesh, dm, preset("lshape"))
    one = dm.from_components(np.ones(mesh.n_vertices), np.ones(mesh.n_vertices))
    assert one @ forms.gramW @ one == pytest.approx(2 * area, rel=1e-13)
    assert mesh.total_area() == pytest.approx(area, rel=1e-14)


def test_forms_symmetric_and_gram_spd(square_coarse):
    _, dm, _, forms = square_coarse
    for name in ("a", "b", "gramV", "gramW"):
        M = forms[name]
        assert abs(M - M.T).max() <= 1e-14 * abs(M).max()
    for name in ("gramV", "gramW"):
        assert np.linalg.eigvalsh(forms[name].toarray()).min() > 0
    with pytest.raises(KeyError):
        forms["c"]
    with pytest.raises(ValueError):
        assemble(dm.mesh, dm, preset("square-cond2"), "c")


@pytest.mark.parametrize("domain", ["unit-square", "L-shape"])
def test_galerkin_consistency(domain):
    coarse = build_initial_mesh(domain, 0.5)
    fine = refine_uniform(coarse)
    dc, df = build_dof_map(coarse), build_dof_map(fine)
    coeff = constant_field(2.0, 8.0)
    Fc, Ff = assemble_forms(coarse, dc, coeff), assemble_forms(fine, df, coeff)
    P = prolongation(dc, df)
    for name in ("a", "b", "gramV", "gramW"):
        diff = (P.T @ Ff[name] @ P - Fc[name]).toarray()
        assert np.abs(diff).max() <= 1e-12 * abs(Fc[name]).max()


def test_forms_reject_foreign_dofmap():
    m1 = build_initial_mesh("unit-square", 0.5)
    m2 = build_initial_mesh("unit-square", 0.5)
    with pytest.raises(ValueError):
        assemble_forms(m1, build_dof_map(m2), preset("square-cond2"))


# T isomorphism -------------------------------------------------------------

@pytest.mark.parametrize("condition", ["gamma>1", "gamma<1"])
def test_T_involution_exact(condition, square_coarse, disk_coarse):
    for _, dm, _, _ in (square_coarse, disk_coarse):
        T = t_matrix(dm, condition)
        TT = (T @ T - sp.identity(dm.total_dofs)).tocsr()
        TT.eliminate_zeros()
        assert TT.nnz == 0


@given(seed=st.integers(0, 2**32 - 1), condition=st.sampled_from(["gamma>1", "gamma<1"]))
def test_T_involution_on_random_fields(seed, condition, square_coarse):
    _, dm, _, _ = square_coarse
    # integer data keeps 2w - (2w - v) free of rounding
    U = FieldVector(np.random.default_rng(seed).integers(-50, 50, dm.total_dofs), dm)
    V = apply_T(apply_T(U, condition), condition)
    assert np.array_equal(V.coefficients, U.coefficients)
    # the matrix and the field form agree
    assert np.allclose(t_matrix(dm, condition) @ U.coefficients, apply_T(U, condition).coefficients,
                       atol=1e-14)


@given(seed=st.integers(0, 2**32 - 1))
def test_T_fixes_diagonal_pairs_and_boundary_traces(seed, square_coarse):
    mesh, dm, _, _ = square_coarse
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal(mesh.n_vertices)
    U = FieldVector(dm.from_components(phi, phi), dm)
    assert np.allclose(apply_T(U, "gamma>1").coefficients, U.coefficients, atol=1e-14)
    # traces stay equal on the boundary for arbitrary pairs
    X = FieldVector(rng.standard_normal(dm.total_dofs), dm)
    b = mesh.boundary_vertices
    for cond in ("gamma>1", "gamma<1"):
        Y = apply_T(X, cond)
        assert np.allclose(Y.w[b], Y.v[b], atol=1e-14)


def test_T_unknown_condition(square_coarse):
    _, dm, _, _ = square_coarse
    with pytest.raises(ValueError):
        t_matrix(dm, "gamma=1")


# coercivity ----------------------------------------------------------------

def test_coercivity_disk(disk_coarse):
    mesh, dm, coeff, _ = disk_coarse
    c = coercivity_constant(mesh, dm, coeff)
    assert c >= 0.19
    assert c == pytest.approx(0.3831, abs=1e-3)  # regression value, 16-fan mesh at H = 0.25


def test_coercivity_identity_unit_index_is_zero():
    # a(U, TU) = ||w - v||_1^2 here, so the infimum is exactly zero
    mesh = build_initial_mesh("unit-square", 0.25)
    dm = build_dof_map(mesh)
    c = coercivity_constant(mesh, dm, constant_field(1.0, 1.0))
    assert abs(c) <= 1e-10


def test_coercivity_alternate_T_square_cond3():
    mesh, dm, coeff, _ = problem("square-cond3")
    assert coeff.condition == "gamma<1"
    assert coercivity_constant(mesh, dm, coeff) > 0


def test_coercivity_sparse_route_matches_dense():
    mesh, dm, coeff, _ = problem("square-cond2", H=0.25, refine=1)
    c_sparse = coercivity_constant(mesh, dm, coeff, dense_max=0)
    # dense reference on the same space
    import scipy.linalg as sla
    forms = assemble_forms(mesh, dm, coeff)
    TA = t_matrix(dm, coeff.condition).T @ forms.a
    S = 0.5 * (TA + TA.T).toarray()
    c_dense = sla.eigh(S, forms.gramV.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0]
    assert c_sparse == pytest.approx(c_dense, abs=1e-8)


def test_coefficient_checks():
    for name in ("disk-a2n8", "square-cond2", "square-cond3", "lshape"):
        from transeig.forms import PRESET_DOMAINS
        preset(name).check(PRESET_DOMAINS[name])
    with pytest.raises(ValueError):
        constant_field(1.0, 1.0).check("unit-square")
    with pytest.raises(ValueError):
        preset("nope")
