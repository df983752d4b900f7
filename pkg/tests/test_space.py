import numpy as np
import pytest
from hypothesis import given, strategies as st

from transeig.forms import assemble_forms, constant_field
from transeig.geometry import MeshError, build_initial_mesh, refine_adaptive, refine_uniform
from transeig.space import (
    FieldVector, build_dof_map, evaluate_field, prolongation, write_field_csv,
)


def test_dof_counts_small_meshes():
    m2 = build_initial_mesh("unit-square", 1.0)
    assert build_dof_map(m2).total_dofs == 4
    m9 = refine_uniform(m2)  # 3x3 nodes: one interior vertex
    dm = build_dof_map(m9)
    assert (dm.n_interior_w, dm.n_interior_v, dm.n_boundary_shared) == (1, 1, 8)
    assert dm.total_dofs == 10


@pytest.mark.parametrize("domain", ["unit-square", "L-shape", "unit-disk"])
def test_dofmap_invariants(domain):
    m = refine_uniform(refine_uniform(build_initial_mesh(domain, 0.125)))
    dm = build_dof_map(m)
    b = m.boundary_vertices
    assert np.array_equal(dm.w_dofs[b], dm.v_dofs[b])
    hit = np.union1d(dm.w_dofs, dm.v_dofs)
    assert np.array_equal(hit, np.arange(dm.total_dofs))
    assert dm.total_dofs == dm.n_interior_w + dm.n_interior_v + dm.n_boundary_shared
    # nearly twice the number of nodes on fine meshes
    assert 1.85 < dm.total_dofs / m.n_vertices < 2.0


def test_dof_of_rejects_component():
    dm = build_dof_map(build_initial_mesh("unit-square", 1.0))
    with pytest.raises(ValueError):
        dm.dof_of("u", 0)


def _chain(domain, n, H=0.5):
    meshes = [build_initial_mesh(domain, H)]
    for _ in range(n):
        meshes.append(refine_uniform(meshes[-1]))
    return meshes, [build_dof_map(m) for m in meshes]


@pytest.mark.parametrize("domain", ["unit-square", "L-shape"])
def test_prolongation_reproduces_coarse_field(domain, rng):
    meshes, dms = _chain(domain, 1)
    P = prolongation(dms[0], dms[1])
    c = rng.standard_normal(dms[0].total_dofs)
    f = P @ c
    n0 = meshes[0].n_vertices
    # nodal values at the old vertices are unchanged
    assert np.abs(dms[1].extract_w[:n0] @ f - dms[0].extract_w @ c).max() <= 1e-12
    assert np.abs(dms[1].extract_v[:n0] @ f - dms[0].extract_v @ c).max() <= 1e-12
    # and the field agrees everywhere (checked at random points)
    pts = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(0, 1, 50)])
    if domain == "unit-square":
        pts[:, 0] = np.abs(pts[:, 0])
    a = evaluate_field(FieldVector(c, dms[0]), pts)
    b = evaluate_field(FieldVector(f, dms[1]), pts)
    assert np.abs(a - b).max() <= 1e-12


def test_prolongation_constants():
    _, dms = _chain("unit-disk", 2)
    P = prolongation(dms[0], dms[2])
    one = dms[0].from_components(np.ones(dms[0].mesh.n_vertices), np.ones(dms[0].mesh.n_vertices))
    assert np.allclose(P @ one, 1.0, atol=1e-15)


@pytest.mark.parametrize("domain", ["unit-square", "L-shape"])
def test_prolongation_preserves_norms_and_forms(domain, rng):
    meshes, dms = _chain(domain, 2)
    coeff = constant_field(2.0, 3.0)
    fc = assemble_forms(meshes[0], dms[0], coeff)
    ff = assemble_forms(meshes[2], dms[2], coeff)
    P = prolongation(dms[0], dms[2])
    c = rng.standard_normal(dms[0].total_dofs)
    nc = c @ fc.gramV @ c
    nf = (P @ c) @ ff.gramV @ (P @ c)
    assert abs(nf - nc) <= 1e-12 * nc
    for name in ("a", "b", "gramV", "gramW"):
        G = (P.T @ ff[name] @ P - fc[name]).toarray()
        assert np.abs(G).max() <= 1e-10


@pytest.mark.parametrize("domain", ["unit-square", "L-shape", "unit-disk"])
def test_prolongation_composition_exact(domain):
    _, dms = _chain(domain, 2)
    P02 = prolongation(dms[0], dms[2])
    P12 = prolongation(dms[1], dms[2]) @ prolongation(dms[0], dms[1])
    assert abs(P02 - P12).max() == 0.0


def test_prolongation_full_rank():
    _, dms = _chain("L-shape", 1, H=1.0)
    P = prolongation(dms[0], dms[1]).toarray()
    assert np.linalg.det(P.T @ P) > 0
    assert np.linalg.matrix_rank(P) == dms[0].total_dofs


def test_prolongation_unrelated_meshes():
    a = build_dof_map(build_initial_mesh("unit-square", 0.5))
    b = build_dof_map(build_initial_mesh("unit-square", 0.25))
    with pytest.raises(MeshError):
        prolongation(a, b)


@given(seed=st.integers(0, 10**6))
def test_prolongation_adaptive_reproduces(seed):
    rng = np.random.default_rng(seed)
    m0 = build_initial_mesh("L-shape", 0.5)
    m1 = refine_adaptive(m0, set(np.nonzero(rng.random(m0.n_triangles) < 0.3)[0].tolist()) or {0})
    d0, d1 = build_dof_map(m0), build_dof_map(m1)
    c = rng.standard_normal(d0.total_dofs)
    f = prolongation(d0, d1) @ c
    pts = np.array([[-0.5, -0.5], [0.3, 0.7], [-0.7, 0.2], [0.9, 0.05]])
    a = evaluate_field(FieldVector(c, d0), pts)
    b = evaluate_field(FieldVector(f, d1), pts)
    assert np.abs(a - b).max() <= 1e-12


def test_evaluate_field_basic():
    m = refine_uniform(build_initial_mesh("unit-square", 0.5))
    dm = build_dof_map(m)
    x, y = m.vertices.T
    U = FieldVector(dm.from_components(x + y, 3 * x - y), dm)
    # nodal value at a vertex
    assert np.allclose(evaluate_field(U, m.vertices[[5]])[0], [x[5] + y[5], 3 * x[5] - y[5]])
    # linears are reproduced anywhere
    pts = np.array([[0.123, 0.456], [0.99, 0.01]])
    vals = evaluate_field(U, pts)
    assert np.allclose(vals[:, 0], pts.sum(1), atol=1e-14)
    # centroid gives the mean of the nodal values
    t = m.triangles[3]
    cen = m.vertices[t].mean(0)
    assert evaluate_field(U, [cen])[0, 0] == pytest.approx(np.mean((x + y)[t]))
    with pytest.raises(MeshError):
        evaluate_field(U, [[1.5, 0.5]])


def test_shared_trace_invariant(rng):
    m = refine_uniform(build_initial_mesh("unit-disk", 0.5))
    dm = build_dof_map(m)
    U = FieldVector(rng.standard_normal(dm.total_dofs) + 1j * rng.standard_normal(dm.total_dofs), dm)
    b = m.boundary_vertices
    assert np.array_equal(U.w[b], U.v[b])


def test_field_length_check():
    dm = build_dof_map(build_initial_mesh("unit-square", 1.0))
    with pytest.raises(ValueError):
        FieldVector(np.zeros(5), dm)


def test_write_field_csv(tmp_path):
    m = build_initial_mesh("unit-square", 1.0)
    dm = build_dof_map(m)
    U = FieldVector(np.arange(4) + 1j, dm)
    write_field_csv(U, tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x,y,w_re,w_im,v_re,v_im"
    assert len(lines) == 1 + m.n_vertices
