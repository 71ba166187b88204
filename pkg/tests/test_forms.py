import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfgen.fespace import LOCAL_EDGES, interpolate
from mfgen.forms import (
    assemble_matrix,
    get_form,
    get_indexer,
    local_apply,
    local_matrix,
    reference_apply,
    sparse_matrix_bytes,
)
from mfgen.mesh import MacroMesh, MicroElement, Orientation, cube6, enumerate_elements, micro_vertices, single_tet

P1F, P2V, N1 = get_form("P1"), get_form("P2V"), get_form("N1")


def _moments(i, j):
    """Exact integral of lambda_i * lambda_j over a tet of unit volume."""
    return (2.0 if i == j else 1.0) / 20.0


def _world_gradlam(mesh, e):
    w = mesh.lattice_to_world(e.macro, e.level, np.array(micro_vertices(e)))
    j = (w[1:] - w[0]).T
    ghat = np.array([[-1.0, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    return ghat @ np.linalg.inv(j), abs(np.linalg.det(j)) / 6.0


def _p2_grad_coeffs():
    """P2 gradients as sum_a (c0 + sum_p c[p] lambda_p) grad lambda_a, returned as (10, 4, 5)."""
    c = np.zeros((10, 4, 5))
    for i in range(4):  # (4 l_i - 1) grad l_i
        c[i, i, 0] = -1.0
        c[i, i, 1 + i] = 4.0
    for k, (a, b) in enumerate(LOCAL_EDGES):  # 4 (l_a grad l_b + l_b grad l_a)
        c[4 + k, b, 1 + a] = 4.0
        c[4 + k, a, 1 + b] = 4.0
    return c


def _int_linear_product(u, v):
    """Exact integral over a unit-volume tet of (u0 + u.lambda)(v0 + v.lambda)."""
    s = u[0] * v[0] + (u[0] * v[1:].sum() + v[0] * u[1:].sum()) / 4.0
    s += sum(u[1 + p] * v[1 + q] * _moments(p, q) for p in range(4) for q in range(4))
    return s


def _p2_laplace_local(mesh, e):
    g, vol = _world_gradlam(mesh, e)
    gg = g @ g.T
    c = _p2_grad_coeffs()
    a = np.zeros((10, 10))
    for i in range(10):
        for j in range(10):
            a[i, j] = vol * sum(gg[p, q] * _int_linear_product(c[i, p], c[j, q]) for p in range(4) for q in range(4))
    return a


def _nd1_mass_local(mesh, e):
    g, vol = _world_gradlam(mesh, e)
    a = np.zeros((6, 6))
    for i, (p, q) in enumerate(LOCAL_EDGES):
        for j, (r, s) in enumerate(LOCAL_EDGES):
            # (l_p g_q - l_q g_p) . (l_r g_s - l_s g_r)
            a[i, j] = vol * (
                _moments(p, r) * g[q] @ g[s] - _moments(p, s) * g[q] @ g[r]
                - _moments(q, r) * g[p] @ g[s] + _moments(q, s) * g[p] @ g[r]
            )
    return a


def _independent_apply(form_space, local_fn, mesh, level, v):
    idx = get_indexer(form_space, mesh, level)
    w = np.zeros(idx.n_dofs)
    for t in range(mesh.n_macros):
        for e in enumerate_elements("sawtooth", t, level):
            dofs, signs = idx.element_dofs(t, e.orientation, np.array([e.anchor]))
            a = local_fn(mesh, e) * np.outer(signs, signs)
            np.add.at(w, dofs[0], a @ v[dofs[0]])
    return w


# ---------------------------------------------------------------- local matrices


def test_p1_reference_local_matrix():
    a = local_matrix(P1F, single_tet(), 0, MicroElement(Orientation.WU, 0, 0, 0, 0)).values
    expected = np.array([[3, -1, -1, -1], [-1, 1, 0, 0], [-1, 0, 1, 0], [-1, 0, 0, 1]]) / 6.0
    np.testing.assert_allclose(a, expected, atol=1e-15)


@pytest.mark.parametrize("mesh_fn", [single_tet, cube6])
def test_p2v_unit_coefficient_matches_exact_laplace(mesh_fn):
    m = mesh_fn()
    for e in enumerate_elements("cubes", m.n_macros - 1, 1):
        k = np.ones(get_indexer(P2V.space, m, 1).n_dofs)
        a = local_matrix(P2V, m, 1, e, {"k": k}).values
        np.testing.assert_allclose(a, _p2_laplace_local(m, e), atol=1e-14)


@pytest.mark.parametrize("form", [P1F, P2V, N1])
def test_local_matrices_symmetric(form):
    m = cube6()
    rng = np.random.default_rng(3)
    coeffs = {c: 1 + rng.random(get_indexer(s, m, 2).n_dofs) for c, s in form.coefficients}
    for e in enumerate_elements("sawtooth", 4, 2)[::7]:
        a = local_matrix(form, m, 2, e, coeffs).values
        assert np.max(np.abs(a - a.T)) <= 1e-12 * max(1.0, np.max(np.abs(a)))


def test_missing_coefficient_rejected():
    with pytest.raises(ValueError):
        local_matrix(P2V, single_tet(), 1, MicroElement(Orientation.WU, 0, 0, 0, 1))


# ---------------------------------------------------------------- local_apply


def test_local_apply_zero_and_unit_vectors():
    m = single_tet()
    e = MicroElement(Orientation.BD, 0, 0, 0, 2)
    n = get_indexer(P1F.space, m, 2).n_dofs
    w = local_apply(P1F, m, 2, e, np.zeros(n), np.zeros(n))
    np.testing.assert_array_equal(w, 0.0)
    a = local_matrix(P1F, m, 2, e).values
    dofs, _ = get_indexer(P1F.space, m, 2).element_dofs(0, e.orientation, np.array([e.anchor]))
    for i in range(4):
        v = np.zeros(n)
        v[dofs[0, i]] = 1.0
        w = local_apply(P1F, m, 2, e, v, np.zeros(n))
        np.testing.assert_allclose(w[dofs[0]], a[:, i], atol=1e-15)


def test_local_apply_order_independent():
    m = cube6()
    rng = np.random.default_rng(1)
    n = get_indexer(N1.space, m, 1).n_dofs
    coeffs = {c: 1 + rng.random(get_indexer(s, m, 1).n_dofs) for c, s in N1.coefficients}
    v = rng.standard_normal(n)
    a, b = enumerate_elements("sawtooth", 2, 1)[:2]
    w1 = local_apply(N1, m, 1, b, v, local_apply(N1, m, 1, a, v, np.zeros(n), coeffs), coeffs)
    w2 = local_apply(N1, m, 1, a, v, local_apply(N1, m, 1, b, v, np.zeros(n), coeffs), coeffs)
    np.testing.assert_allclose(w1, w2, atol=1e-15)
    with pytest.raises(ValueError):
        local_apply(N1, m, 1, a, v[:-1], np.zeros(n), coeffs)


# ---------------------------------------------------------------- reference_apply


def test_constants_annihilated_on_interior():
    m = cube6()
    idx = get_indexer(P1F.space, m, 2)
    _, bnd = idx.dof_geometry()
    w = reference_apply(P1F, m, 2, interpolate(P1F.space, lambda p: np.ones(len(p)), m, 2))
    assert np.max(np.abs(w[~bnd])) <= 1e-14
    # without Dirichlet masking the rows of the full sum also vanish on the boundary
    assert np.max(np.abs(w)) <= 1e-14


def test_linear_annihilated_on_interior_single_tet():
    m = single_tet()
    idx = get_indexer(P1F.space, m, 2)
    _, bnd = idx.dof_geometry()
    w = reference_apply(P1F, m, 2, interpolate(P1F.space, lambda p: p[:, 0], m, 2))
    assert np.max(np.abs(w[~bnd])) <= 1e-14


@pytest.mark.parametrize("mesh_fn,level", [(single_tet, 2), (cube6, 1)])
def test_n1_mass_only_matches_whitney_oracle(mesh_fn, level):
    m = mesh_fn()
    rng = np.random.default_rng(5)
    n = get_indexer(N1.space, m, level).n_dofs
    nc = get_indexer(N1.coefficients[0][1], m, level).n_dofs
    v = rng.standard_normal(n)
    w = reference_apply(N1, m, level, v, {"alpha": np.zeros(nc), "beta": np.ones(nc)})
    ref = _independent_apply(N1.space, _nd1_mass_local, m, level, v)
    np.testing.assert_allclose(w, ref, atol=1e-13 * np.max(np.abs(ref)))


def test_p2v_unit_coefficient_apply_matches_exact_laplace():
    m = cube6()
    n = get_indexer(P2V.space, m, 1).n_dofs
    v = np.random.default_rng(2).standard_normal(n)
    w = reference_apply(P2V, m, 1, v, {"k": np.ones(n)})
    ref = _independent_apply(P2V.space, _p2_laplace_local, m, 1, v)
    np.testing.assert_allclose(w, ref, atol=1e-13 * np.max(np.abs(ref)))


@pytest.mark.parametrize("form", [P1F, P2V, N1])
@pytest.mark.parametrize("level", [1, 2, 3])
def test_assembled_matrix_consistency(form, level):
    m = single_tet()
    rng = np.random.default_rng(level)
    coeffs = {c: 1 + rng.random(get_indexer(s, m, level).n_dofs) for c, s in form.coefficients}
    v = rng.standard_normal(get_indexer(form.space, m, level).n_dofs)
    w = reference_apply(form, m, level, v, coeffs)
    wa = assemble_matrix(form, m, level, coeffs) @ v
    assert np.max(np.abs(w - wa)) <= 1e-12 * np.max(np.abs(w))


@given(st.floats(0.1, 10.0), st.integers(0, 2**31 - 1))
@settings(max_examples=10, deadline=None)
def test_constant_coefficient_scaling(c, seed):
    m = single_tet()
    rng = np.random.default_rng(seed)
    for form in (P2V, N1):
        v = rng.standard_normal(get_indexer(form.space, m, 1).n_dofs)
        one = {name: np.full(get_indexer(s, m, 1).n_dofs, c) for name, s in form.coefficients}
        two = {name: 2 * x for name, x in one.items()}
        w1 = reference_apply(form, m, 1, v, one)
        w2 = reference_apply(form, m, 1, v, two)
        np.testing.assert_allclose(w2, 2 * w1, rtol=1e-14, atol=1e-14 * np.max(np.abs(w1)))


@given(st.floats(0, 2 * np.pi), st.floats(0, np.pi), st.floats(0, 2 * np.pi))
@settings(max_examples=10, deadline=None)
def test_p1_rotation_invariance(a, b, c):
    def rot(axis, t):
        r = np.eye(3)
        i, j = [k for k in range(3) if k != axis]
        r[i, i] = r[j, j] = np.cos(t)
        r[i, j], r[j, i] = -np.sin(t), np.sin(t)
        return r

    base = single_tet()
    r = rot(2, a) @ rot(1, b) @ rot(2, c)
    turned = MacroMesh(base.vertices @ r.T, base.tets)
    v = np.random.default_rng(0).standard_normal(get_indexer(P1F.space, base, 2).n_dofs)
    w0 = reference_apply(P1F, base, 2, v)
    w1 = reference_apply(P1F, turned, 2, v)
    assert np.max(np.abs(w0 - w1)) <= 1e-12 * np.max(np.abs(w0))


def test_linearity_in_coefficients():
    m = cube6()
    rng = np.random.default_rng(9)
    n = get_indexer(N1.space, m, 1).n_dofs
    nc = get_indexer(N1.coefficients[0][1], m, 1).n_dofs
    al, be, v = rng.random(nc), rng.random(nc), rng.standard_normal(n)
    z = np.zeros(nc)
    w = reference_apply(N1, m, 1, v, {"alpha": al, "beta": be})
    split = reference_apply(N1, m, 1, v, {"alpha": al, "beta": z}) + reference_apply(N1, m, 1, v, {"alpha": z, "beta": be})
    np.testing.assert_allclose(w, split, atol=1e-13 * np.max(np.abs(w)))


# ---------------------------------------------------------------- sparse storage


def test_sparse_matrix_bytes():
    assert sparse_matrix_bytes(7, 10**12, 8) == 56 * 10**12
    assert sparse_matrix_bytes(0, 12345, 8) == 0
    assert sparse_matrix_bytes(15, 10**6, 8) == 120_000_000
    with pytest.raises(ValueError):
        sparse_matrix_bytes(-1, 1, 8)


def test_unknown_form():
    with pytest.raises(ValueError):
        get_form("Stokes")
