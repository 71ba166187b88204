import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import apply_kernel, kernel, mesh, random_inputs
from mfgen.fespace import ND1, P1, interpolate
from mfgen.forms import get_form, get_indexer, reference_apply
from mfgen.perf.trace import full_trace, trace_plan
from mfgen.runtime.interpreter import BindingError, run_kernel
from mfgen.runtime.solver import SolverError, cg_solve, kernel_operator, l2_error, load_vector


# ---------------------------------------------------------------- interpreter


def test_missing_and_misshaped_fields():
    k = kernel("P2V", "SVI")
    m = mesh("single-tet")
    v, c = random_inputs("P2V", "single-tet", 2)
    with pytest.raises(BindingError):
        run_kernel(k, m, 2, {"v": v})
    with pytest.raises(ValueError):
        run_kernel(k, m, 2, {"v": v[:-1], **c})


@pytest.mark.parametrize("form,opts", [("P1", "SVI"), ("P1", "SVICT"), ("N1", "SVIC"), ("P2V", "SVUIC"), ("P1", "P")])
def test_trace_does_not_change_result_and_matches_stream(form, opts):
    k = kernel(form, opts)
    v, c = random_inputs(form, "cube6", 2)
    plain = apply_kernel(k, "cube6", 2, v, c)
    traced, tr = apply_kernel(k, "cube6", 2, v, c, trace=True)
    np.testing.assert_array_equal(plain, traced)
    addr, writes = full_trace(trace_plan(k, mesh("cube6"), 2))
    np.testing.assert_array_equal(addr, tr.address)
    np.testing.assert_array_equal(writes, tr.write)
    assert np.all(tr.address % 8 == 0)


def test_trace_writes_only_output_field():
    k = kernel("P1", "SVI")
    v, c = random_inputs("P1", "single-tet", 2)
    _, tr = apply_kernel(k, "single-tet", 2, v, c, trace=True)
    names = np.array(tr.field_names)[tr.field]
    assert set(names[tr.write]) == {"w"}
    assert set(names[~tr.write]) == {"v"}
    # per element: four reads of v then four writes of w
    assert tr.write.sum() == 4 * 8**2


def test_output_accumulates_into_given_w():
    k = kernel("P1", "SVI")
    m = mesh("single-tet")
    v, _ = random_inputs("P1", "single-tet", 2)
    w0 = np.ones_like(v)
    w = run_kernel(k, m, 2, {"v": v, "w": w0})
    np.testing.assert_allclose(w - 1.0, reference_apply(get_form("P1"), m, 2, v), atol=1e-14)


# ---------------------------------------------------------------- CG


def _spd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n), rng.standard_normal(n)


@given(st.integers(2, 30), st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_cg_matches_direct_solve(n, seed):
    a, b = _spd(n, seed)
    res = cg_solve(lambda x: a @ x, b, rel_tol=1e-12)
    np.testing.assert_allclose(res.x, np.linalg.solve(a, b), rtol=1e-8, atol=1e-10)
    assert res.residuals[-1] <= 1e-12 * np.linalg.norm(b)


def test_cg_mask_keeps_fixed_values():
    a, b = _spd(10, 1)
    mask = np.ones(10, bool)
    mask[[0, 3]] = False
    x0 = np.zeros(10)
    x0[[0, 3]] = [2.0, -1.0]
    res = cg_solve(lambda x: a @ x, b, mask=mask, x0=x0, rel_tol=1e-13)
    assert res.x[0] == 2.0 and res.x[3] == -1.0
    r = a @ res.x - b
    assert np.max(np.abs(r[mask])) <= 1e-10


def test_cg_errors():
    a, b = _spd(20, 2)
    with pytest.raises(SolverError) as e:
        cg_solve(lambda x: a @ x, b, max_it=2, rel_tol=1e-15)
    assert e.value.iterations == 2
    with pytest.raises(SolverError):
        cg_solve(lambda x: -x, b)
    assert cg_solve(lambda x: a @ x, np.zeros(20)).iterations == 0


# ---------------------------------------------------------------- error norms and loads


def test_l2_error_of_reproduced_fields_is_zero():
    m = mesh("cube6")
    lin = interpolate(P1, lambda p: 1 + p[:, 0] - 2 * p[:, 2], m, 2)
    assert l2_error(P1, lin, lambda p: 1 + p[:, 0] - 2 * p[:, 2], m, 2) <= 1e-13
    field = lambda p: np.tile([0.3, -1.0, 2.0], (len(p), 1))
    nd = interpolate(ND1, field, m, 2)
    assert l2_error(ND1, nd, field, m, 2) <= 1e-13
    assert l2_error(P1, lin, lambda p: np.zeros(len(p)), m, 2) > 0.1


def test_load_vector_sums_to_volume():
    m = mesh("cube6")
    b = load_vector(P1, lambda p: np.ones(len(p)), m, 2)
    assert b.sum() == pytest.approx(1.0, rel=1e-13)
    assert len(b) == get_indexer(P1, m, 2).n_dofs


@pytest.mark.parametrize("form,opts", [("P1", "SVICT"), ("N1", "SVIC")])
def test_kernel_operator_matches_reference(form, opts):
    f = get_form(form)
    m = mesh("cube6")
    _, c = random_inputs(form, "cube6", 2)
    op = kernel_operator(f, opts, m, 2, c)
    v = np.random.default_rng(4).standard_normal(get_indexer(f.space, m, 2).n_dofs)
    ref = reference_apply(f, m, 2, v, c, rule=kernel(form, opts).rule)
    np.testing.assert_allclose(op(v), ref, atol=1e-12 * np.max(np.abs(ref)))
