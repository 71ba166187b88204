from collections import OrderedDict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import apply_kernel, kernel, mesh, random_inputs
from mfgen.core import LRUCache, ReuseTails
from mfgen.fespace import ND1, P1, P2
from mfgen.forms import get_form
from mfgen.ir.count import count_statements, innermost_element_loops
from mfgen.mesh import CUBE_BODY, MicroElement, Orientation, cube6, micro_vertices, orientation_counts, single_tet
from mfgen.perf import (
    INF,
    MachineError,
    MachineModel,
    cached_fraction,
    default_variant,
    dof_throughput,
    executed_statements,
    layer_condition_estimate,
    load_machine,
    memory_bounds,
    parse_machine,
    roofline,
    simulate_cache,
    simulate_kernel,
)

# ---------------------------------------------------------------- oracles


def lru_oracle(lines, writes, cap):
    cache: OrderedDict = OrderedDict()
    moved = 0
    for l, w in zip(lines, writes):
        if l in cache:
            cache.move_to_end(l)
        else:
            moved += 1
            if len(cache) == cap:
                _, dirty = cache.popitem(last=False)
                moved += dirty
            cache[l] = False
        cache[l] = cache[l] or bool(w)
    return moved + sum(cache.values())


trace_strategy = st.lists(st.tuples(st.integers(0, 15), st.booleans()), min_size=0, max_size=300)


# ---------------------------------------------------------------- cache simulation


@given(trace_strategy, st.integers(1, 20))
@settings(max_examples=150)
def test_lru_matches_oracle(trace, cap):
    lines = np.array([t[0] for t in trace], np.int64)
    writes = np.array([t[1] for t in trace], np.uint8)
    c = LRUCache(16, cap)
    c.access(lines, writes)
    c.flush()
    assert (c.misses + c.writebacks) == lru_oracle(lines.tolist(), writes.tolist(), cap)
    assert c.accesses == len(lines)


def test_simulate_cache_trivial_cases():
    addr = np.arange(0, 64 * 10, 8, dtype=np.int64)
    reads = np.zeros(len(addr), bool)
    assert simulate_cache((addr, reads), INF) == 640
    assert simulate_cache((addr, np.ones(len(addr), bool)), INF) == 1280
    # two lines alternating in a one-line cache: every access misses
    alt = np.array([0, 64] * 50, np.int64)
    assert simulate_cache((alt, np.zeros(100, bool)), 64) == 100 * 64
    assert simulate_cache((alt, np.zeros(100, bool)), 128) == 2 * 64
    with pytest.raises(ValueError):
        simulate_cache((alt, np.zeros(100, bool)), 32)


def test_simulate_kernel_matches_interpreter_trace():
    k = kernel("N1", "SVIC")
    v, c = random_inputs("N1", "cube6", 2)
    _, tr = apply_kernel(k, "cube6", 2, v, c, trace=True)
    caps = [4096.0, 32768.0, INF]
    sim = simulate_kernel(k, mesh("cube6"), 2, caps)
    for cap in caps:
        assert sim[cap] == simulate_cache(tr, cap)


# ---------------------------------------------------------------- reuse tails


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 2)), max_size=120), st.integers(0, 1000))
@settings(max_examples=150)
def test_reuse_tails_match_brute_force(steps, seed):
    items, iters, it = [], [], 0
    for item, adv in steps:
        it += adv
        items.append(item)
        iters.append(it)
    occ = np.random.default_rng(seed).integers(1, 5, 10).astype(float)
    traffic = occ * 2
    caps = np.array([0.0, 3.0, 8.0, INF])
    rt = ReuseTails(10, it + 1, occ, traffic, caps)
    out = np.zeros(len(items))
    rt.feed(np.array(items, np.int64), np.array(iters, np.int64), out)
    expected = _tails_simple(items, iters, occ)
    np.testing.assert_allclose(out, expected)
    for ci, cap in enumerate(caps):
        charged = sum(traffic[i] for i, t in zip(items, expected) if t < 0 or t >= cap)
        assert rt.charges[ci] == pytest.approx(charged)


def _tails_simple(items, iters, occ):
    last: dict = {}
    out = []
    a = 0
    while a < len(items):
        b = a
        while b < len(items) and iters[b] == iters[a]:
            b += 1
        it = iters[a]
        seen = set()
        for k in range(a, b):
            i = items[k]
            if i in seen:
                out.append(0.0)
                continue
            seen.add(i)
            if i not in last:
                out.append(-1.0)
                continue
            between = {items[j] for j in range(len(items)) if last[i] < iters[j] < it and j < a}
            out.append(float(sum(occ[x] for x in between)))
        for k in range(a, b):
            last[items[k]] = it
        a = b
    return out


# ---------------------------------------------------------------- bounds and layer conditions


def test_memory_bounds_small_case():
    assert memory_bounds(get_form("P1"), single_tet(), 1) == (240, 768)


@pytest.mark.parametrize("form", ["P1", "P2V", "N1"])
@pytest.mark.parametrize("strategy", ["sawtooth", "cubes"])
@pytest.mark.parametrize("mesh_fn,level", [(single_tet, 2), (cube6, 2), (cube6, 3)])
def test_layer_condition_limits(form, strategy, mesh_fn, level):
    m = mesh_fn()
    r = layer_condition_estimate(strategy, get_form(form), level, [0.0, 4096.0, 65536.0, INF], m)
    assert r.at(INF) == r.m_lower
    assert r.at(0.0) == r.m_upper
    assert list(r.m_lc) == sorted(r.m_lc, reverse=True)
    assert (r.m_lower, r.m_upper) == memory_bounds(get_form(form), m, level)


@given(st.floats(64, 1e7))
@settings(max_examples=20, deadline=None)
def test_layer_condition_inside_bounds(cap):
    r = layer_condition_estimate("cubes", get_form("P2V"), 3, cap, cube6())
    assert r.m_lower <= r.m_lc[0] <= r.m_upper


def test_representative_tails_and_near_tail():
    r = layer_condition_estimate("sawtooth", get_form("P1"), 5, 2 * 2**20)
    assert r.largest_tail > 0
    assert sum(g.accesses for g in r.groups) > 0
    assert r.near_tail(r.largest_tail)
    assert not r.near_tail(1e15)


# ---------------------------------------------------------------- cached fraction


def _geometric_dofs(space, elements):
    out = set()
    for e in elements:
        p = [tuple(2 * np.array(v)) for v in micro_vertices(e)]
        edges = [(p[a], p[b]) for a in range(4) for b in range(a + 1, 4)]
        if space in (P1, P2):
            out.update(p)
        if space is P2:
            out.update(tuple((np.array(a) + np.array(b)) // 2) for a, b in edges)
        if space is ND1:
            out.update(frozenset(ed) for ed in edges)
    return out


def _fraction_oracle(strategy, space, level=4):
    c = 2**level // 4
    orients = [Orientation.WU] if strategy == "sawtooth" else list(CUBE_BODY)
    cur = _geometric_dofs(space, [MicroElement(o, c, c, c, level) for o in orients])
    prev = _geometric_dofs(space, [MicroElement(o, c - 1, c, c, level) for o in orients])
    return Fraction(len(cur & prev), len(cur))


@pytest.mark.parametrize("strategy", ["sawtooth", "cubes"])
@pytest.mark.parametrize("space", [P1, P2, ND1])
def test_cached_fraction_matches_geometry(strategy, space):
    assert cached_fraction(strategy, space) == _fraction_oracle(strategy, space)


def test_cached_fraction_values():
    assert cached_fraction("cubes", P2) == Fraction(1, 3)
    assert cached_fraction("sawtooth", P2) == Fraction(1, 10)
    assert cached_fraction("sawtooth", P1) == Fraction(1, 4)
    with pytest.raises(ValueError):
        cached_fraction("zigzag", P1)


# ---------------------------------------------------------------- machine and roofline


def _machine(**kw):
    base = dict(peak_scalar_flops=1e12, peak_batched_flops=1e12, peak_batched_fma_flops=1e12,
                mem_bandwidth=1e11, l2_bandwidth=1e12, l1_bytes=1, l2_bytes=1, l3_bytes=1, cores=1, clock_hz=1.0)
    base.update(kw)
    return MachineModel(**base)


def test_roofline_example():
    est = roofline(_machine(), 2e9, 1e9)
    assert est.intensity == 2.0
    assert est.predicted_flops == pytest.approx(2e11)
    assert est.bound == "memory"
    assert est.time == pytest.approx(2e9 / 2e11)
    hi = roofline(_machine(), 2e12, 1e9)
    assert hi.predicted_flops == 1e12 and hi.bound == "compute"


def test_l2_mode_adds_statement_bytes():
    m = _machine(bytes_per_statement=8.0)
    est = roofline(m, 1e9, 1e6, mode="l2", statements=1e6)
    assert est.bytes == 9e6
    assert est.bandwidth == m.l2_bandwidth
    with pytest.raises(ValueError):
        roofline(m, 1.0, 1.0, mode="l4")
    with pytest.raises(ValueError):
        roofline(m, 1.0, 0.0)


def test_dof_throughput():
    est = roofline(_machine(), 2e9, 1e9)
    assert dof_throughput(est, 100.0) == pytest.approx(2e9)
    with pytest.raises(ValueError):
        dof_throughput(est, 0.0)


@given(st.floats(1e6, 1e12), st.floats(1e3, 1e12))
def test_roofline_is_min_of_limbs(flops, nbytes):
    m = load_machine()
    for variant in ("scalar", "batched", "batched_fma"):
        est = roofline(m, flops, nbytes, variant)
        assert est.predicted_flops == pytest.approx(min(m.peak(variant), flops / nbytes * m.mem_bandwidth))


def test_default_machine_and_variants():
    m = load_machine()
    assert m.cores == 36 and m.l3_bytes == 56623104
    assert m.l3_per_core == 56623104 // 36
    assert m.peak("batched_fma") == 2 * m.peak("batched") == 8 * m.peak("scalar")
    assert default_variant("SVI") == "batched_fma"
    assert default_variant("SI") == "scalar"
    with pytest.raises(MachineError):
        m.peak("quantum")


def test_parse_machine(tmp_path):
    text = "\n".join(f"{k} = {v}" for k, v in dict(
        peak_scalar_flops=1, peak_batched_flops=2, peak_batched_fma_flops=4, mem_bandwidth=1,
        l2_bandwidth=2, l1_bytes=1, l2_bytes=2, l3_bytes=3, cores=1, clock_hz=1).items())
    m = parse_machine("# comment\n" + text)
    assert m.bytes_per_statement == 8.0 and isinstance(m.cores, int)
    with pytest.raises(MachineError):
        parse_machine(text + "\nwarp = 9")
    with pytest.raises(MachineError):
        parse_machine(text.replace("cores = 1", ""))
    with pytest.raises(MachineError):
        parse_machine(text.replace("cores = 1", "cores = many"))
    with pytest.raises(MachineError):
        parse_machine(text.replace("peak_batched_flops = 2", "peak_batched_flops = 0.5"))
    path = tmp_path / "m.machine"
    path.write_text(text)
    assert load_machine(path).name == "m.machine"
    with pytest.raises(MachineError):
        load_machine(tmp_path / "none.machine")


def test_executed_statements_sawtooth():
    k = kernel("P1", "S")
    counts = orientation_counts(3)
    loops = innermost_element_loops(k.body)
    from mfgen.mesh import SAWTOOTH_ORDER

    expected = sum(count_statements(k.clone(body=list(l.body))) * counts[o] for l, o in zip(loops, SAWTOOTH_ORDER))
    assert executed_statements(k, 3) == expected
    assert executed_statements(k, 3, n_macros=6) == 6 * expected
