"""Main-memory traffic: lower/upper bounds, layer-condition estimate and LRU simulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

import numpy as np

from ..core import LRUCache, ReuseTails
from ..fespace import FunctionSpace
from ..forms import WeakForm, get_indexer
from ..ir.kernel import Kernel
from ..mesh import CUBE_BODY, SAWTOOTH_ORDER, MacroMesh, Orientation, loop_bound, pack, single_tet, tet_number
from ..runtime.interpreter import AccessTrace
from .trace import LINE, iter_trace, trace_plan

INF = math.inf


# ---------------------------------------------------------------- bounds


def _space_weights(form: WeakForm) -> list[tuple[FunctionSpace, int, int]]:
    """Per distinct space: (space, occupancy bytes, traffic bytes) of one DoF.

    The operand space holds input and output (8 + 8 resident, 8 read + 16
    read-modify-write); each coefficient adds 8 resident and 8 read.
    """
    out = {form.space: [16, 24]}
    for _, s in form.coefficients:
        w = out.setdefault(s, [0, 0])
        w[0] += 8
        w[1] += 8
    return [(s, o, t) for s, (o, t) in out.items()]


def memory_bounds(form: WeakForm, mesh: MacroMesh, level: int) -> tuple[int, int]:
    """(M_lower, M_upper) in bytes for one operator application."""
    lower = 0
    per_element = 0
    for s, _, t in _space_weights(form):
        lower += t * get_indexer(s, mesh, level).n_dofs
        per_element += t * s.n_local
    return lower, per_element * mesh.n_macros * 8**level


# ---------------------------------------------------------------- layer conditions


def _plane(m: int, z: int) -> np.ndarray:
    """Anchors (x, y, z) with |p| <= m - 1 in one z plane, y-x order."""
    r = m - z
    if r <= 0:
        return np.zeros((0, 3), np.int64)
    y = np.repeat(np.arange(r), np.arange(r, 0, -1))
    x = np.arange(len(y)) - np.repeat(np.cumsum(np.arange(r, 0, -1)) - np.arange(r, 0, -1), np.arange(r, 0, -1))
    return np.stack([x, y, np.full(len(y), z)], axis=1).astype(np.int64)


@dataclass
class ItemStream:
    """Element-granular DoF item accesses of a traversal, grouped by iteration."""

    strategy: str
    form: WeakForm
    mesh: MacroMesh
    level: int
    offsets: list[int] = field(init=False)
    occ: np.ndarray = field(init=False)
    traffic: np.ndarray = field(init=False)
    n_iters: int = field(init=False)
    iters_per_macro: int = field(init=False)

    def __post_init__(self):
        if self.strategy not in ("sawtooth", "cubes"):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        self.weights = _space_weights(self.form)
        self.indexers = [get_indexer(s, self.mesh, self.level) for s, _, _ in self.weights]
        sizes = [ix.n_dofs for ix in self.indexers]
        self.offsets = list(np.cumsum([0] + sizes[:-1]))
        self.occ = np.concatenate([np.full(n, o, float) for n, (_, o, _) in zip(sizes, self.weights)])
        self.traffic = np.concatenate([np.full(n, t, float) for n, (_, _, t) in zip(sizes, self.weights)])
        n = 2**self.level
        if self.strategy == "sawtooth":
            self.orient_offset = {}
            acc = 0
            for o in SAWTOOTH_ORDER:
                self.orient_offset[o] = acc
                acc += tet_number(loop_bound(o, n) - 1)
            self.iters_per_macro = acc
        else:
            self.iters_per_macro = tet_number(n - 1)
        self.n_iters = self.iters_per_macro * self.mesh.n_macros

    @property
    def n_items(self) -> int:
        return len(self.occ)

    def _items(self, t: int, o: Orientation, anchors: np.ndarray) -> np.ndarray:
        cols = [off + ix.element_dofs(t, o, anchors)[0] for off, ix in zip(self.offsets, self.indexers)]
        return np.concatenate(cols, axis=1)

    def iteration_id(self, t: int, o: Orientation, anchor) -> int:
        n = 2**self.level
        x, y, z = anchor
        if self.strategy == "sawtooth":
            m = loop_bound(o, n) - 1
            return t * self.iters_per_macro + self.orient_offset[o] + int(pack(x, y, z, m))
        return t * self.iters_per_macro + int(pack(x, y, z, n - 1))

    def chunks(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (items, iteration ids) in traversal order, one z plane at a time."""
        n = 2**self.level
        for t in range(self.mesh.n_macros):
            base = t * self.iters_per_macro
            if self.strategy == "sawtooth":
                for o in SAWTOOTH_ORDER:
                    m = loop_bound(o, n)
                    for z in range(m):
                        a = _plane(m, z)
                        items = self._items(t, o, a)
                        it = base + self.orient_offset[o] + pack(a[:, 0], a[:, 1], a[:, 2], m - 1)
                        yield items.ravel(), np.repeat(it, items.shape[1])
            else:
                for z in range(n):
                    its, parts = [], []
                    for o in CUBE_BODY:
                        m = loop_bound(o, n)
                        if z >= m:
                            continue
                        a = _plane(m, z)
                        items = self._items(t, o, a)
                        it = base + pack(a[:, 0], a[:, 1], a[:, 2], n - 1)
                        parts.append(items.ravel())
                        its.append(np.repeat(it, items.shape[1]))
                    items = np.concatenate(parts)
                    it = np.concatenate(its)
                    order = np.argsort(it, kind="stable")
                    yield items[order], it[order]

    def representative(self) -> list[int]:
        """Iteration ids of interior iterations in the first macro (one per sawtooth sweep)."""
        n = 2**self.level
        a = (n // 4,) * 3
        if self.strategy == "cubes":
            return [self.iteration_id(0, Orientation.WU, a)]
        return [self.iteration_id(0, o, a) for o in SAWTOOTH_ORDER if sum(a) <= loop_bound(o, n) - 1]


@dataclass(frozen=True)
class ReuseGroup:
    """DoF accesses of the representative iterations sharing one reuse tail.

    ``tail`` is the resident byte volume between the reusing accesses;
    -1 marks first touches (never cached).
    """

    tail: float
    bytes: float
    accesses: int


@dataclass
class LayerConditionResult:
    strategy: str
    level: int
    capacities: tuple[float, ...]
    m_lc: tuple[float, ...]
    m_lower: int
    m_upper: int
    groups: list[ReuseGroup]

    @property
    def largest_tail(self) -> float:
        return max((g.tail for g in self.groups), default=0.0)

    def at(self, capacity: float) -> float:
        return self.m_lc[self.capacities.index(capacity)]

    def near_tail(self, capacity: float, factor: float = 2.0) -> bool:
        """True if a representative tail lies within ``factor`` of ``capacity``."""
        return any(capacity / factor <= g.tail <= capacity * factor for g in self.groups if g.tail > 0)


def layer_condition_estimate(strategy: str, form: WeakForm, level: int, cache_bytes: float | Iterable[float],
                             mesh: MacroMesh | None = None) -> LayerConditionResult:
    """Layer-condition traffic estimate for one or more cache capacities.

    Every DoF access of every iteration is charged its traffic bytes when its
    reuse tail (distinct resident bytes touched since the previous iteration
    that accessed the same DoF) is at least the capacity. First touches are
    always charged, so ``cache_bytes = inf`` gives M_lower and ``0`` gives
    M_upper. The macro sequence is followed with global DoF numbers.
    """
    mesh = mesh or single_tet()
    caps = (float(cache_bytes),) if np.isscalar(cache_bytes) else tuple(float(c) for c in cache_bytes)
    st = ItemStream(strategy, form, mesh, level)
    rt = ReuseTails(st.n_items, st.n_iters, st.occ, st.traffic, np.array(caps))
    reps = np.array(st.representative(), np.int64)
    rep_tails, rep_items = [], []
    for items, iters in st.chunks():
        items = np.ascontiguousarray(items, np.int64)
        iters = np.ascontiguousarray(iters, np.int64)
        sel = np.isin(iters, reps) if len(reps) and iters[0] <= reps.max() and iters[-1] >= reps.min() else None
        if sel is not None and sel.any():
            tails = np.zeros(len(items))
            rt.feed(items, iters, tails)
            rep_tails.append(tails[sel])
            rep_items.append(items[sel])
        else:
            rt.feed(items, iters)
    groups: list[ReuseGroup] = []
    if rep_tails:
        tails = np.concatenate(rep_tails)
        w = st.traffic[np.concatenate(rep_items)]
        for tv in np.unique(tails):
            m = tails == tv
            groups.append(ReuseGroup(float(tv), float(w[m].sum()), int(m.sum())))
    lower, upper = memory_bounds(form, mesh, level)
    return LayerConditionResult(strategy, level, caps, tuple(float(c) for c in rt.charges), lower, upper, groups)


# ---------------------------------------------------------------- cache simulation


def simulate_cache(trace, capacity_bytes: float, line_bytes: int = LINE) -> int:
    """Bytes moved between an LRU cache and memory for ``trace``.

    ``trace`` is an AccessTrace or an (addresses, writes) pair. The cache is
    fully associative with write-allocate and write-back; dirty lines left at
    the end are written back.
    """
    if isinstance(trace, AccessTrace):
        addr, writes = trace.address, trace.write
    else:
        addr, writes = trace
    if capacity_bytes < line_bytes:
        raise ValueError("capacity must hold at least one line")
    lines = np.ascontiguousarray(np.asarray(addr, np.int64) // line_bytes)
    n_lines = int(lines.max()) + 1 if len(lines) else 1
    cap = n_lines if math.isinf(capacity_bytes) else max(1, min(int(capacity_bytes // line_bytes), n_lines))
    c = LRUCache(n_lines, cap)
    c.access(lines, np.ascontiguousarray(writes, np.uint8))
    c.flush()
    return int(c.misses + c.writebacks) * line_bytes


def simulate_kernel(k: Kernel, mesh: MacroMesh, level: int, capacities: Iterable[float],
                    line_bytes: int = LINE) -> dict[float, int]:
    """Simulated traffic of one application of ``k`` for several capacities in one trace pass."""
    plan = trace_plan(k, mesh, level)
    n_lines = plan.n_lines * LINE // line_bytes + 1
    caches = {}
    for cap in capacities:
        cap = float(cap)
        if cap < line_bytes:
            raise ValueError("capacity must hold at least one line")
        lines = n_lines if math.isinf(cap) else max(1, min(int(cap // line_bytes), n_lines))
        caches[cap] = LRUCache(n_lines, lines)
    for addr, writes in iter_trace(plan):
        lines = np.ascontiguousarray(addr // line_bytes)
        w = np.ascontiguousarray(writes, np.uint8)
        for c in caches.values():
            c.access(lines, w)
    out = {}
    for cap, c in caches.items():
        c.flush()
        out[cap] = int(c.misses + c.writebacks) * line_bytes
    return out


@dataclass
class MemoryReport:
    """Traffic per operator application in bytes."""

    form: str
    strategy: str
    level: int
    capacity: float
    m_lower: int
    m_upper: int
    m_lc: float
    m_sim: int


# ---------------------------------------------------------------- cached fraction


def cached_fraction(strategy: str, space: FunctionSpace, level: int = 4) -> Fraction:
    """Share of an interior iteration's distinct DoFs also touched by the preceding iteration."""
    mesh = single_tet()
    ix = get_indexer(space, mesh, level)
    n = 2**level
    a = np.array([n // 4] * 3)

    def dofs(anchor):
        if strategy == "sawtooth":
            return set(ix.element_dofs(0, Orientation.WU, anchor[None])[0].ravel().tolist())
        if strategy == "cubes":
            return set().union(*(ix.element_dofs(0, o, anchor[None])[0].ravel().tolist() for o in CUBE_BODY))
        raise ValueError(f"unknown strategy {strategy!r}")

    cur, prev = dofs(a), dofs(a - np.array([1, 0, 0]))
    return Fraction(len(cur & prev), len(cur))


__all__ = [
    "INF",
    "ItemStream",
    "LayerConditionResult",
    "MemoryReport",
    "ReuseGroup",
    "cached_fraction",
    "layer_condition_estimate",
    "memory_bounds",
    "simulate_cache",
    "simulate_kernel",
]
