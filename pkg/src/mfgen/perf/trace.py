"""Streaming access traces built from a kernel's per-body access template.

The trace equals the interpreter's trace (same fields, addresses and order)
but is generated directly from the loop structure in numpy chunks, so it
scales to levels where interpreting the kernel is impractical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..ir.count import innermost_element_loops
from ..ir.expr import compile_expr
from ..ir.kernel import BatchBlock, FieldAccumulate, Kernel, Loop, Scope, TempAccumulate, TempAssign
from ..mesh import BOUND_SHIFT, SAWTOOTH_ORDER, MacroMesh, Orientation, _lattice_anchors, loop_bound
from ..runtime.interpreter import _Indexing, field_bases, field_layout

LINE = 64
CHUNK_ANCHORS = 1 << 15


@dataclass(frozen=True)
class Access:
    field: str
    slot: tuple
    write: bool


def body_accesses(body: list) -> list[Access]:
    """Field accesses of one element-loop iteration in execution order."""
    out: list[Access] = []
    for s in body:
        if isinstance(s, (TempAssign, TempAccumulate, FieldAccumulate)):
            leaves, _ = compile_expr(s.expr)
            out += [Access(n.data[0], n.data[1], False) for n in leaves if n.op == "field"]
            if isinstance(s, FieldAccumulate):
                out.append(Access(s.field, s.slot, True))
        elif isinstance(s, (Scope, BatchBlock)):
            out += body_accesses(s.body)
        elif isinstance(s, Loop):
            if s.role != "quad":
                raise ValueError("nested element loop inside an element body")
            inner = body_accesses(s.body)
            out += inner * (int(s.hi) - int(s.lo))
    return out


def _scoped_loops(body: list, scope=None) -> list[tuple[int | None, Loop]]:
    out = []
    for s in body:
        if isinstance(s, Scope):
            out += _scoped_loops(s.body, s.orientation)
        elif isinstance(s, Loop) and s.role == "element":
            if innermost_element_loops([s]) == [s]:
                out.append((scope, s))
            else:
                out += _scoped_loops(s.body, scope)
    return out


@dataclass
class TracePlan:
    """Access templates per innermost element loop, plus global address layout."""

    kernel: Kernel
    mesh: MacroMesh
    level: int
    templates: list[list[Access]]
    orientations: list[int | None]
    bases: dict[str, int]
    layout: dict
    n_lines: int

    @property
    def field_ids(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.kernel.fields)}


def trace_plan(k: Kernel, mesh: MacroMesh, level: int) -> TracePlan:
    loops = _scoped_loops(k.body)
    templates = [body_accesses(l.body) for _, l in loops]
    if k.strategy == "sawtooth":
        if [o for o, _ in loops] != [int(o) for o in SAWTOOTH_ORDER]:
            raise ValueError("sawtooth kernel must have one element loop per orientation scope")
    elif len(loops) != 3:
        raise ValueError("cubes kernel must have complete, tail5 and tail1 loops")
    layout = field_layout(k, mesh, level)
    bases = field_bases(k, layout)
    last = max(bases[f] + 8 * layout[f][0] for f in k.fields)
    return TracePlan(k, mesh, level, templates, [o for o, _ in loops], bases, layout, -(-last // LINE) + 1)


def _addresses(plan: TracePlan, ix: _Indexing, template: list[Access], t: int, anchors: np.ndarray):
    """(A, L) byte addresses and (L,) write flags for anchors of one loop."""
    x, y, z = anchors[:, 0], anchors[:, 1], anchors[:, 2]
    cols = []
    for a in template:
        local = ix.index(a.field, a.slot, x, y, z)
        _, l2g, per = plan.layout[a.field]
        g = l2g[t][local] if l2g is not None else t * per + local
        cols.append(plan.bases[a.field] + 8 * g)
    addr = np.stack(cols, axis=1) if cols else np.zeros((len(anchors), 0), np.int64)
    return addr.astype(np.int64), np.array([a.write for a in template], dtype=bool)


def _z_chunks(anchors: np.ndarray, size: int = CHUNK_ANCHORS) -> Iterator[np.ndarray]:
    for a in range(0, len(anchors), size):
        yield anchors[a : a + size]


def iter_trace(plan: TracePlan) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield (addresses, write flags) chunks in program order over all macros."""
    k, n = plan.kernel, 2**plan.level
    ix = _Indexing(k, plan.level)
    for t in range(plan.mesh.n_macros):
        if k.strategy == "sawtooth":
            for tmpl, o in zip(plan.templates, plan.orientations):
                for anchors in _z_chunks(_lattice_anchors(loop_bound(Orientation(o), n))):
                    addr, w = _addresses(plan, ix, tmpl, t, anchors)
                    yield addr.ravel(), np.tile(w, len(anchors))
        else:
            for anchors in _z_chunks(_lattice_anchors(n)):
                r = n - anchors[:, 1] - anchors[:, 2]
                kind = np.where(anchors[:, 0] < r - 2, 0, np.where(anchors[:, 0] == r - 2, 1, 2))
                lens = np.array([len(tm) for tm in plan.templates])[kind]
                start = np.cumsum(lens) - lens
                total = int(lens.sum())
                addr = np.empty(total, np.int64)
                wr = np.empty(total, bool)
                for b, tmpl in enumerate(plan.templates):
                    sel = np.nonzero(kind == b)[0]
                    if not len(sel) or not tmpl:
                        continue
                    a, w = _addresses(plan, ix, tmpl, t, anchors[sel])
                    pos = start[sel][:, None] + np.arange(len(tmpl))[None, :]
                    addr[pos] = a
                    wr[pos] = w[None, :]
                yield addr, wr


def full_trace(plan: TracePlan) -> tuple[np.ndarray, np.ndarray]:
    parts = list(iter_trace(plan))
    if not parts:
        return np.zeros(0, np.int64), np.zeros(0, bool)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


__all__ = ["Access", "LINE", "TracePlan", "body_accesses", "full_trace", "iter_trace", "trace_plan"]
