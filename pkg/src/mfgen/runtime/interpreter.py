"""Deterministic lane-batched interpreter for kernels, with optional access tracing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fespace import block_offsets, local_size, space_blocks
from ..forms import get_indexer
from ..ir.builder import element_matrix_offsets
from ..ir.expr import compile_expr
from ..ir.kernel import (
    BatchBlock,
    FieldAccumulate,
    Kernel,
    Loop,
    Scope,
    TableDecl,
    TableStore,
    TempAccumulate,
    TempAssign,
)
from ..loops import Affine
from ..mesh import BOUND_SHIFT, MacroMesh, Orientation, jacobian, pack

LINE_ALIGN = 4096
_MISSING = object()


class BindingError(KeyError):
    pass


@dataclass
class AccessTrace:
    """Ordered field accesses of 8 bytes each."""

    field: np.ndarray  # field id per access
    address: np.ndarray  # byte address
    write: np.ndarray  # bool
    field_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.address)

    @classmethod
    def concat(cls, parts: list["AccessTrace"]) -> "AccessTrace":
        if not parts:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, bool))
        return cls(
            np.concatenate([p.field for p in parts]),
            np.concatenate([p.address for p in parts]),
            np.concatenate([p.write for p in parts]),
            parts[0].field_names,
        )


class _Indexing:
    """Macro-local index computation for kernel field slots."""

    def __init__(self, k: Kernel, level: int):
        self.n = 2**level
        self.level = level
        self.info = {}
        for name, f in k.fields.items():
            if f.space is None:
                self.info[name] = ("e", element_matrix_offsets(level), k.form.space.n_local ** 2)
            else:
                blocks = space_blocks(f.space)
                self.info[name] = ("lat", block_offsets(f.space, self.n), [b.shift for b in blocks])

    def index(self, fname: str, slot: tuple, x, y, z):
        kind, a, b = self.info[fname]
        n = self.n
        if kind == "lat":
            blk, dx, dy, dz = slot
            return a[blk] + pack(x + dx, y + dy, z + dz, n - b[blk])
        _, o, entry = slot
        m = n - 1 - BOUND_SHIFT[Orientation(o)]
        return (a[o] + pack(x, y, z, m)) * b + entry


@dataclass
class _Ctx:
    lanes: int | None  # None: scalar context outside element loops
    counters: dict
    env: dict  # temps assigned inside element loops (expanded on loop entry)
    key: np.ndarray | None  # (lanes, d) ordering keys, tracing only
    senv: dict = field(default_factory=dict)  # temps assigned outside element loops, shared

    def get(self, name: str):
        v = self.env.get(name, _MISSING)
        return self.senv[name] if v is _MISSING else v

    def set(self, name: str, value) -> None:
        if self.lanes is None:
            self.senv[name] = value
        else:
            self.env[name] = value


class Interpreter:
    def __init__(self, k: Kernel, level: int, fields: dict, params: dict, trace_map: dict | None = None):
        self.k = k
        self.level = level
        self.n = 2**level
        self.fields = fields
        self.params = params
        self.indexing = _Indexing(k, level)
        self.tables: dict[str, np.ndarray] = {}
        self.trace_map = trace_map
        self.events: list = []
        self.table_hook = None
        self._fid = {name: i for i, name in enumerate(k.fields)}

    # -- expression evaluation

    def _eval(self, e, ctx: _Ctx, key_prefix=None):
        loads = []

        def leaf(node):
            op = node.op
            if op == "temp":
                try:
                    return ctx.get(node.data)
                except KeyError:
                    raise BindingError(f"temp {node.data!r} used before assignment")
            if op == "param":
                try:
                    return self.params[node.data]
                except KeyError:
                    raise BindingError(f"unbound parameter {node.data!r}")
            if op == "counter":
                return ctx.counters[node.data]
            if op == "table":
                name, idx = node.data
                t = self.tables[name]
                ii = tuple(ctx.counters[c] if isinstance(c, str) else c for c in idx)
                return t[ii]
            if op == "field":
                fname, slot = node.data
                idx = self._index(fname, slot, ctx)
                arr = self.fields[fname]
                if np.any(idx < 0) or np.any(idx >= len(arr)):
                    raise IndexError(f"field {fname} index out of range")
                if self.trace_map is not None:
                    loads.append((fname, idx))
                return arr[idx]
            raise ValueError(op)

        leaves, fn = compile_expr(e)
        val = fn([leaf(n) for n in leaves])
        return val, loads

    def _index(self, fname, slot, ctx):
        c = ctx.counters
        return np.asarray(self.indexing.index(fname, slot, c["x"], c["y"], c["z"]))

    # -- tracing

    def _record(self, ctx: _Ctx, pos: int, accesses: list, write_idx=None):
        if self.trace_map is None:
            return
        for sub, (fname, idx, is_write) in enumerate(accesses):
            base, l2g = self.trace_map[fname]
            idx = np.broadcast_to(idx, (ctx.lanes or 1,))
            key = ctx.key if ctx.key is not None else np.zeros((1, 0), np.int64)
            key = np.column_stack([key, np.full(len(key), pos), np.full(len(key), sub)])
            self.events.append((key, self._fid[fname], base + 8 * l2g[idx], is_write))

    # -- statements

    def run(self, body=None):
        ctx = _Ctx(None, {"x": 0, "y": 0, "z": 0}, {}, None)
        self._block(self.k.body if body is None else body, ctx)

    def _block(self, body, ctx: _Ctx):
        for pos, s in enumerate(body):
            if isinstance(s, TempAssign):
                val, loads = self._eval(s.expr, ctx)
                ctx.set(s.name, val)
                self._record(ctx, pos, [(f, i, False) for f, i in loads])
            elif isinstance(s, TempAccumulate):
                val, loads = self._eval(s.expr, ctx)
                ctx.set(s.name, ctx.get(s.name) + val)
                self._record(ctx, pos, [(f, i, False) for f, i in loads])
            elif isinstance(s, FieldAccumulate):
                val, loads = self._eval(s.expr, ctx)
                idx = self._index(s.field, s.slot, ctx)
                arr = self.fields[s.field]
                if np.any(idx < 0) or np.any(idx >= len(arr)):
                    raise IndexError(f"field {s.field} index out of range")
                if ctx.lanes is None:
                    arr[int(idx)] += val
                else:
                    np.add.at(arr, np.broadcast_to(idx, (ctx.lanes,)), np.broadcast_to(val, (ctx.lanes,)))
                self._record(ctx, pos, [(f, i, False) for f, i in loads] + [(s.field, idx, True)])
            elif isinstance(s, TableStore):
                val, _ = self._eval(s.expr, ctx)
                self.tables[s.table][s.index] = val
                if self.table_hook is not None:
                    self.table_hook(s.table, s.index, self.tables)
            elif isinstance(s, TableDecl):
                t = s.table
                self.tables[t.name] = (
                    np.array(t.values, dtype=float) if t.values is not None else np.full(t.dims, np.nan)
                )
            elif isinstance(s, (Scope, BatchBlock)):
                self._nested(ctx, pos, lambda c: self._block(s.body, c))
            elif isinstance(s, Loop):
                if s.role == "quad":
                    for qv in range(int(s.lo), int(s.hi)):
                        saved = ctx.counters.get("q")
                        ctx.counters["q"] = qv
                        self._nested(ctx, pos, lambda c: self._block(s.body, c), extra=qv)
                        ctx.counters["q"] = saved
                else:
                    self._element_loop(s, ctx, pos)
            else:
                raise TypeError(f"unknown statement {s!r}")

    def _nested(self, ctx: _Ctx, pos: int, fn, extra: int = 0):
        if self.trace_map is None:
            fn(ctx)
            return
        old = ctx.key
        base = old if old is not None else np.zeros((ctx.lanes or 1, 0), np.int64)
        ctx.key = np.column_stack([base, np.full(len(base), pos), np.full(len(base), extra)])
        fn(ctx)
        ctx.key = old

    def _element_loop(self, s: Loop, ctx: _Ctx, pos: int):
        n = self.n
        lanes = ctx.lanes or 1
        c = ctx.counters
        env_b = {k: np.broadcast_to(v, (lanes,)) for k, v in c.items() if k in ("x", "y", "z")}
        lo = _bound(s.lo, n, env_b, lanes)
        hi = _bound(s.hi, n, env_b, lanes)
        lo = np.maximum(lo, 0)
        counts = np.maximum(hi - lo, 0)
        total = int(counts.sum())
        if total == 0:
            return
        starts = np.repeat(lo, counts)
        offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        vals = starts + offs

        def expand(v):
            if isinstance(v, np.ndarray) and v.ndim == 1 and len(v) == lanes and ctx.lanes is not None:
                return np.repeat(v, counts)
            return v

        new_counters = {k: expand(np.broadcast_to(v, (lanes,)).copy() if k in ("x", "y", "z") else v)
                        for k, v in c.items()}
        for k in ("x", "y", "z"):
            new_counters[k] = np.repeat(np.broadcast_to(c[k], (lanes,)), counts)
        new_counters[s.counter] = vals
        new_env = {k: expand(v) for k, v in ctx.env.items()}
        key = None
        if self.trace_map is not None:
            base = ctx.key if ctx.key is not None else np.zeros((lanes, 0), np.int64)
            key = np.column_stack([np.repeat(base, counts, axis=0), np.full(total, pos), vals])
        inner = _Ctx(total, new_counters, new_env, key, ctx.senv)
        self._block(s.body, inner)

    def trace(self) -> AccessTrace:
        if not self.events:
            return AccessTrace(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, bool), list(self.k.fields))
        width = max(e[0].shape[1] for e in self.events)
        keys, fids, addrs, writes = [], [], [], []
        for key, fid, addr, w in self.events:
            pad = np.full((len(key), width - key.shape[1]), -1, np.int64)
            keys.append(np.column_stack([key, pad]))
            fids.append(np.full(len(key), fid))
            addrs.append(np.asarray(addr, np.int64))
            writes.append(np.full(len(key), w))
        keys = np.concatenate(keys)
        order = np.lexsort(keys.T[::-1])
        return AccessTrace(
            np.concatenate(fids)[order],
            np.concatenate(addrs)[order],
            np.concatenate(writes)[order],
            list(self.k.fields),
        )


def _bound(b, n, env, lanes):
    if isinstance(b, Affine):
        return np.broadcast_to(np.asarray(b.eval_arrays(n, env)), (lanes,)).astype(np.int64)
    return np.full(lanes, int(b), np.int64)


# ---------------------------------------------------------------- global driver


def macro_params(k: Kernel, mesh: MacroMesh, macro: int, level: int) -> dict:
    from ..ir.builder import jac_param, sign_param

    out = {}
    space = k.form.space
    idx = get_indexer(space, mesh, level) if space.value == "ND1" else None
    for o in Orientation:
        j, _ = jacobian(mesh, macro, level, o)
        for r in range(3):
            for c in range(3):
                out[jac_param(o, r, c)] = float(j[r, c])
        if idx is not None:
            for i, s in enumerate(idx.element_signs(macro, o)):
                out[sign_param(o, i)] = float(s)
    return out


def field_layout(k: Kernel, mesh: MacroMesh, level: int) -> dict:
    """Per field: (global length, l2g (n_macros, local) or None for element storage)."""
    out = {}
    n2 = k.form.space.n_local ** 2
    for name, f in k.fields.items():
        if f.space is None:
            per = 8**level * n2
            out[name] = (per * mesh.n_macros, None, per)
        else:
            idx = get_indexer(f.space, mesh, level)
            out[name] = (idx.n_dofs, idx.l2g, idx.l2g.shape[1])
    return out


def field_bases(k: Kernel, layout: dict, align: int = LINE_ALIGN) -> dict:
    bases, acc = {}, 0
    for name in k.fields:
        bases[name] = acc
        acc += -(-8 * layout[name][0] // align) * align
    return bases


def run_kernel(k: Kernel, mesh: MacroMesh, level: int, inputs: dict, trace: bool = False,
               tables_hook=None):
    """Apply ``k`` over all macros.

    ``inputs`` maps field names to global arrays; the output field (``w`` or
    the element-matrix storage ``A`` for setup kernels) is accumulated into
    and returned. With ``trace`` the ordered access trace is returned too.
    """
    layout = field_layout(k, mesh, level)
    bases = field_bases(k, layout)
    out_name = "A" if k.precompute == "setup" else "w"
    arrays = {}
    for name, (length, _, _) in layout.items():
        if name == out_name:
            arrays[name] = np.array(inputs[name], dtype=float) if name in inputs else np.zeros(length)
        else:
            if name not in inputs:
                raise BindingError(f"missing field {name!r}")
            a = np.asarray(getattr(inputs[name], "values", inputs[name]), dtype=float)
            if a.shape != (length,):
                raise ValueError(f"field {name!r} has length {a.shape}, expected {length}")
            arrays[name] = a
    parts = []
    for t in range(mesh.n_macros):
        local, maps = {}, {}
        for name, (length, l2g, per) in layout.items():
            g = l2g[t] if l2g is not None else np.arange(t * per, (t + 1) * per)
            maps[name] = (bases[name], g)
            local[name] = arrays[name][g] if name != out_name else np.zeros(len(g))
        interp = Interpreter(k, level, local, macro_params(k, mesh, t, level), maps if trace else None)
        interp.table_hook = tables_hook
        interp.run()
        np.add.at(arrays[out_name], maps[out_name][1], local[out_name])
        if trace:
            parts.append(interp.trace())
    if trace:
        return arrays[out_name], AccessTrace.concat(parts)
    return arrays[out_name]
