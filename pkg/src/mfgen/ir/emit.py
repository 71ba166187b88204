"""Deterministic C-syntax rendering of kernels (informational, never compiled here)."""

from __future__ import annotations

from ..fespace import space_blocks
from ..loops import Affine
from ..mesh import BOUND_SHIFT, Orientation
from .expr import _fmt_const, to_text
from .kernel import (
    BatchBlock,
    FieldAccumulate,
    Kernel,
    Loop,
    Scope,
    TableDecl,
    TableStore,
    TempAccumulate,
    TempAssign,
    walk,
)

_PRELUDE = """#include <stdint.h>

#define TET(m) (((m) + 1) * ((m) + 2) * ((m) + 3) / 6)
#define IDX(x, y, z, m) (TET(m) - TET((m) - (z)) + (y) * ((m) - (z) + 1) - (y) * ((y) - 1) / 2 + (x))
#define MAX0(a) ((a) > 0 ? (a) : 0)
"""


def _bound_text(b, lower: bool = False) -> str:
    if isinstance(b, Affine):
        t = b.text()
        return f"MAX0({t})" if lower and (b.terms or b.const < 0) else t
    return str(int(b))


class _Emitter:
    def __init__(self, k: Kernel):
        self.k = k
        self.lines: list[str] = []
        self.rename: dict[str, str] = {}
        self.accumulated = {s.name for s in walk(k.body) if isinstance(s, TempAccumulate)}
        self.shifts = {
            name: [b.shift for b in space_blocks(f.space)] if f.space is not None else None
            for name, f in k.fields.items()
        }
        self.n_local = k.form.space.n_local

    def ctr(self, c: str) -> str:
        return self.rename.get(c, c)

    def index(self, fname: str, slot: tuple) -> str:
        x, y, z = self.ctr("x"), self.ctr("y"), self.ctr("z")
        shifts = self.shifts[fname]
        if shifts is None:
            _, o, entry = slot
            m = 1 + BOUND_SHIFT[Orientation(o)]
            return f"(off_{fname}[{o}] + IDX({x}, {y}, {z}, n - {m})) * {self.n_local ** 2} + {entry}"
        blk, dx, dy, dz = slot
        xs = [f"{c} + {d}" if d else c for c, d in ((x, dx), (y, dy), (z, dz))]
        m = f"n - {shifts[blk]}" if shifts[blk] else "n"
        return f"off_{fname}[{blk}] + IDX({xs[0]}, {xs[1]}, {xs[2]}, {m})"

    def leaf(self, e) -> str:
        if e.op == "field":
            f, slot = e.data
            return f"{f}[{self.index(f, slot)}]"
        if e.op == "table":
            t, idx = e.data
            return t + "".join(f"[{self.ctr(i) if isinstance(i, str) else i}]" for i in idx)
        if e.op == "counter":
            return self.ctr(e.data)
        return str(e.data)

    def expr(self, e) -> str:
        return to_text(e, self.leaf)

    def out(self, depth: int, text: str) -> None:
        self.lines.append("    " * depth + text)

    def block(self, body: list, depth: int, declared: set[str]) -> None:
        declared = set(declared)
        for s in body:
            if isinstance(s, TempAssign):
                rhs = self.expr(s.expr)
                if s.name in declared:
                    self.out(depth, f"{s.name} = {rhs};")
                else:
                    q = "" if s.name in self.accumulated else "const "
                    self.out(depth, f"{q}double {s.name} = {rhs};")
                    declared.add(s.name)
            elif isinstance(s, TempAccumulate):
                self.out(depth, f"{s.name} += {self.expr(s.expr)};")
            elif isinstance(s, FieldAccumulate):
                self.out(depth, f"{s.field}[{self.index(s.field, s.slot)}] += {self.expr(s.expr)};")
            elif isinstance(s, TableStore):
                idx = "".join(f"[{i}]" for i in s.index)
                self.out(depth, f"{s.table}{idx} = {self.expr(s.expr)};")
            elif isinstance(s, TableDecl):
                self.table_decl(s.table, depth)
            elif isinstance(s, Scope):
                self.out(depth, f"/* orientation {Orientation(s.orientation).name} */")
                self.out(depth, "{")
                self.block(s.body, depth + 1, declared)
                self.out(depth, "}")
            elif isinstance(s, BatchBlock):
                c = "x"
                self.out(depth, f"for (int64_t l = 0; l < {s.width}; ++l) {{")
                self.out(depth + 1, f"const int64_t {c}l = {c} + l;")
                old = dict(self.rename)
                self.rename[c] = f"{c}l"
                self.block(s.body, depth + 1, declared)
                self.rename = old
                self.out(depth, "}")
            elif isinstance(s, Loop):
                self.loop(s, depth, declared)
            else:
                raise TypeError(f"cannot emit {s!r}")

    def loop(self, s: Loop, depth: int, declared: set[str]) -> None:
        c = s.counter
        lo, hi = _bound_text(s.lo, lower=True), _bound_text(s.hi)
        if not s.vector_width:
            self.out(depth, f"for (int64_t {c} = {lo}; {c} < {hi}; ++{c}) {{")
            self.block(s.body, depth + 1, declared)
            self.out(depth, "}")
            return
        w = s.vector_width
        self.out(depth, "{")
        self.out(depth + 1, f"int64_t {c} = {lo};")
        self.out(depth + 1, f"for (; {c} + {w} <= {hi}; {c} += {w}) {{")
        self.block(s.body, depth + 2, declared)
        self.out(depth + 1, "}")
        self.out(depth + 1, f"for (; {c} < {hi}; ++{c}) {{")
        inner = s.body[0].body if len(s.body) == 1 and isinstance(s.body[0], BatchBlock) else s.body
        self.block(inner, depth + 2, declared)
        self.out(depth + 1, "}")
        self.out(depth, "}")

    def table_decl(self, t, depth: int) -> None:
        dims = "".join(f"[{d}]" for d in t.dims)
        if t.values is None:
            self.out(depth, f"double {t.name}{dims};")
            return
        flat = [_fmt_const(v) for v in t.values.ravel()]
        self.out(depth, f"static const double {t.name}{dims} = {{")
        for i in range(0, len(flat), 4):
            self.out(depth + 1, ", ".join(flat[i : i + 4]) + ",")
        self.out(depth, "};")

    def render(self) -> str:
        k = self.k
        r = k.rule
        head = [
            f"/* kernel {k.name}",
            f" * form {k.form.short}, strategy {k.strategy}, optimizations {k.opts}",
            f" * quadrature {r.name}: degree {r.degree}, {r.n_points} points, mode {k.quad_mode}",
            f" * local-matrix entries computed: {k.entries_computed}",
            " */",
        ]
        args = []
        for name, f in k.fields.items():
            q = "" if name == k.output_field else "const "
            args.append(f"{q}double *restrict {name}")
            args.append(f"const int64_t *restrict off_{name}")
        args += ["const double *restrict param", "int64_t n"]
        self.lines = head + [_PRELUDE, f"void {k.name}(" + ", ".join(args) + ")", "{"]
        for i, p in enumerate(k.params):
            self.out(1, f"const double {p} = param[{i}];")
        self.block(k.body, 1, set())
        self.lines.append("}")
        return "\n".join(self.lines) + "\n"


def emit_source(k: Kernel) -> str:
    """C-syntax text of ``k``; identical kernels give identical bytes."""
    text = _Emitter(k).render()
    setup = getattr(k, "setup", None)
    if setup is not None:
        text = _Emitter(setup).render() + "\n" + text
    return text
