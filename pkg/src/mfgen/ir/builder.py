"""Lowering of a weak form into kernel statements."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..fespace import ND1, FunctionSpace, element_slots, reference_curls, tabulate, tabulate_grad
from ..loops import BodySpec, LoopNest, LoopSpec, build_nest
from ..mesh import BOUND_SHIFT, Orientation, orientation_sign
from ..quadrature import QuadratureRule
from .expr import Expr, add, const, div, dot, field_load, mul, neg, param, sum_exprs, table_load, temp
from .kernel import (
    FieldAccumulate,
    FieldInfo,
    Kernel,
    Loop,
    Scope,
    Table,
    TableDecl,
    TableStore,
    TempAccumulate,
    TempAssign,
)

Q = "q"


def jac_param(o: Orientation, r: int, c: int) -> str:
    return f"J_{Orientation(o).name}_{r}{c}"


def sign_param(o: Orientation, i: int) -> str:
    return f"s_{Orientation(o).name}_{i}"


@dataclass
class _Geometry:
    j: list
    jinv: list
    invdet: Expr
    absdet: Expr


def geometry(o: Orientation) -> _Geometry:
    j = [[param(jac_param(o, r, c)) for c in range(3)] for r in range(3)]
    a = [[None] * 3 for _ in range(3)]
    a[0][0] = j[1][1] * j[2][2] - j[1][2] * j[2][1]
    a[0][1] = j[0][2] * j[2][1] - j[0][1] * j[2][2]
    a[0][2] = j[0][1] * j[1][2] - j[0][2] * j[1][1]
    a[1][0] = j[1][2] * j[2][0] - j[1][0] * j[2][2]
    a[1][1] = j[0][0] * j[2][2] - j[0][2] * j[2][0]
    a[1][2] = j[0][2] * j[1][0] - j[0][0] * j[1][2]
    a[2][0] = j[1][0] * j[2][1] - j[1][1] * j[2][0]
    a[2][1] = j[0][1] * j[2][0] - j[0][0] * j[2][1]
    a[2][2] = j[0][0] * j[1][1] - j[0][1] * j[1][0]
    det = j[0][0] * a[0][0] + j[0][1] * a[1][0] + j[0][2] * a[2][0]
    invdet = div(const(1.0), det)
    jinv = [[mul(a[r][c], invdet) for c in range(3)] for r in range(3)]
    absdet = det if orientation_sign(o) > 0 else neg(det)
    return _Geometry(j, jinv, invdet, absdet)


@dataclass
class LoweringOptions:
    quad_mode: str = "loop"
    symmetric: bool = False
    tabulated: bool = False
    precompute: str | None = None


@dataclass
class _Lowering:
    form: object
    rule: QuadratureRule
    opts: LoweringOptions
    tables: dict = field(default_factory=dict)

    def __post_init__(self):
        self.space: FunctionSpace = self.form.space
        self.n = self.space.n_local
        self.nq = self.rule.n_points
        self.mode = self.opts.quad_mode if self.nq > 1 else "unrolled"
        pts = self.rule.points
        self._phi = {s: tabulate(s, pts) for s in set(dict(self.form.coefficients).values())}
        if self.space is ND1:
            self._vals = tabulate(ND1, pts)
            self._curls = reference_curls()
        else:
            self._vals = tabulate(self.space, pts)
            self._grads = tabulate_grad(self.space, pts)
        self._geo_cache: dict = {}

    # -- quadrature data: constants when q is a number, table loads in a q-loop

    def _qdata(self, name: str, values: np.ndarray, q, idx: tuple) -> Expr:
        if not isinstance(q, str):
            return const(values[(q,) + idx])
        if name not in self.tables:
            self.tables[name] = Table(name, values.shape, "quad", values=np.array(values))
        return table_load(name, (q,) + idx)

    def weight(self, q) -> Expr:
        return self._qdata("qw", self.rule.weights, q, ())

    def coef_basis(self, space: FunctionSpace, q, m: int) -> Expr:
        return self._qdata(f"qphi_{space.value}", self._phi[space], q, (m,))

    def ref_grad(self, q, i: int, c: int) -> Expr:
        if self.space.degree == 1:
            return const(self._grads[0, i, c])
        return self._qdata("qgrad", self._grads, q, (i, c))

    def ref_value(self, q, i: int, c: int | None) -> Expr:
        if self.space is ND1:
            return self._qdata("qnd1", self._vals, q, (i, c))
        return self._qdata(f"qphi_{self.space.value}", self._vals, q, (i,))

    # -- micro-invariant factors

    def geo_factor(self, o: Orientation, kind: str, q, j: int, i: int) -> Expr:
        if self.opts.tabulated:
            jj, ii = (min(j, i), max(j, i)) if self.opts.symmetric else (j, i)
            return table_load(f"tab_{kind}", (int(o), q, jj, ii))
        return self.geo_expr(o, kind, q, j, i)

    def geo_expr(self, o: Orientation, kind: str, q, j: int, i: int) -> Expr:
        key = (int(o), kind, q)
        vec = self._geo_cache.get(key)
        if vec is None:
            g = geometry(o)
            if kind == "gradgrad":
                vec = [
                    [sum_exprs(mul(g.jinv[c][r], self.ref_grad(q, a, c)) for c in range(3)) for r in range(3)]
                    for a in range(self.n)
                ]
            elif kind == "curlcurl":
                ch = self._curls
                vec = [
                    [mul(sum_exprs(mul(g.j[r][c], const(ch[a, c])) for c in range(3)), g.invdet) for r in range(3)]
                    for a in range(self.n)
                ]
            elif kind == "mass" and self.space is ND1:
                vec = [
                    [sum_exprs(mul(g.jinv[c][r], self.ref_value(q, a, c)) for c in range(3)) for r in range(3)]
                    for a in range(self.n)
                ]
            elif kind == "mass":
                vec = [[self.ref_value(q, a, None)] for a in range(self.n)]
            else:
                raise ValueError(kind)
            wdet = mul(self.weight(q), g.absdet)
            vec = (wdet, vec)
            self._geo_cache[key] = vec
        wdet, v = vec
        return mul(wdet, dot(v[j], v[i]))

    # -- entries

    def coef_value(self, name: str, q, coef_refs: dict) -> Expr:
        space = dict(self.form.coefficients)[name]
        return sum_exprs(
            mul(coef_refs[name][m], self.coef_basis(space, q, m)) for m in range(space.n_local)
        )

    def integrand(self, o, q, j, i, coef_refs) -> Expr:
        parts = []
        for t in self.form.terms:
            geo = self.geo_factor(o, t.kind, q, j, i)
            if t.coefficient is None:
                parts.append(geo)
            else:
                parts.append(mul(self.coef_value(t.coefficient, q, coef_refs), geo))
        return sum_exprs(parts)

    def computed_entries(self) -> list[tuple[int, int]]:
        n = self.n
        if self.opts.symmetric:
            return [(j, i) for j in range(n) for i in range(j, n)]
        return [(j, i) for j in range(n) for i in range(n)]


def _gather_name(fieldname: str, slot) -> str:
    return f"{fieldname}_{slot[0]}_{''.join(str(s) for s in slot[1:])}"


def _slot_key(s) -> tuple:
    return (s.block, s.dx, s.dy, s.dz)


def lower(form, strategy: str, rule: QuadratureRule, opts: LoweringOptions, name: str = "") -> Kernel:
    low = _Lowering(form, rule, opts)
    space = form.space
    n = low.n
    nest = build_nest(strategy)
    tables: dict[str, Table] = low.tables
    entries = low.computed_entries()
    pre = opts.precompute

    def element_stmts(o: Orientation, gathered: dict) -> list:
        tag = int(o)
        oname = Orientation(o).name
        slots, _ = element_slots(space, o)
        signed = space is ND1
        v = [temp(gathered[("v", _slot_key(s))]) for s in slots] if pre != "setup" else []
        if signed and v and pre != "apply":
            v = [mul(param(sign_param(o, i)), v[i]) for i in range(n)]
        stmts: list = []
        if pre == "apply":
            for jj, s in enumerate(slots):
                r = sum_exprs(
                    mul(field_load("A", ("e", tag, jj * n + i)), v[i]) for i in range(n)
                )
                stmts.append(FieldAccumulate("w", _slot_key(s), r, tag))
            return stmts
        coef_refs = {}
        for cname, cspace in form.coefficients:
            cslots, _ = element_slots(cspace, o)
            coef_refs[cname] = [temp(gathered[(cname, _slot_key(s))]) for s in cslots]

        def aname(j, i):
            return f"a_{oname}_{j}_{i}"

        mode = low.mode
        amat: dict[tuple[int, int], Expr] = {}
        if mode == "unrolled":
            for j, i in entries:
                e = sum_exprs(low.integrand(o, q, j, i, coef_refs) for q in range(low.nq))
                if opts.symmetric or pre == "setup":
                    stmts.append(TempAssign(aname(j, i), e, tag))
                    amat[(j, i)] = temp(aname(j, i))
                else:
                    amat[(j, i)] = e
        elif mode == "fused":
            acc = []
            for j, i in entries:
                stmts.append(TempAssign(aname(j, i), const(0.0), tag))
                acc.append(TempAccumulate(aname(j, i), low.integrand(o, Q, j, i, coef_refs), tag))
                amat[(j, i)] = temp(aname(j, i))
            stmts.append(Loop(Q, 0, low.nq, acc, False, "quad"))
        elif mode == "loop":
            for j, i in entries:
                stmts.append(TempAssign(aname(j, i), const(0.0), tag))
                body = [TempAccumulate(aname(j, i), low.integrand(o, Q, j, i, coef_refs), tag)]
                stmts.append(Loop(Q, 0, low.nq, body, False, "quad"))
                amat[(j, i)] = temp(aname(j, i))
        else:
            raise ValueError(f"unknown quadrature mode {mode!r}")

        def entry(j, i):
            if (j, i) in amat:
                return amat[(j, i)]
            return amat[(i, j)]

        if pre == "setup":
            for j in range(n):
                for i in range(n):
                    a = entry(j, i)
                    if signed:
                        a = mul(mul(param(sign_param(o, j)), param(sign_param(o, i))), a)
                    stmts.append(FieldAccumulate("A", ("e", tag, j * n + i), a, tag))
            return stmts
        for jj, s in enumerate(slots):
            r = sum_exprs(mul(entry(jj, i), v[i]) for i in range(n))
            if signed:
                r = mul(param(sign_param(o, jj)), r)
            stmts.append(FieldAccumulate("w", _slot_key(s), r, tag))
        return stmts

    def body_stmts(b: BodySpec) -> list:
        gathered: dict = {}
        gathers: list = []
        fields = [("v", space)] if pre != "setup" else []
        if pre != "apply":
            fields += list(form.coefficients)
        for o in b.orientations:
            for fname, fspace in fields:
                slots, _ = element_slots(fspace, o)
                for s in slots:
                    key = (fname, _slot_key(s))
                    if key not in gathered:
                        gathered[key] = _gather_name(fname, _slot_key(s))
                        gathers.append(TempAssign(gathered[key], field_load(fname, _slot_key(s)), int(o)))
        out = list(gathers)
        for o in b.orientations:
            out.extend(element_stmts(o, gathered))
        return out

    def loop_stmt(spec: LoopSpec) -> Loop:
        body: list = []
        for c in spec.children:
            if isinstance(c, BodySpec):
                body.extend(body_stmts(c))
            else:
                body.append(loop_stmt(c))
        return Loop(spec.counter, spec.lo, spec.hi, body, spec.batchable, "element")

    def table_stores(o: Orientation) -> list:
        out = []
        for t in form.terms:
            for q in range(low.nq):
                for j, i in entries:
                    e = low.geo_expr(o, t.kind, q, j, i)
                    out.append(TableStore(f"tab_{t.kind}", (int(o), q, j, i), e, int(o)))
        return out

    top: list = []
    if opts.tabulated and pre is None:
        for t in form.terms:
            tables[f"tab_{t.kind}"] = Table(
                f"tab_{t.kind}", (6, low.nq, n, n), "tab", stored=6 * low.nq * len(entries)
            )
    for root, scope in zip(nest.roots, nest.scopes):
        stmt = loop_stmt(root)
        if scope is not None:
            prologue = table_stores(scope) if opts.tabulated and pre is None else []
            top.append(Scope(int(scope), prologue + [stmt]))
        else:
            if opts.tabulated and pre is None:
                for o in Orientation:
                    top.extend(table_stores(o))
            top.append(stmt)
    decls = [TableDecl(t) for t in tables.values()]

    fields = {}
    if pre != "setup":
        fields["v"] = FieldInfo("v", "in", space)
    if pre != "apply":
        for cname, cspace in form.coefficients:
            fields[cname] = FieldInfo(cname, "coef", cspace)
    if pre is not None:
        fields["A"] = FieldInfo("A", "matrix", None)
    if pre != "setup":
        fields["w"] = FieldInfo("w", "out", space)
    params = [jac_param(o, r, c) for o in Orientation for r in range(3) for c in range(3)]
    if space is ND1:
        params += [sign_param(o, i) for o in Orientation for i in range(n)]
    return Kernel(
        name=name or form.short,
        form=form,
        strategy=strategy,
        rule=rule,
        quad_mode=opts.quad_mode,
        symmetric=opts.symmetric,
        tabulated=opts.tabulated,
        precompute=pre,
        body=decls + top,
        fields=fields,
        tables=dict(tables),
        params=params,
        entries_computed=0 if pre == "apply" else len(entries),
    )


def matrix_storage_size(level: int, n_local: int) -> int:
    """Scalars per macro stored by the precompute setup kernel."""
    return 8**level * n_local * n_local


def element_matrix_offsets(level: int) -> dict[int, int]:
    """Offset (in elements) of each orientation block of the element-matrix storage."""
    from ..mesh import SAWTOOTH_ORDER, tet_number

    nn = 2**level
    out, acc = {}, 0
    for o in SAWTOOTH_ORDER:
        out[int(o)] = acc
        acc += tet_number(nn - 1 - BOUND_SHIFT[o])
    return out
