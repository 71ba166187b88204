"""Kernel transformations: rebuilds for S, fQ, U, T, P and statement passes for CSE, I and V."""

from __future__ import annotations

from dataclasses import replace
from itertools import count

from ..forms import WeakForm
from ..quadrature import QuadratureRule, quadrature
from .builder import LoweringOptions, lower
from .expr import ARITH, Expr, _rebuild, iter_unique, substitute, temp, temps_used
from .kernel import (
    BLOCK_STMTS,
    EXPR_STMTS,
    BatchBlock,
    FieldAccumulate,
    Kernel,
    Loop,
    OptimizationSet,
    OptionError,
    Scope,
    TableStore,
    TempAccumulate,
    TempAssign,
    walk,
)

# ---------------------------------------------------------------- rebuild-type transformations


def build_kernel(form: WeakForm, strategy: str = "sawtooth", rule: QuadratureRule | None = None,
                 opts: OptimizationSet | None = None) -> Kernel:
    """Baseline kernel: quadrature as explicit per-entry loops, no optimizations."""
    rule = rule or form.default_rule()
    k = lower(form, strategy, rule, LoweringOptions("loop"), name=f"{form.short}_base")
    k.opts = opts or OptimizationSet(C=strategy == "cubes")
    return k


def _relower(k: Kernel, rule: QuadratureRule | None = None, **changes) -> Kernel:
    lo = LoweringOptions(k.quad_mode, k.symmetric, k.tabulated, k.precompute)
    lo = replace(lo, **changes)
    new = lower(k.form, k.strategy, rule or k.rule, lo, name=k.name)
    new.opts = k.opts
    for p in k.passes:
        new = _replay(new, p)
    return new


def _replay(k: Kernel, p):
    if p == "cse":
        return cse(k)
    if p == "hoist":
        return hoist_invariants(k)
    if isinstance(p, tuple) and p[0] == "vectorize":
        return vectorize(k, p[1])
    raise ValueError(p)


def exploit_symmetry(k: Kernel) -> Kernel:
    if not k.form.symmetric:
        raise OptionError(f"{k.form.short} is not symmetric")
    out = _relower(k, symmetric=True)
    out.opts = replace(k.opts, S=True)
    return out


def set_quadrature_mode(k: Kernel, mode: str) -> Kernel:
    if mode not in ("fused", "unrolled", "loop"):
        raise ValueError(f"unknown quadrature mode {mode!r}")
    out = _relower(k, quad_mode=mode)
    out.opts = replace(k.opts, fQ=mode == "fused")
    return out


def under_integrate(k: Kernel) -> Kernel:
    deg = k.form.under_integrated_degree
    if deg is None:
        raise OptionError(f"no reduced quadrature available for {k.form.short}")
    out = _relower(k, rule=quadrature(deg))
    out.opts = replace(k.opts, U=True)
    return out


def tabulate(k: Kernel) -> Kernel:
    if k.precompute is not None:
        raise OptionError("tabulation cannot be combined with precomputed matrices")
    out = _relower(k, tabulated=True)
    out.opts = replace(k.opts, T=True)
    return out


# ---------------------------------------------------------------- CSE


def cse(k: Kernel) -> Kernel:
    """Every subexpression with two or more uses in a block becomes a temp."""
    out = k.clone()
    names = _namer(out, "t")
    out.body = _cse_block(out.body, names)
    out.passes = tuple(p for p in k.passes if p != "cse") + ("cse",) if "cse" not in k.passes else k.passes
    return out


def _namer(k: Kernel, prefix: str):
    used = {s.name for s in walk(k.body) if isinstance(s, (TempAssign, TempAccumulate))}
    c = count()

    def nxt():
        while True:
            name = f"{prefix}{next(c)}"
            if name not in used:
                used.add(name)
                return name

    return nxt


def _cse_block(body: list, names) -> list:
    stmts = [s for s in body if isinstance(s, EXPR_STMTS)]
    uses: dict[int, int] = {}
    for s in stmts:
        uses[id(s.expr)] = uses.get(id(s.expr), 0) + 1
    for node in iter_unique([s.expr for s in stmts]):
        for c in node.args:
            uses[id(c)] = uses.get(id(c), 0) + 1

    def candidate(n: Expr) -> bool:
        return uses.get(id(n), 0) >= 2 and (n.op in ARITH or n.op == "table")

    mapping: dict[int, Expr] = {}
    out = []
    for s in body:
        if isinstance(s, BLOCK_STMTS):
            out.append(replace(s, body=_cse_block(s.body, names)))
            continue
        if not isinstance(s, EXPR_STMTS):
            out.append(s)
            continue
        for node in iter_unique([s.expr]):
            if id(node) in mapping or not candidate(node):
                continue
            rebuilt = _rebuild(node, [mapping.get(id(c), c) if id(c) in mapping else substitute(c, mapping)
                                      for c in node.args]) if node.args else node
            name = names()
            out.append(TempAssign(name, rebuilt, s.tag))
            mapping[id(node)] = temp(name)
        out.append(replace(s, expr=substitute(s.expr, mapping)))
    return out


# ---------------------------------------------------------------- loop-invariant motion


def hoist_invariants(k: Kernel) -> Kernel:
    """Move loop-invariant work to the outermost scope where it is still valid."""
    if "cse" not in k.passes:
        k = cse(k)
    out = k.clone()
    names = _namer(out, "h")
    out.body = _hoist_block(out.body, names)
    out.passes = k.passes + ("hoist",) if "hoist" not in k.passes else k.passes
    return out


def _hoist_block(body: list, names) -> list:
    result = []
    for s in body:
        if isinstance(s, Loop):
            s = replace(s, body=_hoist_block(s.body, names))
            hoisted, s = _hoist_from_loop(s, names)
            result.extend(hoisted)
            result.append(s)
        elif isinstance(s, (Scope, BatchBlock)):
            result.append(replace(s, body=_hoist_block(s.body, names)))
        else:
            result.append(s)
    return result


class _Unit:
    __slots__ = ("stmt", "reads", "writes", "counters", "pinned")

    def __init__(self, s):
        self.stmt = s
        self.reads: set[str] = set()
        self.writes: set[str] = set()
        self.counters: set[str] = set()
        self.pinned = isinstance(s, (FieldAccumulate, TableStore, TempAccumulate))
        internal: set[str] = set()
        for t in [s] + list(walk(s.body) if isinstance(s, BLOCK_STMTS) else []):
            if isinstance(t, Loop):
                internal.add(t.counter)
            if isinstance(t, EXPR_STMTS):
                self.reads |= temps_used(t.expr)
                self.counters |= set(t.expr.counters)
                if isinstance(t, FieldAccumulate):
                    self.counters |= {"x", "y", "z"}
                    self.pinned = True
                if isinstance(t, TableStore):
                    self.pinned = True
            if isinstance(t, (TempAssign, TempAccumulate)):
                self.writes.add(t.name)
        self.counters -= internal


def _hoist_from_loop(loop: Loop, names):
    units = [_Unit(s) for s in loop.body]
    variant: set[str] = set()
    for u in units:
        if isinstance(u.stmt, TempAccumulate):
            variant.add(u.stmt.name)
    while True:
        before = len(variant)
        for u in units:
            if _is_variant(u, loop.counter, variant):
                variant |= u.writes
        if len(variant) == before:
            break
    movable = [not _is_variant(u, loop.counter, variant) for u in units]

    hoisted = [u.stmt for u, m in zip(units, movable) if m]
    extracted: dict[int, str] = {}
    extra: list = []
    kept = []
    for u, m in zip(units, movable):
        if m:
            continue
        s = u.stmt
        if isinstance(s, EXPR_STMTS):
            mapping = {}
            for node in _maximal_invariant(s.expr, loop.counter, variant):
                name = extracted.get(id(node))
                if name is None:
                    name = names()
                    extracted[id(node)] = name
                    extra.append(TempAssign(name, node, s.tag))
                mapping[id(node)] = temp(name)
            if mapping:
                s = replace(s, expr=substitute(s.expr, mapping))
        kept.append(s)
    return hoisted + extra, replace(loop, body=kept)


def _is_variant(u: _Unit, ctr: str, variant: set[str]) -> bool:
    return u.pinned or ctr in u.counters or bool(u.reads & variant) or bool(u.writes & variant)


def _maximal_invariant(e: Expr, ctr: str, variant: set[str]) -> list[Expr]:
    inv: dict[int, bool] = {}
    for n in iter_unique([e]):
        if n.op == "temp":
            inv[id(n)] = n.data not in variant
        elif n.op in ("field",):
            inv[id(n)] = False
        else:
            inv[id(n)] = ctr not in n.counters and all(inv[id(c)] for c in n.args)
    out: list[Expr] = []
    seen: set[int] = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if inv[id(n)]:
            if n.op in ARITH:
                out.append(n)
            continue
        stack.extend(reversed(n.args))
    return out


# ---------------------------------------------------------------- vectorization


def vectorize(k: Kernel, width: int = 4) -> Kernel:
    """Split batchable x-loops into width-W batch blocks plus a scalar remainder."""
    if width < 2:
        raise OptionError("vector width must be >= 2")
    out = k.clone()
    found = []

    def visit(body):
        res = []
        for s in body:
            if isinstance(s, Loop) and s.batchable and s.role == "element" and not s.vector_width:
                found.append(s)
                res.append(replace(s, vector_width=width, body=[BatchBlock(width, s.body)]))
            elif isinstance(s, BLOCK_STMTS):
                res.append(replace(s, body=visit(s.body)))
            else:
                res.append(s)
        return res

    out.body = visit(out.body)
    if not found and not any(isinstance(s, Loop) and s.vector_width for s in walk(k.body)):
        raise OptionError("kernel has no batchable innermost loop")
    out.passes = k.passes + (("vectorize", width),)
    return out


# ---------------------------------------------------------------- pipeline


def kernel_name(form: WeakForm, opts: OptimizationSet) -> str:
    t = opts.text()
    return f"{form.short}_{t}" if t else form.short


def generate(form: WeakForm, opts: OptimizationSet | str = "", rule: QuadratureRule | None = None) -> Kernel:
    """Kernel for ``form`` with the optimization set ``opts`` applied.

    For P the apply kernel is returned; its setup kernel is in ``.setup``.
    """
    if isinstance(opts, str):
        opts = OptimizationSet.parse(opts)
    opts.validate(form)
    if opts.P:
        setup, apply = precompute_variant(form, opts, rule)
        apply.setup = setup
        return apply
    if rule is None:
        rule = quadrature(form.under_integrated_degree) if opts.U else form.default_rule()
    lo = LoweringOptions("fused" if opts.fQ else "unrolled", opts.S, opts.T, None)
    k = lower(form, opts.strategy, rule, lo, name=kernel_name(form, opts))
    k.opts = opts
    return _low_level(k, opts)


def _low_level(k: Kernel, opts: OptimizationSet) -> Kernel:
    k = cse(k)
    if opts.I:
        k = hoist_invariants(k)
    if opts.V:
        k = vectorize(k, opts.width)
    return k


def precompute_variant(form: WeakForm, opts: OptimizationSet | str = "P", rule=None) -> tuple[Kernel, Kernel]:
    """Setup kernel storing every local matrix and the apply kernel streaming them."""
    if isinstance(opts, str):
        opts = OptimizationSet.parse(opts)
    if opts.T:
        raise OptionError("P (precomputed matrices) cannot be combined with T (tabulation)")
    opts = replace(opts, P=True)
    if rule is None:
        rule = quadrature(form.under_integrated_degree) if opts.U else form.default_rule()
    mode = "fused" if opts.fQ else "unrolled"
    name = kernel_name(form, opts)
    setup = lower(form, opts.strategy, rule, LoweringOptions(mode, opts.S, False, "setup"), name=name + "_setup")
    setup.opts = opts
    apply = lower(form, opts.strategy, rule, LoweringOptions(mode, opts.S, False, "apply"), name=name)
    apply.opts = opts
    return _low_level(setup, opts), _low_level(apply, opts)
