"""Hash-consed expression DAG with light constant folding."""

from __future__ import annotations

import weakref
from itertools import count
from typing import Iterable, Iterator

import numpy as np

ARITH = ("add", "sub", "mul", "div", "neg")
LEAVES = ("const", "counter", "param", "field", "table", "temp")

_serial = count()
_intern: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()


class Expr:
    """Immutable DAG node. Construct through the helper functions below."""

    __slots__ = ("op", "args", "data", "serial", "nops", "counters", "has_param", "__weakref__")

    op: str
    args: tuple
    data: object
    serial: int
    nops: int  # operation count of the fully expanded tree
    counters: frozenset
    has_param: bool

    def __repr__(self) -> str:
        return to_text(self)

    def __add__(self, other):
        return add(self, wrap(other))

    def __radd__(self, other):
        return add(wrap(other), self)

    def __sub__(self, other):
        return sub(self, wrap(other))

    def __rsub__(self, other):
        return sub(wrap(other), self)

    def __mul__(self, other):
        return mul(self, wrap(other))

    def __rmul__(self, other):
        return mul(wrap(other), self)

    def __truediv__(self, other):
        return div(self, wrap(other))

    def __neg__(self):
        return neg(self)

    @property
    def is_const(self) -> bool:
        return self.op == "const"

    @property
    def value(self) -> float:
        return self.data  # type: ignore[return-value]


def _key_data(op, data):
    if op == "const":
        return float(data).hex()
    return data


def _make(op: str, args: tuple = (), data=None) -> Expr:
    key = (op, _key_data(op, data), tuple(id(a) for a in args))
    node = _intern.get(key)
    if node is not None:
        return node
    node = Expr()
    node.op = op
    node.args = args
    node.data = data
    node.serial = next(_serial)
    node.nops = (1 if op in ARITH else 0) + sum(a.nops for a in args)
    cs = frozenset()
    for a in args:
        cs = cs | a.counters
    if op == "counter":
        cs = frozenset([data])
    elif op == "field":
        cs = frozenset(("x", "y", "z"))
    elif op == "table":
        cs = frozenset(c for c in data[1] if isinstance(c, str))
    node.counters = cs
    node.has_param = op == "param" or any(a.has_param for a in args)
    _intern[key] = node
    return node


def const(v: float) -> Expr:
    return _make("const", (), float(v))


def counter(name: str) -> Expr:
    return _make("counter", (), name)


def param(name: str) -> Expr:
    return _make("param", (), name)


def field_load(field: str, slot: tuple) -> Expr:
    return _make("field", (), (field, tuple(slot)))


def table_load(table: str, index: tuple) -> Expr:
    return _make("table", (), (table, tuple(index)))


def temp(name: str) -> Expr:
    return _make("temp", (), name)


ZERO = None  # set below


def wrap(v) -> Expr:
    return v if isinstance(v, Expr) else const(v)


def _cv(e: Expr):
    return e.data if e.op == "const" else None


def add(a: Expr, b: Expr) -> Expr:
    ca, cb = _cv(a), _cv(b)
    if ca is not None and cb is not None:
        return const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return _make("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    ca, cb = _cv(a), _cv(b)
    if ca is not None and cb is not None:
        return const(ca - cb)
    if cb == 0.0:
        return a
    if ca == 0.0:
        return neg(b)
    return _make("sub", (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _cv(a), _cv(b)
    if ca is not None and cb is not None:
        return const(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return const(0.0)
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    if ca == -1.0:
        return neg(b)
    if cb == -1.0:
        return neg(a)
    return _make("mul", (a, b))


def div(a: Expr, b: Expr) -> Expr:
    ca, cb = _cv(a), _cv(b)
    if cb == 0.0:
        raise ZeroDivisionError("division by constant zero")
    if ca is not None and cb is not None:
        return const(ca / cb)
    if cb == 1.0:
        return a
    if ca == 0.0:
        return const(0.0)
    return _make("div", (a, b))


def neg(a: Expr) -> Expr:
    if a.op == "const":
        return const(-a.data)
    if a.op == "neg":
        return a.args[0]
    return _make("neg", (a,))


def sum_exprs(items: Iterable[Expr]) -> Expr:
    """Left fold with +; empty sum is 0."""
    acc = None
    for e in items:
        acc = e if acc is None else add(acc, e)
    return acc if acc is not None else const(0.0)


def dot(a: list[Expr], b: list[Expr]) -> Expr:
    return sum_exprs(mul(x, y) for x, y in zip(a, b))


def iter_unique(roots: Iterable[Expr]) -> Iterator[Expr]:
    """Post-order over distinct nodes reachable from ``roots``."""
    seen: set[int] = set()
    for r in roots:
        if id(r) in seen:
            continue
        stack = [(r, False)]
        while stack:
            node, done = stack.pop()
            if done:
                yield node
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for c in reversed(node.args):
                if id(c) not in seen:
                    stack.append((c, False))


def temps_used(e: Expr) -> set[str]:
    return {n.data for n in iter_unique([e]) if n.op == "temp"}


def count_ops(e: Expr, by_kind: bool = False):
    """Operation count of the expanded tree (temps are leaves)."""
    if not by_kind:
        return e.nops
    memo: dict[int, dict[str, int]] = {}
    for n in iter_unique([e]):
        d = {k: 0 for k in ARITH}
        if n.op in ARITH:
            d[n.op] += 1
        for c in n.args:
            for k, v in memo[id(c)].items():
                d[k] += v
        memo[id(n)] = d
    return memo[id(e)]


def count_geometry_muls(e: Expr) -> int:
    """Multiplications and divisions in the expanded tree whose operands involve parameters."""
    memo: dict[int, int] = {}
    for n in iter_unique([e]):
        own = 1 if n.op in ("mul", "div") and n.has_param else 0
        memo[id(n)] = own + sum(memo[id(c)] for c in n.args)
    return memo[id(e)]


def substitute(e: Expr, mapping: dict[int, Expr]) -> Expr:
    """Rebuild ``e`` replacing nodes (by identity) found in ``mapping``."""
    memo: dict[int, Expr] = {}
    for n in iter_unique([e]):
        if id(n) in mapping:
            memo[id(n)] = mapping[id(n)]
        elif not n.args:
            memo[id(n)] = n
        else:
            memo[id(n)] = _rebuild(n, [memo[id(c)] for c in n.args])
    return memo[id(e)]


def _rebuild(n: Expr, args: list[Expr]) -> Expr:
    if all(a is b for a, b in zip(args, n.args)):
        return n
    # no folding here: rewriting must not change evaluation
    return _make(n.op, tuple(args), n.data)


def evaluate(e: Expr, leaf) -> object:
    """Evaluate with ``leaf(node)`` supplying values for leaves; memoized over the DAG."""
    memo: dict[int, object] = {}
    for n in iter_unique([e]):
        op = n.op
        if op == "const":
            memo[id(n)] = n.data
        elif op in LEAVES:
            memo[id(n)] = leaf(n)
        else:
            a = [memo[id(c)] for c in n.args]
            if op == "add":
                memo[id(n)] = a[0] + a[1]
            elif op == "sub":
                memo[id(n)] = a[0] - a[1]
            elif op == "mul":
                memo[id(n)] = a[0] * a[1]
            elif op == "div":
                memo[id(n)] = a[0] / a[1]
            else:
                memo[id(n)] = -a[0]
    return memo[id(e)]


_OPSYM = {"add": "+", "sub": "-", "mul": "*", "div": "/"}

_compiled: "weakref.WeakKeyDictionary[Expr, tuple]" = weakref.WeakKeyDictionary()


def compile_expr(e: Expr) -> tuple[tuple[Expr, ...], object]:
    """Straight-line function of the non-constant leaves, evaluating like ``evaluate``.

    Returns (leaves in post-order, fn); ``fn(leaf_values)`` performs the same
    operations in the same order. Cached per node.
    """
    hit = _compiled.get(e)
    if hit is not None:
        return hit
    names: dict[int, str] = {}
    consts: dict[str, float] = {}
    leaves: list[Expr] = []
    lines: list[str] = []
    for i, n in enumerate(iter_unique([e])):
        v = f"v{i}"
        names[id(n)] = v
        if n.op == "const":
            consts[v] = n.data
        elif n.op in LEAVES:
            leaves.append(n)
            lines.append(f"    {v} = a[{len(leaves) - 1}]")
        elif n.op == "neg":
            lines.append(f"    {v} = -{names[id(n.args[0])]}")
        else:
            a, b = (names[id(c)] for c in n.args)
            lines.append(f"    {v} = {a} {_OPSYM[n.op]} {b}")
    src = "def f(a):\n" + "\n".join(lines + [f"    return {names[id(e)]}"]) + "\n"
    ns = dict(consts)
    exec(compile(src, "<expr>", "exec"), ns)
    out = (tuple(leaves), ns["f"])
    _compiled[e] = out
    return out


def to_text(e: Expr, leaf_text=None) -> str:
    """C-like rendering of the expanded tree."""
    memo: dict[int, str] = {}
    for n in iter_unique([e]):
        op = n.op
        if op == "const":
            s = _fmt_const(n.data)
        elif op in LEAVES:
            s = leaf_text(n) if leaf_text else _leaf_default(n)
        elif op == "neg":
            s = f"-({memo[id(n.args[0])]})" if n.args[0].args else f"-{memo[id(n.args[0])]}"
        else:
            a, b = (memo[id(c)] for c in n.args)
            if n.args[0].args:
                a = f"({a})"
            if n.args[1].args:
                b = f"({b})"
            s = f"{a} {_OPSYM[op]} {b}"
        memo[id(n)] = s
    return memo[id(e)]


def _fmt_const(v: float) -> str:
    r = repr(float(v))
    if "e" in r or "." in r or "n" in r:
        return r
    return r + ".0"


def _leaf_default(n: Expr) -> str:
    if n.op == "field":
        f, slot = n.data
        return f"{f}[{','.join(str(s) for s in slot)}]"
    if n.op == "table":
        t, idx = n.data
        return t + "".join(f"[{i}]" for i in idx)
    return str(n.data)


ZERO = const(0.0)
ONE = const(1.0)

__all__ = [
    "compile_expr",
    "Expr",
    "const",
    "counter",
    "param",
    "field_load",
    "table_load",
    "temp",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "sum_exprs",
    "dot",
    "evaluate",
    "count_ops",
    "iter_unique",
    "to_text",
    "substitute",
]
