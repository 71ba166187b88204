"""Statements, tables, optimization flags and the kernel container."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

import numpy as np

from ..loops import Affine
from .expr import Expr

# ---------------------------------------------------------------- statements


@dataclass
class TempAssign:
    name: str
    expr: Expr
    tag: int | None = None


@dataclass
class TempAccumulate:
    name: str
    expr: Expr
    tag: int | None = None


@dataclass
class FieldAccumulate:
    field: str
    slot: tuple
    expr: Expr
    tag: int | None = None


@dataclass
class TableStore:
    table: str
    index: tuple
    expr: Expr
    tag: int | None = None


@dataclass
class TableDecl:
    table: "Table"


@dataclass
class Loop:
    counter: str
    lo: Affine | int
    hi: Affine | int
    body: list
    batchable: bool = False
    role: str = "element"  # "element" or "quad"
    vector_width: int = 0


@dataclass
class BatchBlock:
    width: int
    body: list


@dataclass
class Scope:
    orientation: int
    body: list


Stmt = Union[TempAssign, TempAccumulate, FieldAccumulate, TableStore, TableDecl, Loop, BatchBlock, Scope]

EXPR_STMTS = (TempAssign, TempAccumulate, FieldAccumulate, TableStore)
BLOCK_STMTS = (Loop, BatchBlock, Scope)


def children(s) -> list:
    return s.body if isinstance(s, BLOCK_STMTS) else []


def walk(body: list) -> Iterator:
    for s in body:
        yield s
        if isinstance(s, BLOCK_STMTS):
            yield from walk(s.body)


def copy_body(body: list) -> list:
    out = []
    for s in body:
        if isinstance(s, Loop):
            out.append(replace(s, body=copy_body(s.body)))
        elif isinstance(s, BatchBlock):
            out.append(replace(s, body=copy_body(s.body)))
        elif isinstance(s, Scope):
            out.append(replace(s, body=copy_body(s.body)))
        else:
            out.append(replace(s))
    return out


# ---------------------------------------------------------------- tables


@dataclass
class Table:
    """Named table. ``kind`` is "quad" (static quadrature data) or "tab" (tabulated factors).

    Static tables carry ``values``; tabulated tables are filled by TableStore
    statements, ``stored`` lists the indices actually stored.
    """

    name: str
    dims: tuple[int, ...]
    kind: str
    values: np.ndarray | None = None
    stored: int = 0

    @property
    def size(self) -> int:
        if self.values is not None:
            return int(self.values.size)
        return self.stored

    @property
    def nbytes(self) -> int:
        return 8 * self.size


# ---------------------------------------------------------------- optimization flags

OPT_LETTERS = ("S", "V", "I", "C", "U", "fQ", "T", "P")


class OptionError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizationSet:
    S: bool = False
    V: bool = False
    I: bool = False
    C: bool = False
    U: bool = False
    fQ: bool = False
    T: bool = False
    P: bool = False
    width: int = 4

    @classmethod
    def parse(cls, text: str | None, width: int = 4) -> "OptimizationSet":
        text = (text or "").strip()
        if text in ("", "-", "none", "∅"):
            return cls(width=width)
        m = re.fullmatch(r"(.*?)(?:\(W=(\d+)\))?", text)
        body, w = m.group(1), m.group(2)
        if w:
            width = int(w)
        flags: dict[str, bool] = {}
        i = 0
        while i < len(body):
            tok = body[i : i + 2] if body.startswith("fQ", i) else body[i]
            if tok not in OPT_LETTERS:
                raise OptionError(
                    f"unknown optimization {tok!r} in {text!r}; valid abbreviations: "
                    + ", ".join(OPT_LETTERS)
                )
            if tok in flags:
                raise OptionError(f"optimization {tok!r} given twice in {text!r}")
            flags[tok] = True
            i += len(tok)
        if width < 2:
            raise OptionError("vector width must be >= 2")
        return cls(width=width, **flags)

    def validate(self, form) -> None:
        if self.P and self.T:
            raise OptionError("P (precomputed matrices) cannot be combined with T (tabulation)")
        if self.U and form.under_integrated_degree is None:
            raise OptionError(f"U (under-integration) is not available for {form.short}")
        if self.S and not form.symmetric:
            raise OptionError(f"S requires a symmetric form; {form.short} is not")

    @property
    def strategy(self) -> str:
        return "cubes" if self.C else "sawtooth"

    def text(self) -> str:
        return "".join(k for k in OPT_LETTERS if getattr(self, k))

    def __str__(self) -> str:
        return self.text() or "none"


# ---------------------------------------------------------------- kernel


@dataclass(frozen=True)
class FieldInfo:
    name: str
    role: str  # "in", "out", "coef", "matrix"
    space: object  # FunctionSpace, or None for element-matrix storage


@dataclass
class Kernel:
    name: str
    form: object
    strategy: str
    rule: object
    quad_mode: str  # "loop", "fused", "unrolled"
    symmetric: bool
    tabulated: bool
    precompute: str | None  # None, "setup", "apply"
    body: list
    fields: dict[str, FieldInfo]
    tables: dict[str, Table]
    params: list[str]
    entries_computed: int
    passes: tuple = ()
    opts: OptimizationSet = field(default_factory=OptimizationSet)

    @property
    def output_field(self) -> str:
        return next(f.name for f in self.fields.values() if f.role in ("out", "matrix") and
                    (self.precompute == "setup") == (f.role == "matrix"))

    def clone(self, **changes) -> "Kernel":
        k = replace(self, **changes)
        if "body" not in changes:
            k.body = copy_body(self.body)
        if "tables" not in changes:
            k.tables = dict(self.tables)
        return k
