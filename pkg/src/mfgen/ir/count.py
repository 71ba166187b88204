"""FLOP and statement accounting over kernels."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..loops import Affine
from ..mesh import Orientation
from .expr import count_geometry_muls
from .kernel import (
    BLOCK_STMTS,
    EXPR_STMTS,
    BatchBlock,
    FieldAccumulate,
    Kernel,
    Loop,
    Scope,
    TableDecl,
    TempAccumulate,
    walk,
)


def stmt_ops(s) -> int:
    """FLOPs of one expression statement; accumulation adds one addition."""
    return s.expr.nops + (1 if isinstance(s, (TempAccumulate, FieldAccumulate)) else 0)


@dataclass
class FlopCount:
    per_orientation: dict[str, int]  # steady-state FLOPs of one element body, by orientation
    total: int  # executed FLOPs of one operator application
    elements: int
    batched_ops: int = 0  # batch operations in vectorized regions (each covers W lanes)
    batched_flops: int = 0  # scalar-equivalent FLOPs executed in batch blocks
    scalar_flops: int = 0  # FLOPs executed outside batch blocks
    geometry_muls: int = 0  # multiplications involving geometry parameters in element bodies
    by_tag: dict[str, int] = field(default_factory=dict)  # static FLOPs by tag, element loops once

    @property
    def per_element(self) -> float:
        """Mean steady-state element-body FLOPs over the six orientations."""
        if not self.per_orientation:
            return 0.0
        return sum(self.per_orientation.values()) / len(self.per_orientation)

    @property
    def amortized_per_element(self) -> float:
        return self.total / self.elements if self.elements else 0.0


def _static_ops(body: list) -> int:
    total = 0
    for s in body:
        if isinstance(s, EXPR_STMTS):
            total += stmt_ops(s)
        elif isinstance(s, Loop):
            if s.role != "quad":
                raise ValueError("static count requires an innermost element body")
            total += (int(s.hi) - int(s.lo)) * _static_ops(s.body)
        elif isinstance(s, (Scope, BatchBlock)):
            total += _static_ops(s.body)
    return total


def _tag_ops(body: list, out: dict[int, int], mult: int = 1) -> None:
    for s in body:
        if isinstance(s, EXPR_STMTS):
            t = -1 if s.tag is None else s.tag
            out[t] = out.get(t, 0) + mult * stmt_ops(s)
        elif isinstance(s, Loop):
            trips = int(s.hi) - int(s.lo) if s.role == "quad" else 1
            _tag_ops(s.body, out, mult * trips)
        elif isinstance(s, (Scope, BatchBlock)):
            _tag_ops(s.body, out, mult)


def _geo_muls(body: list, mult: int = 1) -> int:
    total = 0
    for s in body:
        if isinstance(s, EXPR_STMTS):
            total += mult * count_geometry_muls(s.expr)
        elif isinstance(s, Loop):
            trips = int(s.hi) - int(s.lo) if s.role == "quad" else 1
            total += _geo_muls(s.body, mult * trips)
        elif isinstance(s, (Scope, BatchBlock)):
            total += _geo_muls(s.body, mult)
    return total


def _has_element_loop(body: list) -> bool:
    return any(isinstance(s, Loop) and s.role == "element" for s in walk(body))


def innermost_element_loops(body: list) -> list[Loop]:
    out = []
    for s in walk(body):
        if isinstance(s, Loop) and s.role == "element" and not _has_element_loop(s.body):
            out.append(s)
    return out


def _bound(b, n: int, env: dict) -> int:
    return b.eval(n, env) if isinstance(b, Affine) else int(b)


def count_flops(k: Kernel, level: int, n_macros: int = 1) -> FlopCount:
    """Executed FLOPs over ``n_macros`` macros at refinement ``level``."""
    n = 2**level
    acc = {"total": 0, "batched_ops": 0, "batched": 0, "scalar": 0}

    def run(body: list, env: dict, mult: int) -> None:
        for s in body:
            if isinstance(s, EXPR_STMTS):
                acc["total"] += mult * stmt_ops(s)
                acc["scalar"] += mult * stmt_ops(s)
            elif isinstance(s, (Scope, BatchBlock)):
                run(s.body, env, mult)
            elif isinstance(s, Loop) and s.role == "quad":
                run(s.body, env, mult * (int(s.hi) - int(s.lo)))
            elif isinstance(s, Loop):
                lo = max(_bound(s.lo, n, env), 0)
                hi = _bound(s.hi, n, env)
                trips = max(hi - lo, 0)
                if not trips:
                    continue
                if _has_element_loop(s.body):
                    for v in range(lo, hi):
                        run(s.body, {**env, s.counter: v}, mult)
                    continue
                per = _static_ops(s.body)
                acc["total"] += mult * per * trips
                if s.vector_width:
                    w = s.vector_width
                    acc["batched_ops"] += mult * per * (trips // w)
                    acc["batched"] += mult * per * (trips // w) * w
                    acc["scalar"] += mult * per * (trips % w)
                else:
                    acc["scalar"] += mult * per * trips

    run(k.body, {}, 1)

    per_orientation: dict[str, int] = {}
    geo = 0
    for loop in innermost_element_loops(k.body):
        tags: dict[int, int] = {}
        _tag_ops(loop.body, tags)
        for t, v in tags.items():
            if t < 0:
                continue
            name = Orientation(t).name
            if name not in per_orientation:
                per_orientation[name] = v
        geo = max(geo, _geo_muls(loop.body))
    by_tag: dict[int, int] = {}
    _tag_ops(k.body, by_tag)
    return FlopCount(
        per_orientation={o.name: per_orientation[o.name] for o in Orientation if o.name in per_orientation},
        total=acc["total"] * n_macros,
        elements=(8**level) * n_macros,
        batched_ops=acc["batched_ops"] * n_macros,
        batched_flops=acc["batched"] * n_macros,
        scalar_flops=acc["scalar"] * n_macros,
        geometry_muls=geo,
        by_tag={("none" if t < 0 else Orientation(t).name): v for t, v in sorted(by_tag.items())},
    )


def count_statements(k: Kernel) -> int:
    """Structural three-address statement count of the emitted kernel.

    Each arithmetic operation is one statement (at least one per assignment),
    each loop header one; a vectorized loop body is emitted twice (batch and
    remainder).
    """

    def block(body: list) -> int:
        total = 0
        for s in body:
            if isinstance(s, EXPR_STMTS):
                total += max(1, stmt_ops(s))
            elif isinstance(s, TableDecl):
                total += 1
            elif isinstance(s, Loop):
                inner = block(s.body)
                total += 1 + inner
                if s.vector_width:
                    total += 1 + inner
            elif isinstance(s, BatchBlock):
                total += 1 + block(s.body)
            elif isinstance(s, Scope):
                total += block(s.body)
        return total

    return block(k.body)


def table_bytes(k: Kernel) -> int:
    return sum(t.nbytes for t in k.tables.values())
