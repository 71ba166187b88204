"""Loop skeletons of the sawtooth and cubes traversals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .mesh import BOUND_SHIFT, CUBE_BODY, CUBE_TAIL, SAWTOOTH_ORDER, Orientation


@dataclass(frozen=True)
class Affine:
    """const + cn*n + sum(coef*counter): an integer loop bound."""

    const: int = 0
    cn: int = 0
    terms: tuple[tuple[str, int], ...] = ()

    def eval(self, n: int, env: dict) -> int:
        return self.const + self.cn * n + sum(c * env[v] for v, c in self.terms)

    def eval_arrays(self, n: int, env: dict):
        out = self.const + self.cn * n
        for v, c in self.terms:
            out = out + c * env[v]
        return out

    def text(self) -> str:
        parts = []
        if self.cn:
            parts.append("n" if self.cn == 1 else f"{self.cn}*n")
        for v, c in self.terms:
            if c == 1:
                parts.append(f"+ {v}" if parts else v)
            elif c == -1:
                parts.append(f"- {v}" if parts else f"-{v}")
            else:
                parts.append(f"{'+' if c > 0 else '-'} {abs(c)}*{v}" if parts else f"{c}*{v}")
        if self.const or not parts:
            if parts:
                parts.append(f"{'+' if self.const > 0 else '-'} {abs(self.const)}")
            else:
                parts.append(str(self.const))
        return " ".join(parts)


def row_bound(shift: int, counters: tuple[str, ...]) -> Affine:
    return Affine(-shift, 1, tuple((c, -1) for c in counters))


@dataclass
class LoopSpec:
    counter: str
    lo: Affine
    hi: Affine
    batchable: bool = False
    children: list["NestItem"] = field(default_factory=list)


@dataclass(frozen=True)
class BodySpec:
    """Element body: orientations processed per iteration and the body role."""

    orientations: tuple[Orientation, ...]
    role: str  # "sweep", "complete", "tail5", "tail1"


NestItem = Union[LoopSpec, BodySpec]


@dataclass
class LoopNest:
    strategy: str
    level: int
    roots: list[LoopSpec]
    scopes: list[Orientation | None]  # per root: orientation scope (sawtooth) or None


def build_nest(strategy: str, level: int = 1) -> LoopNest:
    if level < 0:
        raise ValueError("level must be non-negative")
    if strategy == "sawtooth":
        roots, scopes = [], []
        for o in SAWTOOTH_ORDER:
            s = BOUND_SHIFT[o]
            x = LoopSpec("x", Affine(), row_bound(s, ("z", "y")), True, [BodySpec((o,), "sweep")])
            y = LoopSpec("y", Affine(), row_bound(s, ("z",)), False, [x])
            z = LoopSpec("z", Affine(), row_bound(s, ()), False, [y])
            roots.append(z)
            scopes.append(o)
        return LoopNest(strategy, level, roots, scopes)
    if strategy == "cubes":
        r2 = row_bound(2, ("z", "y"))
        r1 = row_bound(1, ("z", "y"))
        r0 = row_bound(0, ("z", "y"))
        xc = LoopSpec("x", Affine(), r2, True, [BodySpec(CUBE_BODY, "complete")])
        x5 = LoopSpec("x", r2, r1, False, [BodySpec(CUBE_TAIL, "tail5")])
        x1 = LoopSpec("x", r1, r0, False, [BodySpec((Orientation.WU,), "tail1")])
        y = LoopSpec("y", Affine(), row_bound(0, ("z",)), False, [xc, x5, x1])
        z = LoopSpec("z", Affine(), row_bound(0, ()), False, [y])
        return LoopNest(strategy, level, [z], [None])
    raise ValueError(f"unknown strategy {strategy!r}")


def loop_range(spec: LoopSpec, n: int, env: dict) -> range:
    return range(max(spec.lo.eval(n, env), 0), spec.hi.eval(n, env))


def iterate_nest(nest: LoopNest, level: int | None = None) -> Iterator[tuple[BodySpec, tuple[int, int, int]]]:
    """Executed bodies with their anchors in program order."""
    n = 2 ** (nest.level if level is None else level)

    def walk(item: NestItem, env: dict):
        if isinstance(item, BodySpec):
            yield item, (env["x"], env["y"], env["z"])
            return
        for v in loop_range(item, n, env):
            env2 = dict(env)
            env2[item.counter] = v
            for c in item.children:
                yield from walk(c, env2)

    for root in nest.roots:
        yield from walk(root, {})


def flatten(nest: LoopNest, level: int | None = None) -> list[tuple[Orientation, int, int, int]]:
    out = []
    for body, (x, y, z) in iterate_nest(nest, level):
        for o in body.orientations:
            out.append((o, x, y, z))
    return out


def body_counts(nest: LoopNest, level: int | None = None) -> dict[str, int]:
    out: dict[str, int] = {}
    for body, _ in iterate_nest(nest, level):
        out[body.role] = out.get(body.role, 0) + 1
    return out


def complete_cube_count(level: int) -> int:
    n = 2**level
    return sum(max(n - z - y - 2, 0) for z in range(n) for y in range(n - z))
