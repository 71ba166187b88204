"""Reference bases, macro-local DoF layout, global DoF identification and interpolation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable

import numpy as np

from .mesh import (
    OFFSETS,
    MacroMesh,
    MicroElement,
    Orientation,
    micro_vertices,
    pack,
    tet_number,
)
from .quadrature import QuadratureRule, quadrature


class FunctionSpace(Enum):
    P1 = "P1"
    P2 = "P2"
    ND1 = "ND1"

    @property
    def n_local(self) -> int:
        return {"P1": 4, "P2": 10, "ND1": 6}[self.value]

    @property
    def arity(self) -> int:
        return 3 if self is FunctionSpace.ND1 else 1

    @property
    def degree(self) -> int:
        return {"P1": 1, "P2": 2, "ND1": 1}[self.value]


P1, P2, ND1 = FunctionSpace.P1, FunctionSpace.P2, FunctionSpace.ND1

LOCAL_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))

_GRAD_LAMBDA = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])

# ---------------------------------------------------------------- reference bases


def barycentric(xhat) -> np.ndarray:
    p = np.atleast_2d(np.asarray(xhat, dtype=float))
    return np.column_stack([1.0 - p.sum(axis=1), p])


def grad_lambda() -> np.ndarray:
    return _GRAD_LAMBDA.copy()


def tabulate(space: FunctionSpace, pts) -> np.ndarray:
    """Basis values at points: (np, n_local) or (np, n_local, 3) for ND1."""
    lam = barycentric(pts)
    g = _GRAD_LAMBDA
    if space is P1:
        return lam
    if space is P2:
        vert = lam * (2.0 * lam - 1.0)
        edge = np.stack([4.0 * lam[:, a] * lam[:, b] for a, b in LOCAL_EDGES], axis=1)
        return np.concatenate([vert, edge], axis=1)
    return np.stack(
        [lam[:, a, None] * g[b] - lam[:, b, None] * g[a] for a, b in LOCAL_EDGES], axis=1
    )


def tabulate_grad(space: FunctionSpace, pts) -> np.ndarray:
    """Reference gradients (np, n_local, 3) of the scalar spaces."""
    lam = barycentric(pts)
    g = _GRAD_LAMBDA
    if space is P1:
        return np.broadcast_to(g, (len(lam), 4, 3)).copy()
    if space is P2:
        vert = (4.0 * lam - 1.0)[:, :, None] * g[None]
        edge = np.stack(
            [4.0 * (lam[:, a, None] * g[b] + lam[:, b, None] * g[a]) for a, b in LOCAL_EDGES],
            axis=1,
        )
        return np.concatenate([vert, edge], axis=1)
    raise ValueError("gradient requested for ND1; use tabulate_curl")


def reference_curls() -> np.ndarray:
    """Constant reference curls (6, 3) of the ND1 basis."""
    g = _GRAD_LAMBDA
    return np.array([2.0 * np.cross(g[a], g[b]) for a, b in LOCAL_EDGES])


def tabulate_curl(space: FunctionSpace, pts) -> np.ndarray:
    if space is not ND1:
        raise ValueError("curl is only defined for ND1")
    n = len(np.atleast_2d(pts))
    return np.broadcast_to(reference_curls(), (n, 6, 3)).copy()


def _check_index(space, i):
    if not 0 <= i < space.n_local:
        raise IndexError(f"local index {i} out of range for {space.value}")


def eval_basis(space: FunctionSpace, i: int, xhat):
    _check_index(space, i)
    return tabulate(space, xhat)[0, i]


def eval_grad(space: FunctionSpace, i: int, xhat) -> np.ndarray:
    _check_index(space, i)
    return tabulate_grad(space, xhat)[0, i]


def eval_curl(space: FunctionSpace, i: int, xhat) -> np.ndarray:
    _check_index(space, i)
    return tabulate_curl(space, xhat)[0, i]


# ---------------------------------------------------------------- macro-local layout

E0, E1, E2, E3 = (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)
E12 = (1, 1, 0)

# lattice edge types as (start offset, end offset); the last one is the
# interior diagonal of the unit cube that the octahedron split introduces
EDGE_TYPES = ((E0, E1), (E0, E2), (E0, E3), (E1, E2), (E1, E3), (E2, E3), (E3, E12))
EDGE_TYPE_SHIFT = (1, 1, 1, 1, 1, 1, 2)


@dataclass(frozen=True)
class Block:
    kind: str  # "V" or "E"
    etype: int  # edge type, -1 for vertices
    shift: int  # anchors satisfy |p| <= n - shift

    def size(self, n: int) -> int:
        return tet_number(n - self.shift)


VERTEX_BLOCK = Block("V", -1, 0)
EDGE_BLOCKS = tuple(Block("E", t, EDGE_TYPE_SHIFT[t]) for t in range(7))


def space_blocks(space: FunctionSpace) -> tuple[Block, ...]:
    if space is P1:
        return (VERTEX_BLOCK,)
    if space is P2:
        return (VERTEX_BLOCK,) + EDGE_BLOCKS
    return EDGE_BLOCKS


def block_offsets(space: FunctionSpace, n: int) -> list[int]:
    offs, acc = [], 0
    for b in space_blocks(space):
        offs.append(acc)
        acc += b.size(n)
    return offs


def local_size(space: FunctionSpace, n: int) -> int:
    return sum(b.size(n) for b in space_blocks(space))


def _classify_edge(pa, pb):
    """(edge type, anchor, sign) with sign +1 when pa->pb follows the type direction."""
    d = tuple(b - a for a, b in zip(pa, pb))
    for t, (s, e) in enumerate(EDGE_TYPES):
        td = tuple(q - p for p, q in zip(s, e))
        if d == td:
            return t, tuple(a - o for a, o in zip(pa, s)), 1
        if tuple(-c for c in d) == td:
            return t, tuple(b - o for b, o in zip(pb, s)), -1
    raise ValueError(f"not a lattice edge: {pa} {pb}")


@dataclass(frozen=True)
class Slot:
    """Local DoF of an element: block index and anchor offset relative to the element anchor."""

    block: int
    dx: int
    dy: int
    dz: int

    @property
    def offset(self) -> tuple[int, int, int]:
        return (self.dx, self.dy, self.dz)


@lru_cache(maxsize=None)
def element_slots(space: FunctionSpace, o: Orientation) -> tuple[tuple[Slot, ...], tuple[int, ...]]:
    """Slots of the local DoFs of orientation ``o`` and the local-vs-type edge signs."""
    offs = OFFSETS[Orientation(o)]
    blocks = space_blocks(space)
    slots, signs = [], []
    if space in (P1, P2):
        vb = blocks.index(VERTEX_BLOCK)
        for p in offs:
            slots.append(Slot(vb, *p))
            signs.append(1)
    if space in (P2, ND1):
        for a, b in LOCAL_EDGES:
            t, anchor, s = _classify_edge(offs[a], offs[b])
            slots.append(Slot(blocks.index(EDGE_BLOCKS[t]), *anchor))
            signs.append(s)
    return tuple(slots), tuple(signs)


# ---------------------------------------------------------------- DoF keys


@dataclass(frozen=True, order=False)
class VertexKey:
    """Sorted (macro vertex id, weight) pairs, weights summing to 2^level."""

    pairs: tuple[tuple[int, int], ...]

    def weight(self, vid: int) -> int:
        for v, w in self.pairs:
            if v == vid:
                return w
        return 0

    def precedes(self, other: "VertexKey") -> bool:
        """Dense lexicographic order over global vertex ids (missing id = weight 0)."""
        vids = sorted({v for v, _ in self.pairs} | {v for v, _ in other.pairs})
        for v in vids:
            a, b = self.weight(v), other.weight(v)
            if a != b:
                return a < b
        return False


@dataclass(frozen=True)
class EdgeKey:
    start: VertexKey
    end: VertexKey


def vertex_key(mesh: MacroMesh, macro: int, level: int, p) -> VertexKey:
    n = 2**level
    x, y, z = p
    w = (n - x - y - z, x, y, z)
    vids = mesh.tets[macro]
    return VertexKey(tuple(sorted((int(v), int(c)) for v, c in zip(vids, w) if c)))


def edge_key(a: VertexKey, b: VertexKey) -> EdgeKey:
    return EdgeKey(b, a) if b.precedes(a) else EdgeKey(a, b)


def dof_keys(space: FunctionSpace, e: MicroElement, mesh: MacroMesh):
    """Local DoF keys of an element; ND1 also returns the per-edge signs."""
    pts = micro_vertices(e)
    vk = [vertex_key(mesh, e.macro, e.level, p) for p in pts]
    keys: list = []
    signs: list[int] = []
    if space in (P1, P2):
        keys.extend(vk)
    if space in (P2, ND1):
        for a, b in LOCAL_EDGES:
            k = edge_key(vk[a], vk[b])
            keys.append(k)
            signs.append(1 if k.start == vk[a] else -1)
    if space is ND1:
        return keys, signs
    return keys


def macro_type_signs(mesh: MacroMesh, macro: int) -> np.ndarray:
    """Global-vs-type direction sign for each of the 7 edge types of a macro."""
    vids = mesh.tets[macro]
    order = np.argsort(vids, kind="stable")
    out = np.empty(7, dtype=np.int64)
    for t, (s, e) in enumerate(EDGE_TYPES):
        d = np.array(e) - np.array(s)
        delta = np.array([-d.sum(), d[0], d[1], d[2]])
        first = next(delta[i] for i in order if delta[i] != 0)
        out[t] = 1 if first > 0 else -1
    return out


# ---------------------------------------------------------------- indexer


def _block_entities(block: Block, n: int) -> np.ndarray:
    """Lattice points of the entities of a block: (E, k, 3), k = 1 or 2 (start, end)."""
    m = n - block.shift
    anchors = _anchor_grid(m)
    if block.kind == "V":
        return anchors[:, None, :]
    s, e = EDGE_TYPES[block.etype]
    return np.stack([anchors + np.array(s), anchors + np.array(e)], axis=1)


def _anchor_grid(m: int) -> np.ndarray:
    """All p >= 0 with |p| <= m in packed (z, y, x) order."""
    if m < 0:
        return np.zeros((0, 3), dtype=np.int64)
    z, y, x = [], [], []
    for zz in range(m + 1):
        for yy in range(m - zz + 1):
            cnt = m - zz - yy + 1
            x.append(np.arange(cnt))
            y.append(np.full(cnt, yy))
            z.append(np.full(cnt, zz))
    return np.stack([np.concatenate(x), np.concatenate(y), np.concatenate(z)], axis=1).astype(np.int64)


@dataclass
class DoFIndexer:
    """Global numbering of one space on a refined macro mesh.

    DoFs are numbered macro by macro in macro-local block order; an entity
    shared between macros keeps the number given by its first macro.
    """

    space: FunctionSpace
    mesh: MacroMesh
    level: int
    l2g: np.ndarray = field(init=False, repr=False)  # (n_macros, local_size)
    n_dofs: int = field(init=False)
    type_signs: np.ndarray = field(init=False, repr=False)  # (n_macros, 7)

    def __post_init__(self):
        n = 2**self.level
        mesh = self.mesh
        nm = mesh.n_macros
        size = local_size(self.space, n)
        self.type_signs = np.array([macro_type_signs(mesh, t) for t in range(nm)]).reshape(nm, 7)
        # rows of canonical keys for entities on macro faces
        key_rows, key_pos = [], []
        for t in range(nm):
            off = 0
            vids = mesh.tets[t]
            for bi, b in enumerate(space_blocks(self.space)):
                ent = _block_entities(b, n)
                w = _weights(ent, n)  # (E, k, 4)
                on_face = (w == 0).all(axis=1).any(axis=1)
                idx = np.nonzero(on_face)[0]
                if len(idx):
                    rows = _key_rows(w[idx], vids, b)
                    key_rows.append(rows)
                    key_pos.append(np.column_stack([np.full(len(idx), t), off + idx]))
                off += len(ent)
        new = np.ones((nm, size), dtype=bool)
        alias = np.full((nm, size), -1, dtype=np.int64)
        if key_rows:
            rows = np.concatenate(key_rows)
            pos = np.concatenate(key_pos)
            _, first, inv = np.unique(rows, axis=0, return_index=True, return_inverse=True)
            inv = inv.reshape(-1)
            owner = first[inv]
            dup = owner != np.arange(len(rows))
            new[pos[dup, 0], pos[dup, 1]] = False
            flat_owner = pos[owner, 0] * size + pos[owner, 1]
            alias[pos[dup, 0], pos[dup, 1]] = flat_owner[dup]
        ids = np.cumsum(new.reshape(-1)) - 1
        l2g = np.where(new.reshape(-1), ids, 0)
        aflat = alias.reshape(-1)
        m = aflat >= 0
        l2g[m] = l2g[aflat[m]]
        self.l2g = l2g.reshape(nm, size)
        self.n_dofs = int(new.sum())

    @property
    def n(self) -> int:
        return 2**self.level

    def element_dofs(self, macro: int, o: Orientation, anchors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Global DoF ids (E, n_local) and ND1 signs (n_local,) for elements of one orientation."""
        n = self.n
        slots, lsigns = element_slots(self.space, o)
        offs = block_offsets(self.space, n)
        blocks = space_blocks(self.space)
        cols = []
        for s in slots:
            b = blocks[s.block]
            p = anchors + np.array(s.offset)
            cols.append(offs[s.block] + pack(p[:, 0], p[:, 1], p[:, 2], n - b.shift))
        local = np.stack(cols, axis=1) if cols else np.zeros((len(anchors), 0), dtype=np.int64)
        return self.l2g[macro][local], self.element_signs(macro, o)

    def element_signs(self, macro: int, o: Orientation) -> np.ndarray:
        slots, lsigns = element_slots(self.space, o)
        if self.space is not ND1:
            return np.ones(len(slots), dtype=np.int64)
        blocks = space_blocks(self.space)
        return np.array(
            [ls * self.type_signs[macro, blocks[s.block].etype] for s, ls in zip(slots, lsigns)],
            dtype=np.int64,
        )

    def dof_geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """World points per global DoF (N, k, 3) in global direction, and Dirichlet flags."""
        n = self.n
        mesh = self.mesh
        blocks = space_blocks(self.space)
        k = 1 if self.space is P1 else 2
        pts = np.zeros((self.n_dofs, k, 3))
        bnd = np.zeros(self.n_dofs, dtype=bool)
        for t in range(mesh.n_macros):
            off = 0
            bfaces = np.array([mesh.is_boundary_face(t, f) for f in range(4)])
            for b in blocks:
                ent = _block_entities(b, n)
                gid = self.l2g[t, off : off + len(ent)]
                off += len(ent)
                w = _weights(ent, n)
                onb = ((w == 0).all(axis=1) & bfaces[None, :]).any(axis=1)
                bnd[gid[onb]] = True
                world = mesh.lattice_to_world(t, self.level, ent.reshape(-1, 3)).reshape(ent.shape)
                if b.kind == "E" and self.space is ND1:
                    if self.type_signs[t, b.etype] < 0:
                        world = world[:, ::-1]
                if b.kind == "V" and k == 2:
                    world = np.repeat(world, 2, axis=1)
                pts[gid] = world
        return pts, bnd


def _weights(ent: np.ndarray, n: int) -> np.ndarray:
    s = ent.sum(axis=2)
    return np.concatenate([(n - s)[..., None], ent], axis=2)


def _key_rows(w: np.ndarray, vids: np.ndarray, b: Block) -> np.ndarray:
    """Canonical integer rows identifying entities across macros."""
    big = np.iinfo(np.int64).max
    e, k, _ = w.shape
    v = np.broadcast_to(vids, w.shape).astype(np.int64)
    v = np.where(w == 0, big, v)
    order = np.argsort(v, axis=2, kind="stable")
    v = np.take_along_axis(v, order, axis=2)
    ws = np.take_along_axis(w, order, axis=2)
    pts = np.concatenate([v, ws], axis=2)  # (E, k, 8)
    if k == 2:
        a, c = pts[:, 0], pts[:, 1]
        swap = _row_less(c, a)
        lo = np.where(swap[:, None], c, a)
        hi = np.where(swap[:, None], a, c)
        rows = np.concatenate([lo, hi], axis=1)
        tag = 1
    else:
        rows = np.concatenate([pts[:, 0], np.full((e, 8), -1)], axis=1)
        tag = 0
    return np.column_stack([np.full(e, tag), rows])


def _row_less(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a != b
    first = np.argmax(diff, axis=1)
    r = np.arange(len(a))
    return diff.any(axis=1) & (a[r, first] < b[r, first])


def num_dofs(space: FunctionSpace, mesh: MacroMesh, level: int) -> int:
    return DoFIndexer(space, mesh, level).n_dofs


@dataclass
class FieldVector:
    values: np.ndarray
    space: FunctionSpace
    level: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)


def interpolate(space: FunctionSpace, f: Callable, mesh: MacroMesh, level: int,
                indexer: DoFIndexer | None = None) -> FieldVector:
    """Nodal interpolation (P1/P2) or 2-point Gauss edge moments (ND1).

    ``f`` takes an (m, 3) array of world points and returns (m,) or (m, 3).
    """
    idx = indexer or DoFIndexer(space, mesh, level)
    pts, _ = idx.dof_geometry()
    if space is P1:
        vals = np.asarray(f(pts[:, 0]), dtype=float)
    elif space is P2:
        vals = np.asarray(f(0.5 * (pts[:, 0] + pts[:, 1])), dtype=float)
    else:
        a, b = pts[:, 0], pts[:, 1]
        t = b - a
        g = 0.5 / np.sqrt(3.0)
        vals = np.zeros(len(a))
        for s in (0.5 - g, 0.5 + g):
            fx = np.asarray(f(a + s * t), dtype=float).reshape(-1, 3)
            vals += 0.5 * np.einsum("ij,ij->i", fx, t)
    return FieldVector(np.broadcast_to(vals, (idx.n_dofs,)).copy(), space, level)


__all__ = [
    "FunctionSpace",
    "P1",
    "P2",
    "ND1",
    "QuadratureRule",
    "quadrature",
    "DoFIndexer",
    "FieldVector",
    "num_dofs",
    "interpolate",
    "dof_keys",
    "eval_basis",
    "eval_grad",
    "eval_curl",
]
