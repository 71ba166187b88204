"""Macro meshes, micro-element orientations, lattice indexing and traversals."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class Orientation(IntEnum):
    WU = 0
    WD = 1
    BU = 2
    BD = 3
    GU = 4
    GD = 5


E0 = (0, 0, 0)
E1 = (1, 0, 0)
E2 = (0, 1, 0)
E3 = (0, 0, 1)
E12 = (1, 1, 0)
E13 = (1, 0, 1)
E23 = (0, 1, 1)
E123 = (1, 1, 1)

# lattice offsets of the four micro vertices relative to the anchor,
# in local vertex order
OFFSETS: dict[Orientation, tuple[tuple[int, int, int], ...]] = {
    Orientation.WU: (E0, E1, E2, E3),
    Orientation.BU: (E1, E2, E3, E12),
    Orientation.GU: (E1, E3, E12, E13),
    Orientation.BD: (E2, E3, E12, E23),
    Orientation.GD: (E3, E12, E23, E13),
    Orientation.WD: (E12, E23, E13, E123),
}

# how far the anchor must stay away from the far lattice face
BOUND_SHIFT = {
    Orientation.WU: 0,
    Orientation.BU: 1,
    Orientation.BD: 1,
    Orientation.GU: 1,
    Orientation.GD: 1,
    Orientation.WD: 2,
}

SAWTOOTH_ORDER = (
    Orientation.WU,
    Orientation.WD,
    Orientation.BU,
    Orientation.BD,
    Orientation.GU,
    Orientation.GD,
)
CUBE_BODY = SAWTOOTH_ORDER
CUBE_TAIL = (Orientation.WU, Orientation.GU, Orientation.GD, Orientation.BU, Orientation.BD)

STRATEGIES = ("sawtooth", "cubes")


def offset_matrix(o: Orientation) -> np.ndarray:
    """Columns are the edge vectors p1-p0, p2-p0, p3-p0 of the offset tet."""
    p = np.array(OFFSETS[o], dtype=float)
    return (p[1:] - p[0]).T


def orientation_sign(o: Orientation) -> int:
    return int(round(np.sign(np.linalg.det(offset_matrix(o)))))


def loop_bound(o: Orientation, n: int) -> int:
    if n < 0:
        raise ValueError("n must be non-negative")
    return max(n - BOUND_SHIFT[Orientation(o)], 0)


def tet_number(k: int) -> int:
    """Number of lattice points p >= 0 with |p| <= k."""
    if k < 0:
        return 0
    return (k + 1) * (k + 2) * (k + 3) // 6


def pack(x, y, z, m):
    """Packed index of lattice point (x, y, z), |p| <= m, in z-y-x order.

    Works elementwise on integer numpy arrays.
    """
    s = m - z
    before_z = tet_number_arr(m) - tet_number_arr(m - z)
    before_y = y * (s + 1) - (y * (y - 1)) // 2
    return before_z + before_y + x


def tet_number_arr(k):
    k = np.asarray(k)
    out = (k + 1) * (k + 2) * (k + 3) // 6
    return np.where(k < 0, 0, out)


@dataclass(frozen=True)
class MicroElement:
    orientation: Orientation
    x: int
    y: int
    z: int
    level: int
    macro: int = 0

    @property
    def anchor(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.z)


def micro_vertices(e: MicroElement) -> list[tuple[int, int, int]]:
    n = 2**e.level
    pts = [(e.x + dx, e.y + dy, e.z + dz) for dx, dy, dz in OFFSETS[e.orientation]]
    for p in pts:
        if min(p) < 0 or sum(p) > n:
            raise ValueError(f"element {e} leaves the macro lattice")
    return pts


def _lattice_anchors(m: int) -> np.ndarray:
    """All (x, y, z) with |p| <= m-1 in z-y-x loop order (half-open bounds)."""
    rows = []
    for z in range(m):
        for y in range(m - z):
            xs = np.arange(m - z - y)
            rows.append(np.stack([xs, np.full_like(xs, y), np.full_like(xs, z)], axis=1))
    if not rows:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(rows).astype(np.int64)


def traversal_arrays(strategy: str, level: int) -> tuple[np.ndarray, np.ndarray]:
    """Traversal of one macro as (orientations, anchors) arrays."""
    n = 2**level
    if strategy == "sawtooth":
        orients, anchors = [], []
        for o in SAWTOOTH_ORDER:
            a = _lattice_anchors(loop_bound(o, n))
            anchors.append(a)
            orients.append(np.full(len(a), int(o), dtype=np.int64))
        return np.concatenate(orients), np.concatenate(anchors)
    if strategy == "cubes":
        orients, anchors = [], []
        for z in range(n):
            for y in range(n - z):
                r = n - z - y
                for x in range(max(r - 2, 0)):
                    for o in CUBE_BODY:
                        orients.append(int(o))
                        anchors.append((x, y, z))
                if r >= 2:
                    for o in CUBE_TAIL:
                        orients.append(int(o))
                        anchors.append((r - 2, y, z))
                orients.append(int(Orientation.WU))
                anchors.append((r - 1, y, z))
        return np.array(orients, dtype=np.int64), np.array(anchors, dtype=np.int64).reshape(-1, 3)
    raise ValueError(f"unknown strategy {strategy!r}")


def enumerate_elements(strategy: str, macro: int, level: int) -> list[MicroElement]:
    """Micro elements of one macro in traversal order."""
    orients, anchors = traversal_arrays(strategy, level)
    return [
        MicroElement(Orientation(int(o)), int(a[0]), int(a[1]), int(a[2]), level, macro)
        for o, a in zip(orients, anchors)
    ]


@dataclass
class MacroMesh:
    vertices: np.ndarray
    tets: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.tets = np.asarray(self.tets, dtype=np.int64).reshape(-1, 4)
        if self.tets.size and (self.tets.min() < 0 or self.tets.max() >= len(self.vertices)):
            raise ValueError("tet vertex id out of range")
        for t in range(len(self.tets)):
            if np.linalg.det(self.macro_jacobian(t)) <= 0:
                raise ValueError(f"macro {t} has non-positive volume")
        faces: dict[tuple[int, ...], int] = {}
        for t in self.tets:
            for f in range(4):
                key = tuple(sorted(np.delete(t, f)))
                faces[key] = faces.get(key, 0) + 1
        if any(c > 2 for c in faces.values()):
            raise ValueError("non-conforming mesh: face shared by more than two tets")
        self._face_count = faces

    @property
    def n_macros(self) -> int:
        return len(self.tets)

    def macro_coords(self, t: int) -> np.ndarray:
        return self.vertices[self.tets[t]]

    def macro_jacobian(self, t: int) -> np.ndarray:
        c = self.macro_coords(t)
        return (c[1:] - c[0]).T

    def macro_volume(self, t: int) -> float:
        return float(np.linalg.det(self.macro_jacobian(t))) / 6.0

    def is_boundary_face(self, t: int, f: int) -> bool:
        """Face opposite local vertex f of macro t lies on the domain boundary."""
        key = tuple(sorted(np.delete(self.tets[t], f)))
        return self._face_count[key] == 1

    def lattice_to_world(self, t: int, level: int, pts: np.ndarray) -> np.ndarray:
        c = self.macro_coords(t)
        return c[0] + (np.asarray(pts, dtype=float) / 2**level) @ (c[1:] - c[0])


def jacobian(mesh: MacroMesh, macro: int, level: int, o: Orientation) -> tuple[np.ndarray, float]:
    jm = mesh.macro_jacobian(macro)
    if abs(np.linalg.det(jm)) < 1e-300:
        raise ValueError("degenerate macro")
    j = jm @ offset_matrix(o) / 2**level
    return j, float(np.linalg.det(j))


def single_tet() -> MacroMesh:
    return MacroMesh(
        np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float),
        np.array([[0, 1, 2, 3]]),
        name="single-tet",
    )


def cube6() -> MacroMesh:
    """Unit cube split into six tets around the main diagonal."""
    verts = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=float)
    tets = []
    for a, b in ((0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)):
        p1 = 1 << a
        p2 = p1 | (1 << b)
        t = [0, p1, p2, 7]
        c = verts[t]
        if np.linalg.det((c[1:] - c[0]).T) < 0:
            t[1], t[2] = t[2], t[1]
        tets.append(t)
    return MacroMesh(verts, np.array(tets), name="cube6")


BUILTIN_MESHES = {"single-tet": single_tet, "cube6": cube6}


def parse_mesh(text: str, name: str = "mesh") -> MacroMesh:
    verts, tets = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "v" and len(tok) == 4:
            verts.append([float(t) for t in tok[1:]])
        elif tok[0] == "t" and len(tok) == 5:
            tets.append([int(t) for t in tok[1:]])
        else:
            raise ValueError(f"line {lineno}: cannot parse {line!r}")
    return MacroMesh(np.array(verts), np.array(tets), name=name)


def load_mesh(spec: str) -> MacroMesh:
    """Built-in mesh name or path to a mesh file."""
    if spec in BUILTIN_MESHES:
        return BUILTIN_MESHES[spec]()
    path = Path(spec)
    if not path.exists():
        raise ValueError(f"unknown mesh {spec!r}")
    return parse_mesh(path.read_text(), name=path.stem)


def iter_macros(mesh: MacroMesh) -> Iterator[int]:
    return iter(range(mesh.n_macros))


def orientation_counts(level: int) -> dict[Orientation, int]:
    n = 2**level
    out = {}
    for o in Orientation:
        b = loop_bound(o, n)
        out[o] = tet_number(b - 1)
    return out


def lattice_points(level: int) -> np.ndarray:
    return _lattice_anchors(2**level + 1)


__all__: Sequence[str] = [
    "Orientation",
    "OFFSETS",
    "MicroElement",
    "MacroMesh",
    "loop_bound",
    "micro_vertices",
    "enumerate_elements",
    "traversal_arrays",
    "jacobian",
    "single_tet",
    "cube6",
    "load_mesh",
    "parse_mesh",
    "pack",
    "tet_number",
]
