"""Weak forms, numeric local matrices and the reference global apply."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .fespace import (
    ND1,
    P1,
    P2,
    DoFIndexer,
    FieldVector,
    FunctionSpace,
    element_slots,
    reference_curls,
    tabulate,
    tabulate_grad,
)
from .mesh import (
    MacroMesh,
    MicroElement,
    Orientation,
    SAWTOOTH_ORDER,
    jacobian,
    loop_bound,
    orientation_sign,
    _lattice_anchors,
)
from .quadrature import QuadratureRule, quadrature


@dataclass(frozen=True)
class Term:
    coefficient: str | None
    kind: str  # "gradgrad", "curlcurl" or "mass"


@dataclass(frozen=True)
class WeakForm:
    name: str
    short: str
    space: FunctionSpace
    coefficients: tuple[tuple[str, FunctionSpace], ...]
    terms: tuple[Term, ...]
    default_degree: int
    exact_degree: int
    symmetric: bool = True
    under_integrated_degree: int | None = None

    @property
    def trial(self) -> FunctionSpace:
        return self.space

    @property
    def test(self) -> FunctionSpace:
        return self.space

    @property
    def coefficient_spaces(self) -> dict[str, FunctionSpace]:
        return dict(self.coefficients)

    def default_rule(self) -> QuadratureRule:
        return quadrature(self.default_degree)

    def oracle_rule(self) -> QuadratureRule:
        return quadrature(self.exact_degree + 2)


P1_DIFFUSION = WeakForm(
    "P1-diffusion", "P1", P1, (), (Term(None, "gradgrad"),), default_degree=1, exact_degree=0
)
P2V_DIFFUSION = WeakForm(
    "P2V-diffusion",
    "P2V",
    P2,
    (("k", P2),),
    (Term("k", "gradgrad"),),
    default_degree=4,
    exact_degree=4,
    under_integrated_degree=2,
)
N1_CURLCURL_MASS = WeakForm(
    "N1-curlcurl-mass",
    "N1",
    ND1,
    (("alpha", P1), ("beta", P1)),
    (Term("alpha", "curlcurl"), Term("beta", "mass")),
    default_degree=3,
    exact_degree=3,
)
P1_MASS = WeakForm("P1-mass", "P1M", P1, (), (Term(None, "mass"),), 2, 2)
P2_MASS = WeakForm("P2-mass", "P2M", P2, (), (Term(None, "mass"),), 4, 4)
N1_MASS = WeakForm("N1-mass", "N1M", ND1, (), (Term(None, "mass"),), 2, 2)

FORMS: dict[str, WeakForm] = {"P1": P1_DIFFUSION, "P2V": P2V_DIFFUSION, "N1": N1_CURLCURL_MASS}


def get_form(name: str) -> WeakForm:
    for f in (P1_DIFFUSION, P2V_DIFFUSION, N1_CURLCURL_MASS, P1_MASS, P2_MASS, N1_MASS):
        if name in (f.short, f.name):
            return f
    raise ValueError(f"unknown form {name!r}; expected one of {sorted(FORMS)}")


# ---------------------------------------------------------------- indexer cache

_INDEXERS: dict = {}


def get_indexer(space: FunctionSpace, mesh: MacroMesh, level: int) -> DoFIndexer:
    key = (space, mesh.vertices.tobytes(), mesh.tets.tobytes(), level)
    idx = _INDEXERS.get(key)
    if idx is None:
        if len(_INDEXERS) > 32:
            _INDEXERS.clear()
        idx = DoFIndexer(space, mesh, level)
        _INDEXERS[key] = idx
    return idx


# ---------------------------------------------------------------- local matrices


@dataclass
class LocalMatrix:
    values: np.ndarray
    orientation: Orientation
    anchor: tuple[int, int, int]


def geometric_factors(form: WeakForm, j: np.ndarray, sign: int, rule: QuadratureRule) -> dict[str, np.ndarray]:
    """Micro-invariant factor per term: (nq, n, n) indexed [q, test j, trial i]."""
    det = float(np.linalg.det(j))
    if det == 0.0:
        raise ValueError("singular Jacobian")
    absdet = sign * det
    jinv = np.linalg.inv(j)
    w = rule.weights * absdet
    out = {}
    for t in form.terms:
        if t.kind == "gradgrad":
            g = tabulate_grad(form.space, rule.points) @ jinv
            out[t.kind] = w[:, None, None] * np.einsum("qjr,qir->qji", g, g)
        elif t.kind == "curlcurl":
            c = reference_curls() @ j.T / det
            out[t.kind] = w[:, None, None] * (c @ c.T)[None]
        elif t.kind == "mass":
            phi = tabulate(form.space, rule.points)
            if form.space is ND1:
                v = phi @ jinv
                out[t.kind] = w[:, None, None] * np.einsum("qjr,qir->qji", v, v)
            else:
                out[t.kind] = w[:, None, None] * np.einsum("qj,qi->qji", phi, phi)
    return out


def local_matrices(
    form: WeakForm,
    j: np.ndarray,
    sign: int,
    coeff_local: Mapping[str, np.ndarray],
    rule: QuadratureRule,
    n_elements: int,
) -> np.ndarray:
    """Local matrices (E, n, n) of elements sharing one Jacobian."""
    geo = geometric_factors(form, j, sign, rule)
    n = form.space.n_local
    a = np.zeros((n_elements, n, n))
    spaces = form.coefficient_spaces
    for t in form.terms:
        g = geo[t.kind]
        if t.coefficient is None:
            a += g.sum(axis=0)[None]
        else:
            phi = tabulate(spaces[t.coefficient], rule.points)  # (nq, nc)
            cq = coeff_local[t.coefficient] @ phi.T  # (E, nq)
            a += np.einsum("eq,qji->eji", cq, g)
    return a


def _coeff_values(form: WeakForm, coeffs) -> dict[str, np.ndarray]:
    coeffs = dict(coeffs or {})
    out = {}
    for name, _ in form.coefficients:
        if name not in coeffs:
            raise ValueError(f"form {form.short} requires coefficient {name!r}")
        c = coeffs[name]
        out[name] = np.asarray(c.values if isinstance(c, FieldVector) else c, dtype=float)
    return out


def _element_data(form, mesh, level, macro, o, anchors, coeffs):
    idx = get_indexer(form.space, mesh, level)
    dofs, signs = idx.element_dofs(macro, o, anchors)
    cl = {}
    for name, space in form.coefficients:
        cidx = get_indexer(space, mesh, level)
        cd, _ = cidx.element_dofs(macro, o, anchors)
        cl[name] = coeffs[name][cd]
    j, _ = jacobian(mesh, macro, level, o)
    sign = orientation_sign(o)
    return dofs, signs, cl, j, sign


def local_matrix(form: WeakForm, mesh: MacroMesh, level: int, e: MicroElement, coeffs=None,
                 rule: QuadratureRule | None = None) -> LocalMatrix:
    rule = rule or form.oracle_rule()
    c = _coeff_values(form, coeffs)
    anchors = np.array([e.anchor], dtype=np.int64)
    dofs, signs, cl, j, sign = _element_data(form, mesh, level, e.macro, e.orientation, anchors, c)
    a = local_matrices(form, j, sign, cl, rule, 1)[0]
    a = a * np.outer(signs, signs)
    return LocalMatrix(a, e.orientation, e.anchor)


def local_apply(form: WeakForm, mesh: MacroMesh, level: int, e: MicroElement, v, w: np.ndarray,
                coeffs=None, rule=None) -> np.ndarray:
    v = np.asarray(v.values if isinstance(v, FieldVector) else v, dtype=float)
    idx = get_indexer(form.space, mesh, level)
    if v.shape != (idx.n_dofs,) or w.shape != (idx.n_dofs,):
        raise ValueError("vector shape does not match the space")
    a = local_matrix(form, mesh, level, e, coeffs, rule).values
    dofs, _ = idx.element_dofs(e.macro, e.orientation, np.array([e.anchor]))
    np.add.at(w, dofs[0], a @ v[dofs[0]])
    return w


def _sweep(form, mesh, level, coeffs, rule):
    c = _coeff_values(form, coeffs)
    n = 2**level
    for macro in range(mesh.n_macros):
        for o in SAWTOOTH_ORDER:
            anchors = _lattice_anchors(loop_bound(o, n))
            if not len(anchors):
                continue
            dofs, signs, cl, j, sign = _element_data(form, mesh, level, macro, o, anchors, c)
            a = local_matrices(form, j, sign, cl, rule, len(anchors))
            a = a * np.outer(signs, signs)[None]
            yield dofs, a


def reference_apply(form: WeakForm, mesh: MacroMesh, level: int, v, coeffs=None,
                    rule: QuadratureRule | None = None) -> np.ndarray:
    """w = sum over micro elements of scatter(A_T gather(v))."""
    rule = rule or form.oracle_rule()
    v = np.asarray(v.values if isinstance(v, FieldVector) else v, dtype=float)
    idx = get_indexer(form.space, mesh, level)
    if v.shape != (idx.n_dofs,):
        raise ValueError("vector shape does not match the space")
    w = np.zeros(idx.n_dofs)
    for dofs, a in _sweep(form, mesh, level, coeffs, rule):
        np.add.at(w, dofs, np.einsum("eji,ei->ej", a, v[dofs]))
    return w


def assemble_matrix(form: WeakForm, mesh: MacroMesh, level: int, coeffs=None,
                    rule: QuadratureRule | None = None) -> sp.csr_matrix:
    rule = rule or form.oracle_rule()
    idx = get_indexer(form.space, mesh, level)
    rows, cols, vals = [], [], []
    for dofs, a in _sweep(form, mesh, level, coeffs, rule):
        n = dofs.shape[1]
        rows.append(np.repeat(dofs, n, axis=1).reshape(-1))
        cols.append(np.tile(dofs, (1, n)).reshape(-1))
        vals.append(a.reshape(-1))
    if not rows:
        return sp.csr_matrix((idx.n_dofs, idx.n_dofs))
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(idx.n_dofs, idx.n_dofs),
    )
    return m.tocsr()


def sparse_matrix_bytes(nnz_per_row: int, rows: int, bytes_per_entry: int) -> int:
    if min(nnz_per_row, rows, bytes_per_entry) < 0:
        raise ValueError("arguments must be non-negative")
    return nnz_per_row * rows * bytes_per_entry


__all__ = [
    "WeakForm",
    "Term",
    "FORMS",
    "get_form",
    "local_matrix",
    "local_apply",
    "reference_apply",
    "assemble_matrix",
    "sparse_matrix_bytes",
    "element_slots",
    "get_indexer",
    "assemble_matrix",
]
