"""Matrix-free CG, L2 error norms and manufactured-solution convergence studies."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..fespace import ND1, FieldVector, FunctionSpace, interpolate, tabulate
from ..forms import FORMS, WeakForm, assemble_matrix, get_indexer
from ..mesh import OFFSETS, SAWTOOTH_ORDER, MacroMesh, _lattice_anchors, cube6, jacobian, loop_bound
from ..quadrature import quadrature


class SolverError(RuntimeError):
    """CG breakdown or iteration limit; carries the last iterate and residual."""

    def __init__(self, msg: str, x: np.ndarray, iterations: int, residual: float):
        super().__init__(msg)
        self.x = x
        self.iterations = iterations
        self.residual = residual


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residuals: list[float] = field(default_factory=list)


def cg_solve(apply: Callable[[np.ndarray], np.ndarray], b: np.ndarray, mask: np.ndarray | None = None,
             rel_tol: float = 1e-9, max_it: int = 10000, x0: np.ndarray | None = None) -> CGResult:
    """Conjugate gradients on the DoFs where ``mask`` is true; others stay at ``x0``.

    The residual norm is taken over masked DoFs relative to the masked ``b``.
    """
    b = np.asarray(b, dtype=float)
    mask = np.ones(len(b), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    x_fixed = np.where(mask, 0.0, x)

    def op(p):
        return np.where(mask, apply(np.where(mask, p, 0.0)), 0.0)

    rhs = np.where(mask, b - apply(x_fixed), 0.0)
    bnorm = np.linalg.norm(np.where(mask, b, 0.0))
    xi = np.where(mask, x, 0.0)
    r = rhs - op(xi) if np.any(xi) else rhs.copy()
    rnorm = np.linalg.norm(r)
    hist = [rnorm]
    if bnorm == 0.0:
        bnorm = 1.0
    if rnorm <= rel_tol * bnorm:
        return CGResult(x_fixed + xi, 0, hist)
    p = r.copy()
    rr = rnorm**2
    for it in range(1, max_it + 1):
        ap = op(p)
        pap = float(p @ ap)
        if not pap > 0.0:
            raise SolverError(f"CG breakdown: p^T A p = {pap:.3e} (operator not SPD)", x_fixed + xi, it, rnorm / bnorm)
        alpha = rr / pap
        xi += alpha * p
        r -= alpha * ap
        rr_new = float(r @ r)
        rnorm = np.sqrt(rr_new)
        hist.append(rnorm)
        if rnorm <= rel_tol * bnorm:
            return CGResult(x_fixed + xi, it, hist)
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise SolverError(f"CG did not converge in {max_it} iterations (relative residual {rnorm / bnorm:.3e})",
                      x_fixed + xi, max_it, rnorm / bnorm)


# ---------------------------------------------------------------- error norms


def _values(space: FunctionSpace, j, pts_hat, coeff):
    """Discrete field values at reference points for elements with local coefficients (E, n)."""
    phi = tabulate(space, pts_hat)  # (nq, n) or (nq, n, 3)
    if space is ND1:
        jinv = np.linalg.inv(j)
        vec = phi @ jinv  # covariant Piola
        return np.einsum("en,qnd->eqd", coeff, vec)
    return np.einsum("en,qn->eq", coeff, phi)


def l2_error(space: FunctionSpace, xh, exact: Callable, mesh: MacroMesh, level: int,
             degree: int | None = None) -> float:
    """sqrt(sum over micro elements of sum_q w_q |det J| |u_h - u|^2)."""
    vals = np.asarray(xh.values if isinstance(xh, FieldVector) else xh, dtype=float)
    rule = quadrature(degree if degree is not None else min(space.degree + 2, 6))
    idx = get_indexer(space, mesh, level)
    n = 2**level
    total = 0.0
    for t in range(mesh.n_macros):
        for o in SAWTOOTH_ORDER:
            anchors = _lattice_anchors(loop_bound(o, n))
            if not len(anchors):
                continue
            dofs, signs = idx.element_dofs(t, o, anchors)
            j, det = jacobian(mesh, t, level, o)
            coeff = vals[dofs] * signs[None, :]
            uh = _values(space, j, rule.points, coeff)
            xw = _world_points(mesh, t, level, o, anchors, j, rule.points)
            u = np.asarray(exact(xw.reshape(-1, 3)), dtype=float)
            u = u.reshape(uh.shape)
            d = (uh - u) ** 2
            if d.ndim == 3:
                d = d.sum(axis=2)
            total += abs(det) * float(np.sum(d * rule.weights[None, :]))
    return float(np.sqrt(total))


def load_vector(space: FunctionSpace, f: Callable, mesh: MacroMesh, level: int, degree: int = 6) -> np.ndarray:
    """b_i = integral of f times basis function i, by quadrature on every micro element."""
    rule = quadrature(degree)
    idx = get_indexer(space, mesh, level)
    b = np.zeros(idx.n_dofs)
    phi = tabulate(space, rule.points)
    n = 2**level
    for t in range(mesh.n_macros):
        for o in SAWTOOTH_ORDER:
            anchors = _lattice_anchors(loop_bound(o, n))
            if not len(anchors):
                continue
            dofs, signs = idx.element_dofs(t, o, anchors)
            j, det = jacobian(mesh, t, level, o)
            xw = _world_points(mesh, t, level, o, anchors, j, rule.points)
            fx = np.asarray(f(xw.reshape(-1, 3)), dtype=float)
            if space is ND1:
                fx = fx.reshape(len(anchors), rule.n_points, 3)
                basis = phi @ np.linalg.inv(j)  # (nq, n, 3)
                loc = np.einsum("eqd,qnd,q->en", fx, basis, rule.weights)
            else:
                fx = fx.reshape(len(anchors), rule.n_points)
                loc = np.einsum("eq,qn,q->en", fx, phi, rule.weights)
            np.add.at(b, dofs, abs(det) * loc * signs[None, :])
    return b


def _world_points(mesh, t, level, o, anchors, j, pts_hat) -> np.ndarray:
    base = np.asarray(anchors) + np.asarray(OFFSETS[o][0])[None, :]
    origin = mesh.lattice_to_world(t, level, base)
    return origin[:, None, :] + np.einsum("rc,qc->qr", j, pts_hat)[None]


# ---------------------------------------------------------------- manufactured solutions


def _sin3(p):
    return np.sin(np.pi * p[:, 0]) * np.sin(np.pi * p[:, 1]) * np.sin(np.pi * p[:, 2])


def _nd1_u(p):
    s = np.sin(np.pi * p)
    return np.stack([s[:, 1] * s[:, 2], s[:, 2] * s[:, 0], s[:, 0] * s[:, 1]], axis=1)


@dataclass(frozen=True)
class Manufactured:
    """Exact solution, right-hand side and coefficient functions of one problem."""

    name: str
    u: Callable
    f: Callable
    coefficients: dict = field(default_factory=dict)


def _p2v_rhs(p):
    # -div((1 + x) grad u) for u = sin sin sin
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    pi = np.pi
    u = _sin3(p)
    ux = pi * np.cos(pi * x) * np.sin(pi * y) * np.sin(pi * z)
    return (1.0 + x) * 3 * pi**2 * u - ux


MANUFACTURED: dict[str, Manufactured] = {
    "P1": Manufactured("sin-product", _sin3, lambda p: 3 * np.pi**2 * _sin3(p), {}),
    "P2V": Manufactured("sin-product, k = 1 + x", _sin3, _p2v_rhs, {"k": lambda p: 1.0 + p[:, 0]}),
    "N1": Manufactured(
        "cyclic sin-product field, alpha = beta = 1",
        _nd1_u,
        lambda p: (2 * np.pi**2 + 1.0) * _nd1_u(p),
        {"alpha": lambda p: np.ones(len(p)), "beta": lambda p: np.ones(len(p))},
    ),
}


@dataclass
class ConvergenceRow:
    level: int
    n_dofs: int
    iterations: int
    error: float
    ratio: float | None


def kernel_operator(form: WeakForm, opts: str, mesh: MacroMesh, level: int, coeffs: dict,
                    kernel=None) -> Callable[[np.ndarray], np.ndarray]:
    """Operator closure applying the generated kernel through the interpreter."""
    from ..ir.passes import generate
    from .interpreter import run_kernel

    k = kernel if kernel is not None else generate(form, opts)
    if k.precompute == "apply":
        a = run_kernel(k.setup, mesh, level, dict(coeffs))
        return lambda v: run_kernel(k, mesh, level, {"v": v, "A": a})
    return lambda v: run_kernel(k, mesh, level, {"v": v, **coeffs})


def solve_manufactured(form: WeakForm, mesh: MacroMesh, level: int, opts: str = "SVI",
                       manufactured: Manufactured | None = None, rel_tol: float = 1e-9,
                       kernel=None, operator: str = "kernel") -> tuple[np.ndarray, int]:
    man = manufactured or MANUFACTURED[form.short]
    idx = get_indexer(form.space, mesh, level)
    coeffs = {c: interpolate(s, man.coefficients[c], mesh, level, get_indexer(s, mesh, level)).values
              for c, s in form.coefficients}
    _, bnd = idx.dof_geometry()
    ex = interpolate(form.space, man.u, mesh, level, idx).values
    b = load_vector(form.space, man.f, mesh, level)
    if operator == "kernel":
        apply = kernel_operator(form, opts, mesh, level, coeffs, kernel)
    else:
        from ..ir.passes import generate

        rule = (kernel or generate(form, opts)).rule
        a = assemble_matrix(form, mesh, level, coeffs, rule)
        apply = a.__matmul__
    x0 = np.where(bnd, ex, 0.0)
    res = cg_solve(apply, b, ~bnd, rel_tol, max_it=20 * idx.n_dofs, x0=x0)
    return res.x, res.iterations


def convergence_study(form: WeakForm | str, levels=(2, 3, 4), manufactured: Manufactured | None = None,
                      mesh: MacroMesh | None = None, opts: str | None = None, rel_tol: float = 1e-9,
                      operator: str = "kernel") -> list[ConvergenceRow]:
    """L2 errors of the discrete solutions per level and ratios of consecutive errors."""
    from ..ir.passes import generate

    form = FORMS[form] if isinstance(form, str) else form
    mesh = mesh or cube6()
    man = manufactured or MANUFACTURED[form.short]
    if opts is None:
        opts = "SVUI" if form.under_integrated_degree is not None else "SVI"
    kernel = generate(form, opts)
    rows: list[ConvergenceRow] = []
    for level in levels:
        x, its = solve_manufactured(form, mesh, level, opts, man, rel_tol, kernel, operator)
        err = l2_error(form.space, x, man.u, mesh, level)
        ratio = rows[-1].error / err if rows else None
        rows.append(ConvergenceRow(level, len(x), its, err, ratio))
    return rows


__all__ = [
    "CGResult",
    "ConvergenceRow",
    "MANUFACTURED",
    "Manufactured",
    "SolverError",
    "cg_solve",
    "convergence_study",
    "kernel_operator",
    "l2_error",
    "load_vector",
    "solve_manufactured",
]
