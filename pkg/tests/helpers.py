"""Shared test utilities: cached kernels and the oracle comparison."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from mfgen.forms import get_form, get_indexer, reference_apply
from mfgen.ir.passes import generate
from mfgen.mesh import load_mesh
from mfgen.runtime.interpreter import run_kernel


@lru_cache(maxsize=None)
def kernel(form: str, opts: str = ""):
    return generate(get_form(form), opts)


@lru_cache(maxsize=None)
def mesh(name: str):
    return load_mesh(name)


def random_inputs(form: str, mesh_name: str, level: int, seed: int = 0):
    f = get_form(form)
    m = mesh(mesh_name)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(get_indexer(f.space, m, level).n_dofs)
    coeffs = {c: 1.0 + rng.random(get_indexer(s, m, level).n_dofs) for c, s in f.coefficients}
    return v, coeffs


def apply_kernel(k, mesh_name: str, level: int, v, coeffs, **kw):
    m = mesh(mesh_name)
    if k.precompute == "apply":
        a = run_kernel(k.setup, m, level, dict(coeffs))
        return run_kernel(k, m, level, {"v": v, "A": a}, **kw)
    return run_kernel(k, m, level, {"v": v, **coeffs}, **kw)


def oracle_diff(form: str, opts: str, mesh_name: str, level: int, seed: int = 0) -> float:
    """Max relative difference of a generated kernel against the oracle apply."""
    k = kernel(form, opts)
    v, coeffs = random_inputs(form, mesh_name, level, seed)
    w = apply_kernel(k, mesh_name, level, v, coeffs)
    ref = reference_apply(get_form(form), mesh(mesh_name), level, v, coeffs, rule=k.rule)
    return float(np.max(np.abs(w - ref)) / np.max(np.abs(ref)))


# acceptance bookkeeping, filled by test_acceptance.py and printed by conftest.py
ACCEPTANCE: dict[int, str] = {}
ACCEPTANCE_DETAIL: dict[int, str] = {}
