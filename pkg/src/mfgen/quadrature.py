"""Quadrature rules on the reference tetrahedron (0,0,0),(1,0,0),(0,1,0),(0,0,1).

Weights include the 1/6 volume factor.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import sqrt

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 6


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, 3) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int
    name: str

    @property
    def n_points(self) -> int:
        return len(self.weights)

    @property
    def barycentric(self) -> np.ndarray:
        p = self.points
        return np.column_stack([1.0 - p.sum(axis=1), p])

    @property
    def rule_id(self) -> str:
        return f"{self.name}-d{self.degree}-n{self.n_points}"

    def __hash__(self):
        return hash(self.rule_id)

    def __eq__(self, other):
        return isinstance(other, QuadratureRule) and self.rule_id == other.rule_id


def _from_barycentric(bary, weights, degree, name) -> QuadratureRule:
    b = np.asarray(bary, dtype=float)
    return QuadratureRule(b[:, 1:].copy(), np.asarray(weights, dtype=float), degree, name)


def _orbit_s31(a: float) -> list[list[float]]:
    b = 1.0 - 3.0 * a
    return [[b, a, a, a], [a, b, a, a], [a, a, b, a], [a, a, a, b]]


def _orbit_s22(a: float) -> list[list[float]]:
    b = 0.5 - a
    return [
        [a, a, b, b],
        [a, b, a, b],
        [a, b, b, a],
        [b, a, a, b],
        [b, a, b, a],
        [b, b, a, a],
    ]


def _centroid() -> QuadratureRule:
    return _from_barycentric([[0.25] * 4], [1.0 / 6.0], 1, "centroid")


def _four_point() -> QuadratureRule:
    a = (5.0 - sqrt(5.0)) / 20.0
    return _from_barycentric(_orbit_s31(a), [1.0 / 24.0] * 4, 2, "s31")


def _keast11() -> QuadratureRule:
    # centroid + S31 + S22 orbits; the centroid weight is negative
    a = 1.0 / 14.0
    b = (1.0 + sqrt(5.0 / 14.0)) / 4.0
    pts = [[0.25] * 4] + _orbit_s31(a) + _orbit_s22(0.5 - b)
    w = [-74.0 / 5625.0] + [343.0 / 45000.0] * 4 + [56.0 / 2250.0] * 6
    return _from_barycentric(pts, w, 4, "keast11")


def _conical(m: int) -> QuadratureRule:
    """Collapsed-coordinate Gauss-Jacobi product rule, exact to degree 2m-1."""
    x1, w1 = roots_jacobi(m, 2.0, 0.0)
    x2, w2 = roots_jacobi(m, 1.0, 0.0)
    x3, w3 = roots_jacobi(m, 0.0, 0.0)
    t1, t2, t3 = (x1 + 1) / 2, (x2 + 1) / 2, (x3 + 1) / 2
    w1, w2, w3 = w1 / 8.0, w2 / 4.0, w3 / 2.0
    pts, wts = [], []
    for i in range(m):
        for j in range(m):
            for k in range(m):
                x = t1[i]
                y = (1 - t1[i]) * t2[j]
                z = (1 - t1[i]) * (1 - t2[j]) * t3[k]
                pts.append([x, y, z])
                wts.append(w1[i] * w2[j] * w3[k])
    return QuadratureRule(np.array(pts), np.array(wts), 2 * m - 1, f"conical{m}")


@lru_cache(maxsize=None)
def quadrature(degree: int) -> QuadratureRule:
    """Rule with exactness at least ``degree``."""
    if degree <= 1:
        if degree < 0:
            raise ValueError(f"unsupported quadrature degree {degree}")
        return _centroid()
    if degree == 2:
        return _four_point()
    if degree == 3:
        return _conical(2)
    if degree == 4:
        return _keast11()
    if degree == 5:
        return _conical(3)
    if degree == 6:
        return _conical(4)
    raise ValueError(f"unsupported quadrature degree {degree} (max {MAX_DEGREE})")


def monomial_integral(a: int, b: int, c: int) -> float:
    from math import factorial

    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
