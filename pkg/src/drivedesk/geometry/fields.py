"""Signed scalar fields over R^3 with a declared Lipschitz bound.

The bound is what makes sphere tracing safe: a step of value/bound can
never jump across the zero set. Exact SDFs have bound 1; smooth blends
and corrugations push it above 1 and must say so.
"""
from __future__ import annotations

import numpy as np


class ScalarField3:
    """Wraps a vectorized evaluator (N,3) -> (N,).

    Negative inside, positive outside. Deterministic by contract: the
    evaluator must be a pure function of position.
    """

    __slots__ = ("_fn", "lipschitz_bound", "name")

    def __init__(self, fn, lipschitz_bound: float = 1.0, name: str = ""):
        self._fn = fn
        self.lipschitz_bound = float(lipschitz_bound)
        self.name = name

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        squeeze = pts.ndim == 1
        pts = np.atleast_2d(pts)
        out = np.asarray(self._fn(pts), dtype=np.float64).reshape(len(pts))
        return out[0] if squeeze else out

    def value_at(self, x: float, y: float, z: float) -> float:
        return float(self(np.array([x, y, z])))


def sphere_field(radius: float, center=(0.0, 0.0, 0.0)) -> ScalarField3:
    c = np.asarray(center, dtype=np.float64)

    def fn(p):
        return np.linalg.norm(p - c, axis=1) - radius

    return ScalarField3(fn, lipschitz_bound=1.0, name=f"sphere r={radius}")


def torus_field(major: float, minor: float) -> ScalarField3:
    """Torus around the z axis; handy as a genus-1 test surface."""

    def fn(p):
        ring = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2) - major
        return np.sqrt(ring ** 2 + p[:, 2] ** 2) - minor

    return ScalarField3(fn, lipschitz_bound=1.0,
                        name=f"torus R={major} r={minor}")


def constant_field(value: float) -> ScalarField3:
    def fn(p):
        return np.full(len(p), value)

    return ScalarField3(fn, lipschitz_bound=0.0, name=f"const {value}")


def finite_difference_gradient(field: ScalarField3, points: np.ndarray,
                               h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient, (N,3) in -> (N,3) out."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    grad = np.empty_like(pts)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        grad[:, axis] = (field(pts + step) - field(pts - step)) / (2 * h)
    return grad


def probe_lipschitz(field: ScalarField3, n_pairs: int = 2000,
                    seed: int = 0, radius: float = 1.1) -> float:
    """Largest sampled difference quotient; a cheap continuity check."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(-radius, radius, size=(n_pairs, 3))
    b = a + rng.normal(scale=0.01, size=(n_pairs, 3))
    dist = np.linalg.norm(a - b, axis=1)
    ok = dist > 1e-12
    quot = np.abs(field(a[ok]) - field(b[ok])) / dist[ok]
    return float(quot.max())
