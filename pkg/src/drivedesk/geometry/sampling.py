"""Training-sample synthesis for signed distance fields.

The recipe: most samples sit near the surface (projected there by a few
Newton steps along the finite-difference gradient, then jittered at two
noise scales), the rest fill the unit ball uniformly. Everything is a
pure function of (field, n, near_fraction, sigmas, seed).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoSurface
from .fields import ScalarField3, finite_difference_gradient

# samples may leave the unit ball by at most this much after jitter
BALL_SLACK = 0.1

NEWTON_STEPS = 5
_CONVERGENCE_TOL = 1e-3


@dataclass(frozen=True)
class SdfSamples:
    """Struct-of-arrays batch: positions (N,3), values (N,)."""

    positions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        assert self.positions.shape == (len(self.values), 3)

    def __len__(self) -> int:
        return len(self.values)

    @staticmethod
    def concatenate(parts: list["SdfSamples"]) -> "SdfSamples":
        return SdfSamples(
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.values for p in parts]),
        )


def _uniform_ball(rng: np.random.Generator, n: int,
                  radius: float = 1.0) -> np.ndarray:
    dirs = rng.standard_normal((n, 3))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    radii = radius * np.cbrt(rng.random((n, 1)))
    return dirs / norms * radii


def _project_to_surface(field: ScalarField3, start: np.ndarray) -> np.ndarray:
    x = start.copy()
    for _ in range(NEWTON_STEPS):
        g = finite_difference_gradient(field, x)
        sq = np.sum(g * g, axis=1, keepdims=True)
        sq[sq < 1e-12] = 1.0
        x = x - field(x)[:, None] * g / sq
    return x

def _clamp_to_ball(points: np.ndarray) -> np.ndarray:
    limit = 1.0 + BALL_SLACK
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    scale = np.where(norms > limit, limit / norms, 1.0)
    return points * scale


def sample_sdf_split(field: ScalarField3, n: int,
                     near_fraction: float = 0.95,
                     sigmas: tuple[float, float] = (0.005, 0.05),
                     seed: int = 0) -> tuple[SdfSamples, SdfSamples]:
    """(near-surface, uniform) parts; sample_sdf concatenates them.

    The split count is deterministic: round(near_fraction * n) samples are
    near-surface, the first half (rounded up) jittered with sigmas[0], the
    rest with sigmas[1].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= near_fraction <= 1.0:
        raise ValueError("near_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    n_near = int(near_fraction * n + 0.5)
    n_uniform = n - n_near

    if n_near > 0:
        seeds = _uniform_ball(rng, n_near)
        projected = _project_to_surface(field, seeds)
        residual = np.abs(field(projected))
        converged = residual < _CONVERGENCE_TOL
        if not converged.any():
            raise NoSurface(
                f"no zero crossing found for field {field.name!r}"
            )
        if not converged.all():
            # reuse converged points for the strays; keeps the count exact
            pool = np.flatnonzero(converged)
            fill = pool[rng.integers(0, len(pool), size=int((~converged).sum()))]
            projected[~converged] = projected[fill]
        n_tight = (n_near + 1) // 2
        noise = rng.standard_normal((n_near, 3))
        noise[:n_tight] *= sigmas[0]
        noise[n_tight:] *= sigmas[1]
        near_pos = _clamp_to_ball(projected + noise)
        near = SdfSamples(near_pos, field(near_pos))
    else:
        near = SdfSamples(np.zeros((0, 3)), np.zeros(0))

    if n_uniform > 0:
        uni_pos = _uniform_ball(rng, n_uniform)
        uniform = SdfSamples(uni_pos, field(uni_pos))
    else:
        uniform = SdfSamples(np.zeros((0, 3)), np.zeros(0))
    return near, uniform


def sample_sdf(field: ScalarField3, n: int = 500_000,
               near_fraction: float = 0.95,
               sigmas: tuple[float, float] = (0.005, 0.05),
               seed: int = 0) -> SdfSamples:
    near, uniform = sample_sdf_split(field, n, near_fraction, sigmas, seed)
    return SdfSamples.concatenate([near, uniform])
