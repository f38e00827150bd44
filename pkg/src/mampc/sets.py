"""Axis-aligned boxes and origin-centered Euclidean balls.

These are the only set geometries the controllers use: constraint sets are
boxes, attraction/way-point regions are norm balls. Erosion (shrinking a set
by a margin so that model mismatch up to that margin cannot flip a membership
decision) has a closed form for both.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box {v : lower <= v <= upper}; entries may be +-inf."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"box bounds must be 1-d and congruent, got {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            bad = int(np.argmax(lo > hi))
            raise ValueError(f"box lower exceeds upper at coordinate {bad}: {lo[bad]} > {hi[bad]}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def clamp(self, v) -> np.ndarray:
        return np.clip(np.asarray(v, dtype=float), self.lower, self.upper)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Uniform samples; requires finite bounds."""
        if not self.is_bounded():
            raise ValueError("cannot sample from an unbounded box")
        if size is None:
            return rng.uniform(self.lower, self.upper)
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))

    @classmethod
    def unbounded(cls, dim: int) -> "Box":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))


@dataclass(frozen=True)
class NormBall:
    """Origin-centered Euclidean ball {v : ||v||_2 <= radius}."""

    radius: float

    def __post_init__(self):
        r = float(self.radius)
        if not np.isfinite(r) or r <= 0.0:
            raise ValueError(f"ball radius must be finite and positive, got {r}")
        object.__setattr__(self, "radius", r)

    def contains(self, v, tol: float = 0.0) -> bool:
        return bool(np.linalg.norm(np.asarray(v, dtype=float)) <= self.radius + tol)

    def sample(self, rng: np.random.Generator, dim: int, size: int) -> np.ndarray:
        """Uniform samples from the ball interior."""
        d = rng.standard_normal((size, dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        radii = self.radius * rng.uniform(0.0, 1.0, size) ** (1.0 / dim)
        return d * radii[:, None]

    def sample_sphere(self, rng: np.random.Generator, dim: int, size: int) -> np.ndarray:
        """Uniform samples from the boundary sphere."""
        d = rng.standard_normal((size, dim))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.radius * d


def erode(region, delta: float):
    """Shrink a Box or NormBall by margin delta; returns None if it empties.

    A point of the eroded set is at distance >= delta from the boundary of
    the original set, so a membership decision made on a model state that is
    wrong by at most delta still holds for the true state.
    """
    if delta < 0:
        raise ValueError(f"erosion margin must be nonnegative, got {delta}")
    if isinstance(region, NormBall):
        r = region.radius - delta
        return NormBall(r) if r > 0 else None
    if isinstance(region, Box):
        lo = np.where(np.isfinite(region.lower), region.lower + delta, region.lower)
        hi = np.where(np.isfinite(region.upper), region.upper - delta, region.upper)
        if np.any(lo > hi):
            return None
        return Box(lo, hi)
    raise TypeError(f"cannot erode {type(region).__name__}")


def ball_tangent_directions(dim: int, facets: int) -> np.ndarray:
    """Deterministic unit directions for an outer polytopic ball approximation.

    Returns a (facets, dim) array of unit vectors v_i; {x : v_i . x <= r}
    is a tight outer approximation of the radius-r ball (every facet is
    tangent). Axis directions come first, then normalized two-coordinate
    combinations, then seeded random fill for whatever remains.
    """
    dirs = []
    eye = np.eye(dim)
    for j in range(dim):
        dirs.append(eye[j])
        dirs.append(-eye[j])
    for offset in range(1, dim):
        for j in range(dim):
            k = (j + offset) % dim
            if k == j:
                continue
            for s in (1.0, -1.0):
                v = eye[j] + s * eye[k]
                dirs.append(v / np.linalg.norm(v))
                dirs.append(-(v / np.linalg.norm(v)))
            if len(dirs) >= facets:
                break
        if len(dirs) >= facets:
            break
    rng = np.random.default_rng(1234)
    while len(dirs) < facets:
        v = rng.standard_normal(dim)
        dirs.append(v / np.linalg.norm(v))
    return np.array(dirs[:facets])
