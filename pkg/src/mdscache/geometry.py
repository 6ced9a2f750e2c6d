"""Geometry on a sphere of radius rho.

Points are unit 3-vectors; distances are scaled by rho on the way out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AntipodalLeg(ValueError):
    """Raised when a great-circle leg is requested between antipodal points."""


@dataclass(frozen=True)
class SphereConfig:
    rho: float

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")

    @property
    def area(self) -> float:
        return 4.0 * np.pi * self.rho**2


def sample_uniform_point(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw area-uniform points on the unit sphere.

    Returns shape (3,) when `size` is None, else (size, 3).
    """
    shape = (3,) if size is None else (size, 3)
    while True:
        v = rng.standard_normal(shape)
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
        if np.all(norm > 1e-12):
            return v / norm


def central_angle(a, b) -> np.ndarray:
    """Angle between unit vectors, broadcasting over leading axes."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dot = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    # atan2 keeps full precision near 0 and pi, where arccos(dot) does not
    return np.arctan2(cross, dot)


def great_circle_distance(a, b, rho: float = 1.0):
    """Distance in meters measured along the sphere surface, in [0, pi*rho]."""
    d = rho * central_angle(a, b)
    return float(d) if np.ndim(d) == 0 else d


def position_on_leg(origin, target, fraction):
    """Point a given fraction of the way along the minor arc origin -> target.

    `fraction` may be an array (with matching leading shape for origin/target).
    """
    origin = np.asarray(origin, dtype=float)
    target = np.asarray(target, dtype=float)
    fraction = np.asarray(fraction, dtype=float)
    omega = central_angle(origin, target)
    if np.any(np.pi - omega < 1e-12):
        raise AntipodalLeg("origin and target are antipodal; resample the target")
    sin_omega = np.sin(omega)
    small = sin_omega < 1e-12
    safe = np.where(small, 1.0, sin_omega)
    w0 = np.where(small, 1.0 - fraction, np.sin((1.0 - fraction) * omega) / safe)
    w1 = np.where(small, fraction, np.sin(fraction * omega) / safe)
    p = w0[..., None] * origin + w1[..., None] * target
    return p / np.linalg.norm(p, axis=-1, keepdims=True)
