"""Direction-of-arrival helpers: spherical/Cartesian conversion, grid rounding,
vector averaging and angular distance.

Azimuth is counterclockwise-positive in [-180, 180), elevation in [-90, 90],
both in degrees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

GRID_STEP_DEG = 10


class DegenerateDirectionError(ValueError):
    """Raised when a direction cannot be defined (zero or cancelling vectors)."""


def wrap_azimuth(az: float) -> float:
    """Map an azimuth in degrees into [-180, 180)."""
    wrapped = (az + 180.0) % 360.0 - 180.0
    # float modulo can land exactly on +180 for tiny negative inputs
    if wrapped >= 180.0:
        wrapped -= 360.0
    return wrapped


@dataclass(frozen=True)
class SphericalDoa:
    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        if not (math.isfinite(self.azimuth_deg) and math.isfinite(self.elevation_deg)):
            raise ValueError(f"non-finite direction {self.azimuth_deg!r}, {self.elevation_deg!r}")
        object.__setattr__(self, "azimuth_deg", wrap_azimuth(float(self.azimuth_deg)))
        object.__setattr__(self, "elevation_deg", min(90.0, max(-90.0, float(self.elevation_deg))))


@dataclass(frozen=True)
class CartesianDoa:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, v) -> "CartesianDoa":
        v = np.asarray(v, dtype=float)
        n = float(np.linalg.norm(v))
        if not n > 1e-12:
            raise DegenerateDirectionError(f"cannot normalise vector {v.tolist()}")
        v = v / n
        return cls(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True, order=True)
class GridDoa:
    azimuth_deg: int
    elevation_deg: int

    def __post_init__(self):
        az, el = self.azimuth_deg, self.elevation_deg
        if az % GRID_STEP_DEG or el % GRID_STEP_DEG:
            raise ValueError(f"({az}, {el}) is not on the {GRID_STEP_DEG} degree grid")
        if not (-180 <= az < 180 and -90 <= el <= 90):
            raise ValueError(f"({az}, {el}) is outside the azimuth/elevation range")

    def to_spherical(self) -> SphericalDoa:
        return SphericalDoa(float(self.azimuth_deg), float(self.elevation_deg))

    def to_cartesian(self) -> CartesianDoa:
        return sph_to_cart(self.to_spherical())


def sph_to_cart(d: SphericalDoa) -> CartesianDoa:
    az = math.radians(d.azimuth_deg)
    el = math.radians(d.elevation_deg)
    return CartesianDoa(math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el))


def cart_to_sph(v: CartesianDoa) -> SphericalDoa:
    x, y, z = v.x, v.y, v.z
    n = math.sqrt(x * x + y * y + z * z)
    if not n > 1e-12:
        raise DegenerateDirectionError("zero-length direction vector")
    el = math.degrees(math.asin(max(-1.0, min(1.0, z / n))))
    if abs(el) == 90.0:
        return SphericalDoa(0.0, el)
    return SphericalDoa(math.degrees(math.atan2(y, x)), el)


def sph_to_cart_array(azimuth_deg, elevation_deg) -> np.ndarray:
    """Vectorised conversion; returns an array of shape (..., 3)."""
    az = np.radians(np.asarray(azimuth_deg, dtype=float))
    el = np.radians(np.asarray(elevation_deg, dtype=float))
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def _round_half_away(value: float, step: int = GRID_STEP_DEG) -> int:
    q = abs(value) / step
    r = math.floor(q + 0.5)
    return int(math.copysign(r, value)) * step


def round_to_grid(d: SphericalDoa) -> GridDoa:
    az = _round_half_away(d.azimuth_deg)
    el = _round_half_away(d.elevation_deg)
    if az >= 180:
        az -= 360
    return GridDoa(az, el)


def mean_direction(vs: Iterable) -> CartesianDoa:
    """Normalised mean of unit vectors.

    Accepts ``CartesianDoa`` items or an ``(n, 3)`` array.
    """
    if isinstance(vs, np.ndarray):
        arr = vs.reshape(-1, 3).astype(float)
    else:
        arr = np.array([v.as_array() if isinstance(v, CartesianDoa) else v for v in vs], dtype=float)
    if arr.size == 0:
        raise DegenerateDirectionError("mean of an empty set of directions")
    total = arr.reshape(-1, 3).mean(axis=0)
    if not np.linalg.norm(total) > 1e-9:
        raise DegenerateDirectionError("directions cancel out")
    return CartesianDoa.from_array(total)


def angular_distance_pairs(a, b) -> np.ndarray:
    """Broadcasting angular distance in degrees between unit vectors on the last axis.

    Uses atan2(|a x b|, a . b), which equals arccos(a . b) but is exact for
    identical inputs and well-conditioned near 0 and 180 degrees.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def angular_distance(a: CartesianDoa, b: CartesianDoa) -> float:
    """Great-circle distance in degrees between two unit vectors."""
    return float(angular_distance_pairs(a.as_array(), b.as_array()))


def angular_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise distances in degrees between rows of ``a`` (m, 3) and ``b`` (n, 3)."""
    a = np.asarray(a, float).reshape(-1, 3)
    b = np.asarray(b, float).reshape(-1, 3)
    return angular_distance_pairs(a[:, None, :], b[None, :, :])


def grid_doa_from_vectors(vs) -> GridDoa:
    """Average a set of direction vectors and snap the result to the grid."""
    return round_to_grid(cart_to_sph(mean_direction(vs)))
