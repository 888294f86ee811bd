"""
Foundational geometry: weighted sites, half-spaces, boxes and the power
distance formulas every other module is built on.

Half-spaces are stored as ``dot(normal, x) + offset >= 0`` with a unit
normal pointing into the kept side. The ``source`` tag of a half-space is a
site id (``>= 0``) for bisectors and ``-(face + 1)`` for the six faces of the
initial box, so a single integer array carries the adjacency information of
a cell.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from pwrgram.errors import CoincidentSites, NonFiniteInput


class PrecisionMode(str, Enum):
    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is PrecisionMode.SINGLE else np.float64)

    @property
    def coincidence_eps(self) -> float:
        return 1e-12 if self is PrecisionMode.SINGLE else 1e-24

    @property
    def plane_eps(self) -> float:
        return 1e-5 if self is PrecisionMode.SINGLE else 1e-9


def coincidence_tolerance(precision: PrecisionMode, diagonal: float) -> float:
    """Squared distance at or below which two positions count as one."""
    return precision.coincidence_eps * diagonal * diagonal


def plane_tolerance(precision: PrecisionMode, diagonal: float) -> float:
    """Band around a plane in which a vertex is classified as inside."""
    return precision.plane_eps * diagonal


# Source tags


def boundary_tag(face: int) -> int:
    return -(face + 1)


def is_boundary(tag: int) -> bool:
    return tag < 0


def boundary_face(tag: int) -> int:
    return -tag - 1


# Types


@dataclass(frozen=True)
class WeightedSite:
    position: tuple[float, float, float]
    weight: float
    id: int

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.position) or not math.isfinite(self.weight):
            raise NonFiniteInput(self.id)


@dataclass(frozen=True, eq=False)
class SiteArray:
    """Positions ``(N, 3)`` and weights ``(N,)``; the index of a row is the site id."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if self.weights.shape != (len(self.positions),):
            raise ValueError(
                f"weights must be ({len(self.positions)},), got {self.weights.shape}"
            )
        ok = np.isfinite(self.positions).all(axis=1) & np.isfinite(self.weights)
        if not ok.all():
            raise NonFiniteInput(int(np.flatnonzero(~ok)[0]))

    @classmethod
    def from_arrays(cls, positions, weights=None, dtype=np.float64) -> "SiteArray":
        pos = np.asarray(positions, dtype=dtype).reshape(-1, 3)
        if weights is None:
            w = np.zeros(len(pos), dtype=dtype)
        else:
            w = np.asarray(weights, dtype=dtype).reshape(-1)
        return cls(pos, w)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def dtype(self) -> np.dtype:
        return self.positions.dtype

    def site(self, i: int) -> WeightedSite:
        x, y, z, w = self.rows[i]
        return WeightedSite((x, y, z), w, int(i))

    @cached_property
    def rows(self) -> list[tuple[float, float, float, float]]:
        """Python-float ``(x, y, z, w)`` per site, for per-candidate hot loops."""
        table = np.column_stack([self.positions, self.weights]).astype(np.float64)
        return [tuple(r) for r in table.tolist()]

    def with_weights(self, weights) -> "SiteArray":
        return SiteArray(self.positions, np.asarray(weights, dtype=self.dtype).reshape(-1))

    def astype(self, dtype) -> "SiteArray":
        if np.dtype(dtype) == self.dtype:
            return self
        return SiteArray(self.positions.astype(dtype), self.weights.astype(dtype))


@dataclass(frozen=True, eq=False)
class HalfSpace:
    normal: np.ndarray
    offset: float
    source: int

    def evaluate(self, x) -> float:
        return float(np.dot(self.normal, x) + self.offset)

    @property
    def is_boundary(self) -> bool:
        return is_boundary(self.source)


@dataclass(frozen=True, eq=False)
class Aabb:
    min_corner: np.ndarray = field(default_factory=lambda: np.full(3, np.inf))
    max_corner: np.ndarray = field(default_factory=lambda: np.full(3, -np.inf))

    @classmethod
    def empty(cls) -> "Aabb":
        return cls()

    @classmethod
    def from_points(cls, points) -> "Aabb":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            return cls.empty()
        return cls(pts.min(axis=0), pts.max(axis=0))

    @classmethod
    def point(cls, x) -> "Aabb":
        p = np.asarray(x, dtype=np.float64)
        return cls(p.copy(), p.copy())

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.min_corner > self.max_corner))

    @property
    def diagonal(self) -> float:
        if self.is_empty:
            return 0.0
        return float(np.linalg.norm(self.max_corner - self.min_corner))

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(self.min_corner <= x) and np.all(x <= self.max_corner))

    def strictly_contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(self.min_corner < x) and np.all(x < self.max_corner))

    def corner(self, k: int) -> np.ndarray:
        """Corner for octant sign pattern ``k`` (bit a set -> max on axis a)."""
        return np.array([
            self.max_corner[a] if k >> a & 1 else self.min_corner[a] for a in range(3)
        ])

    def corners(self) -> np.ndarray:
        return np.array([self.corner(k) for k in range(8)])

    def expanded(self, amount: float) -> "Aabb":
        return Aabb(self.min_corner - amount, self.max_corner + amount)


# Formulas


def power_distance(x, s: WeightedSite) -> float:
    dx = x[0] - s.position[0]
    dy = x[1] - s.position[1]
    dz = x[2] - s.position[2]
    return dx * dx + dy * dy + dz * dz - s.weight


def bisector_distance(s_i: WeightedSite, s_j: WeightedSite, coincident_sq: float = 0.0) -> float:
    """Signed distance from ``s_i`` to the bisecting plane, toward ``s_j``."""
    dx = s_j.position[0] - s_i.position[0]
    dy = s_j.position[1] - s_i.position[1]
    dz = s_j.position[2] - s_i.position[2]
    sq = dx * dx + dy * dy + dz * dz
    if sq <= coincident_sq:
        raise CoincidentSites(s_i.id, s_j.id)
    return (sq + (s_i.weight - s_j.weight)) / (2.0 * math.sqrt(sq))


def bisector_plane(p_i, w_i: float, p_j, w_j: float, dtype=np.float64):
    """(unit normal, offset) of the bisector half-space kept by site i."""
    dtype = np.dtype(dtype)
    p_i = np.asarray(p_i, dtype=dtype)
    delta = np.asarray(p_j, dtype=dtype) - p_i
    sq = np.dot(delta, delta)
    length = np.sqrt(sq)
    u = delta / length
    d_ij = (sq + dtype.type(w_i - w_j)) / (dtype.type(2) * length)
    # kept side: dot(x - p_i, u) <= d_ij
    return -u, d_ij + np.dot(p_i, u)


def bisector(s_i: WeightedSite, s_j: WeightedSite, coincident_sq: float = 0.0,
             dtype=np.float64) -> HalfSpace:
    """Half-space of points at least as close (in power) to ``s_i`` as to ``s_j``.

    The normal is unit length and points from ``s_j`` toward ``s_i``. All
    arithmetic runs in ``dtype`` so single-precision builds see the same
    rounding as their clip evaluations.
    """
    delta = np.subtract(s_j.position, s_i.position, dtype=np.float64)
    if np.dot(delta, delta) <= coincident_sq:
        raise CoincidentSites(s_i.id, s_j.id)
    normal, offset = bisector_plane(s_i.position, s_i.weight, s_j.position, s_j.weight, dtype)
    return HalfSpace(normal, offset, s_j.id)


def aabb_min_distance(x, b: Aabb) -> float:
    gap = np.maximum(np.maximum(b.min_corner - x, 0.0), np.asarray(x) - b.max_corner)
    return float(math.sqrt(float(np.dot(gap, gap))))
