"""
Synthetic site distributions and weight sampling.

All randomness comes from numpy's Philox counter-based generator keyed by
``seed | (stream << 64)``, one stream per concern (positions, cluster
centers, weights). Uniforms are ``Generator.random()`` doubles; normals come
from the Box-Muller transform of those uniforms, so the sequences are fixed
by the documented scheme rather than by numpy's normal sampler.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from pwrgram.engine.bvh import build_bvh, knn_warm_start
from pwrgram.engine.geometry import Aabb, SiteArray
from pwrgram.errors import TooFewSites

log = logging.getLogger(__name__)

STREAM_POSITIONS = 0
STREAM_CENTERS = 1
STREAM_WEIGHTS = 2

DEFAULT_DOMAIN = (-10.0, 10.0)


class DatasetKind(str, Enum):
    WHITE_NOISE = "white_noise"
    CLUSTERED = "clustered"
    DENSITY_GRADIENT = "density_gradient"


def _default_domain() -> Aabb:
    lo, hi = DEFAULT_DOMAIN
    return Aabb(np.full(3, lo), np.full(3, hi))


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    kind: DatasetKind
    n: int
    domain: Aabb = field(default_factory=_default_domain)
    cluster_count: int = 10
    cluster_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DatasetKind(self.kind))
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.kind is DatasetKind.CLUSTERED and self.cluster_count < 1:
            raise ValueError(f"cluster_count must be >= 1, got {self.cluster_count}")
        if not self.cluster_sigma > 0:
            raise ValueError(f"cluster_sigma must be > 0, got {self.cluster_sigma}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")


def stream(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed | (stream_id << 64)))


def uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.random(shape)


def normals(rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` standard normals, pairs drawn as (u1, u2) with u1 in (0, 1]."""
    pairs = (count + 1) // 2
    u = rng.random((pairs, 2))
    r = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
    theta = 2.0 * math.pi * u[:, 1]
    z = np.column_stack([r * np.cos(theta), r * np.sin(theta)]).reshape(-1)
    return z[:count]


def _scale(domain: Aabb, u: np.ndarray) -> np.ndarray:
    return domain.min_corner + (domain.max_corner - domain.min_corner) * u


def gen_white_noise(spec: GeneratorSpec) -> SiteArray:
    u = uniforms(stream(spec.seed, STREAM_POSITIONS), (spec.n, 3))
    return SiteArray.from_arrays(_scale(spec.domain, u))


def cluster_sizes(n: int, k: int) -> list[int]:
    """Even split; the first ``n mod k`` clusters take one extra point."""
    base, extra = divmod(n, k)
    return [base + (1 if c < extra else 0) for c in range(k)]


def gen_clustered(spec: GeneratorSpec) -> SiteArray:
    k = spec.cluster_count
    centers = _scale(spec.domain, uniforms(stream(spec.seed, STREAM_CENTERS), (k, 3)))
    labels = np.arange(spec.n) % k
    z = normals(stream(spec.seed, STREAM_POSITIONS), spec.n * 3).reshape(spec.n, 3)
    points = centers[labels] + spec.cluster_sigma * z
    points = np.clip(points, spec.domain.min_corner, spec.domain.max_corner)
    return SiteArray.from_arrays(points)


def gradient_transform(u, a: float, b: float):
    """Inverse CDF of a density rising linearly from a to b."""
    return a + (b - a) * np.sqrt(u)


def gen_density_gradient(spec: GeneratorSpec) -> SiteArray:
    u = uniforms(stream(spec.seed, STREAM_POSITIONS), (spec.n, 3))
    points = _scale(spec.domain, u)
    points[:, 0] = gradient_transform(u[:, 0], spec.domain.min_corner[0], spec.domain.max_corner[0])
    return SiteArray.from_arrays(points)


GENERATORS = {
    DatasetKind.WHITE_NOISE: gen_white_noise,
    DatasetKind.CLUSTERED: gen_clustered,
    DatasetKind.DENSITY_GRADIENT: gen_density_gradient,
}


def generate(spec: GeneratorSpec) -> SiteArray:
    sites = GENERATORS[spec.kind](spec)
    log.debug("generated %d %s sites (seed %d)", spec.n, spec.kind.value, spec.seed)
    return sites


def nearest_distances(sites: SiteArray) -> np.ndarray:
    n = len(sites)
    if n < 2:
        raise TooFewSites(f"nearest-neighbor distance needs at least 2 sites, got {n}")
    bvh = build_bvh(sites)
    positions = sites.positions.astype(np.float64)
    nearest = np.array([knn_warm_start(bvh, sites, i, 1)[0] for i in range(n)])
    return np.linalg.norm(positions[nearest] - positions, axis=1)


def median_nn_distance(sites: SiteArray) -> float:
    """Lower median of each site's distance to its nearest other site."""
    d = np.sort(nearest_distances(sites))
    return float(d[(len(d) - 1) // 2])


def sample_weights(sites: SiteArray, weight_ratio: float, seed: int,
                   d_nn: float | None = None) -> np.ndarray:
    """Normal weights with mean 0 and std ``weight_ratio * d_nn**2 / 3``."""
    if weight_ratio < 0:
        raise ValueError(f"weight_ratio must be >= 0, got {weight_ratio}")
    n = len(sites)
    if weight_ratio == 0:
        return np.zeros(n, dtype=np.float64)
    if d_nn is None:
        d_nn = median_nn_distance(sites)
    std = weight_ratio * d_nn * d_nn / 3.0
    return std * normals(stream(seed, STREAM_WEIGHTS), n)
