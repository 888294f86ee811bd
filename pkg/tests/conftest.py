import itertools

import numpy as np
import pytest

from pwrgram import models
from pwrgram.datasets import GeneratorSpec, generate, sample_weights
from pwrgram.engine.geometry import Aabb, SiteArray


def lattice(n: int = 3, spacing: float = 1.0) -> SiteArray:
    """n^3 grid sites; id = (x * n + y) * n + z."""
    pts = [(x * spacing, y * spacing, z * spacing)
           for x, y, z in itertools.product(range(n), repeat=3)]
    return SiteArray.from_arrays(pts)


def random_sites(n: int, seed: int = 0, weight_ratio: float = 0.0, kind: str = "white_noise",
                 **spec) -> SiteArray:
    sites = generate(GeneratorSpec(kind=kind, n=n, seed=seed, **spec))
    if weight_ratio:
        sites = sites.with_weights(sample_weights(sites, weight_ratio, seed + 1))
    return sites


def cube(lo: float = -1.0, hi: float = 1.0) -> Aabb:
    return Aabb(np.full(3, lo), np.full(3, hi))


@pytest.fixture
def lattice3() -> SiteArray:
    return lattice(3)


@pytest.fixture
def noise200() -> SiteArray:
    return random_sites(200, seed=3, weight_ratio=0.1)


@pytest.fixture
def bench_db(tmp_path, monkeypatch):
    path = tmp_path / "bench.db"
    monkeypatch.setattr(models, "PWRGRAM_DB_PATH", str(path))
    models.reset_engine()
    yield path
    models.reset_engine()
