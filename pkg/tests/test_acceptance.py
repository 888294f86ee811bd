"""End-to-end acceptance runs at desk scale. Deselected by default; run with ``-m slow``."""

import statistics
import time

import pytest

from conftest import random_sites
from pwrgram.bench import sweep_weights
from pwrgram.engine.builder import BuildConfig, Culling, Traversal, build_diagram
from pwrgram.engine.oracle import brute_force_diagram, diff, ownership_violations
from pwrgram.formats import adjacency_csr_bytes

pytestmark = pytest.mark.slow

DISTRIBUTIONS = [
    ("white_noise", {}),
    ("clustered", {"cluster_count": 5}),
    ("clustered", {"cluster_count": 10}),
    ("density_gradient", {}),
]


@pytest.mark.parametrize("kind,extra", DISTRIBUTIONS)
@pytest.mark.parametrize("n", [50, 500, 2000])
@pytest.mark.parametrize("ratio", [0.0, 1e-3, 1e-1])
def test_matches_reference(kind, extra, n, ratio):
    for seed in range(3):
        sites = random_sites(n, seed=seed, weight_ratio=ratio, kind=kind, **extra)
        result = diff(brute_force_diagram(sites), build_diagram(sites, BuildConfig(thread_count="auto")))
        assert result.is_empty, (seed, result.as_dict())


@pytest.mark.parametrize("kind,extra", DISTRIBUTIONS)
def test_single_precision_mismatch_bound(kind, extra):
    sites = random_sites(2000, seed=0, weight_ratio=1e-3, kind=kind, **extra)
    config = BuildConfig(precision="single", thread_count="auto")
    result = diff(brute_force_diagram(sites, precision=config.precision), build_diagram(sites, config))
    assert result.mismatch_rate <= 0.002


@pytest.mark.parametrize("kind,extra", DISTRIBUTIONS)
def test_ownership(kind, extra):
    sites = random_sites(2000, seed=1, weight_ratio=1e-3, kind=kind, **extra)
    d = build_diagram(sites, BuildConfig(thread_count="auto"))
    assert ownership_violations(d, sites, samples=1000) == 0


def test_ablation_direction():
    """Best-first and directional culling never clip more, on 5k clustered sites.

    Reduced from 100k; the full-size matrix runs through ``pwrgram bench``.
    """
    clip_calls = {}
    outputs = set()
    for culling in Culling:
        for traversal in Traversal:
            counts = []
            for seed in range(3):
                sites = random_sites(5000, seed=seed, kind="clustered", cluster_count=10)
                d = build_diagram(sites, BuildConfig(culling=culling, traversal=traversal,
                                                     thread_count="auto"))
                counts.append(d.stats.traversal.clip_calls)
                if seed == 0:
                    outputs.add(adjacency_csr_bytes(d))
            clip_calls[culling, traversal] = statistics.median(counts)
    assert len(outputs) == 1
    for culling in Culling:
        assert clip_calls[culling, Traversal.BEST_FIRST] <= clip_calls[culling, Traversal.DEPTH_FIRST]
    for traversal in Traversal:
        assert clip_calls[Culling.DIRECTIONAL, traversal] <= clip_calls[Culling.ISOTROPIC, traversal]


def test_empty_ratio_sweep():
    """Empty ratio grows monotonically with weight spread, on 5k sites.

    Reduced from 100k; the full-size sweep runs through ``pwrgram sweep-weights``.
    """
    sites = random_sites(5000, seed=0)
    rows = sweep_weights(sites, seeds=(0, 1, 2), config=BuildConfig(thread_count="auto"))
    empty = [r.empty_ratio for r in rows]
    assert empty[0] == 0
    assert all(a <= b for a, b in zip(empty, empty[1:]))


def test_scaling_is_near_linear():
    """10x the sites costs at most 20x the time, between 5k and 50k sites.

    Reduced from the 100k to 1M range; full-size timings come from ``pwrgram bench``.
    """
    config = BuildConfig(thread_count="auto")
    seconds = []
    for n in (5000, 50000):
        sites = random_sites(n, seed=0)
        t0 = time.perf_counter()
        build_diagram(sites, config)
        seconds.append(time.perf_counter() - t0)
    assert seconds[1] <= 20 * seconds[0]


def test_canonical_csr():
    sites = random_sites(2000, seed=4, weight_ratio=1e-3)
    a = build_diagram(sites, BuildConfig(thread_count=1))
    b = build_diagram(sites, BuildConfig(thread_count="auto", warm_start=True))
    assert adjacency_csr_bytes(a) == adjacency_csr_bytes(b)
