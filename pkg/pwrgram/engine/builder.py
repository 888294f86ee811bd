"""
Full-diagram construction.

Every cell is built independently: the site's cell starts as the global box,
is optionally pre-clipped by its nearest neighbors, then clipped by whatever
the BVH traversal cannot cull. Cells are distributed over worker processes
and the results are assembled into a canonical CSR adjacency.
"""

import logging
import os
import time
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from pwrgram.engine.bvh import PowerBvh, TraversalStats, best_first_clip, build_bvh, knn_warm_start, sites_within
from pwrgram.engine.cell import ClipOutcome, ConvexCell, clip_by_site, init_cell
from pwrgram.engine.geometry import Aabb, PrecisionMode, SiteArray, coincidence_tolerance, plane_tolerance
from pwrgram.errors import BuildTimeout, EmptyInput, TopologyCorruption

log = logging.getLogger(__name__)

PWRGRAM_THREADS = os.environ.get("PWRGRAM_THREADS")

FLAG_EMPTY = 1
FLAG_BOUNDARY = 2
FLAG_DEGRADED = 4

MAX_PROMOTIONS = 2
PROMOTION_FACTOR = 10.0
MIN_BOX_MARGIN = 1e-6


class Culling(str, Enum):
    DIRECTIONAL = "directional"
    ISOTROPIC = "isotropic"


class Traversal(str, Enum):
    BEST_FIRST = "best_first"
    DEPTH_FIRST = "depth_first"


@dataclass(frozen=True)
class BuildConfig:
    precision: PrecisionMode = PrecisionMode.DOUBLE
    leaf_size: int = 10
    warm_start: bool = False
    warm_start_k: int = 8
    box_margin: float = 0.01
    culling: Culling = Culling.DIRECTIONAL
    traversal: Traversal = Traversal.BEST_FIRST
    keep_geometry: bool = False
    thread_count: int | str = 1

    def __post_init__(self):
        object.__setattr__(self, "precision", PrecisionMode(self.precision))
        object.__setattr__(self, "culling", Culling(self.culling))
        object.__setattr__(self, "traversal", Traversal(self.traversal))
        if self.leaf_size < 1:
            raise ValueError(f"leaf_size must be >= 1, got {self.leaf_size}")
        if self.warm_start_k < 1:
            raise ValueError(f"warm_start_k must be >= 1, got {self.warm_start_k}")
        if not self.box_margin >= 0:
            raise ValueError(f"box_margin must be >= 0, got {self.box_margin}")
        _parse_threads(self.thread_count)

    @classmethod
    def from_args(cls, args) -> "BuildConfig":
        return cls(
            precision=args.precision,
            leaf_size=args.leaf_size,
            warm_start=args.warm_start,
            warm_start_k=args.warm_start_k,
            box_margin=args.box_margin,
            culling=args.culling,
            traversal=args.traversal,
            keep_geometry=getattr(args, "keep_geometry", False),
            thread_count=args.threads,
        )

    def resolved_threads(self) -> int:
        """Worker count after applying PWRGRAM_THREADS and resolving ``auto``."""
        value = PWRGRAM_THREADS if PWRGRAM_THREADS else self.thread_count
        n = _parse_threads(value)
        return n if n else (os.cpu_count() or 1)

    def echo(self) -> dict:
        return {
            "precision": self.precision.value,
            "leaf_size": self.leaf_size,
            "warm_start": self.warm_start,
            "warm_start_k": self.warm_start_k,
            "box_margin": self.box_margin,
            "culling": self.culling.value,
            "traversal": self.traversal.value,
            "keep_geometry": self.keep_geometry,
            "thread_count": self.thread_count,
        }

    def with_changes(self, **changes) -> "BuildConfig":
        return replace(self, **changes)


def _parse_threads(value) -> int:
    """0 means auto."""
    if isinstance(value, str):
        if value in ("auto", "max"):
            return 0
        value = int(value)
    if value < 1:
        raise ValueError(f"thread_count must be >= 1 or 'auto', got {value}")
    return int(value)


@dataclass
class CellGeometry:
    faces: list[tuple[int, np.ndarray]]
    volume: float


@dataclass
class CellResult:
    id: int
    neighbors: list[int]
    flags: int
    geometry: CellGeometry | None = None
    stats: TraversalStats = field(default_factory=TraversalStats)
    promotions: int = 0


@dataclass
class BuildStats:
    traversal: TraversalStats = field(default_factory=TraversalStats)
    seconds: float = 0.0
    index_seconds: float = 0.0
    cells_seconds: float = 0.0
    empty_cells: int = 0
    degraded_cells: int = 0
    suppressed_duplicates: int = 0
    promotions: int = 0
    thread_count: int = 1

    def as_dict(self) -> dict:
        out = asdict(self)
        total = self.seconds or 1.0
        out["index_fraction"] = self.index_seconds / total
        out["cells_fraction"] = self.cells_seconds / total
        return out


@dataclass
class PowerDiagram:
    site_count: int
    offsets: np.ndarray
    neighbors: np.ndarray
    flags: np.ndarray
    geometry: list[CellGeometry | None] | None = None
    stats: BuildStats | None = None
    plane_eps: float = 0.0

    def neighbors_of(self, i: int) -> np.ndarray:
        return self.neighbors[self.offsets[i]:self.offsets[i + 1]]

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.site_count), np.diff(self.offsets))

    def directed_pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.row_ids().tolist(), self.neighbors.tolist()))

    def pairs(self) -> set[tuple[int, int]]:
        """Undirected pairs ``(i, j)``, ``i < j``, listed in both rows."""
        directed = self.directed_pairs()
        return {(i, j) for i, j in directed if i < j and (j, i) in directed}

    def claimed_pairs(self) -> set[tuple[int, int]]:
        """Undirected pairs listed in at least one of the two rows."""
        return {(min(i, j), max(i, j)) for i, j in self.directed_pairs()}

    def asymmetric_pairs(self) -> int:
        """Directed entries whose reverse entry is absent."""
        directed = self.directed_pairs()
        return sum(1 for i, j in directed if (j, i) not in directed)

    def is_empty(self, i: int) -> bool:
        return bool(self.flags[i] & FLAG_EMPTY)

    def is_boundary(self, i: int) -> bool:
        return bool(self.flags[i] & FLAG_BOUNDARY)

    def is_degraded(self, i: int) -> bool:
        return bool(self.flags[i] & FLAG_DEGRADED)


def empty_ratio(d: PowerDiagram) -> float:
    if d.site_count == 0:
        return 0.0
    return float((d.flags & FLAG_EMPTY).astype(bool).sum()) / d.site_count


# Setup


def global_box(sites: SiteArray, box_margin: float = 0.01) -> Aabb:
    """Site AABB grown by ``box_margin`` times its diagonal; flat axes get the same absolute pad."""
    if len(sites) == 0:
        raise EmptyInput()
    tight = Aabb.from_points(sites.positions)
    diagonal = tight.diagonal
    pad = box_margin * diagonal
    lo = tight.min_corner - pad
    hi = tight.max_corner + pad
    flat = hi - lo <= 0
    if flat.any():
        # only reachable with a zero pad; non-flat axes stay exact
        fill = max(diagonal, 1.0) * MIN_BOX_MARGIN
        lo = np.where(flat, lo - fill, lo)
        hi = np.where(flat, hi + fill, hi)
    return Aabb(lo, hi)


def build_box(sites: SiteArray, box_margin: float = 0.01) -> Aabb:
    """The initial box every cell starts from; sites always lie strictly inside."""
    return global_box(sites, max(box_margin, MIN_BOX_MARGIN))


def suppressed_duplicates(sites: SiteArray, bvh: PowerBvh, coincident_sq: float) -> np.ndarray:
    """Mask of sites that share a position with a dominating site.

    Within a coincident group the largest weight owns the cell; equal weights
    go to the lowest id. Everyone else in the group is suppressed.
    """
    n = len(sites)
    mask = np.zeros(n, dtype=bool)
    weights = sites.weights.tolist()
    seen = np.zeros(n, dtype=bool)
    for i in range(n):
        if seen[i]:
            continue
        group = sites_within(bvh, sites, sites.positions[i], coincident_sq)
        if len(group) < 2:
            continue
        owner = min(group, key=lambda j: (-weights[j], j))
        for j in group:
            seen[j] = True
            if j != owner:
                mask[j] = True
    if mask.any():
        log.info("suppressed %d coincident duplicate sites", int(mask.sum()))
    return mask


# Per-cell pipeline


def clip_with_promotion(i: int, site, box: Aabb, precision: PrecisionMode, clip,
                        stats: TraversalStats) -> tuple[ConvexCell, int, bool]:
    """Run ``clip(cell, stats)`` on a fresh cell, retrying with a looser tolerance.

    A ``TopologyCorruption`` restarts the cell with the plane tolerance
    multiplied by ``PROMOTION_FACTOR``, at most ``MAX_PROMOTIONS`` times.
    After that the cell keeps its last consistent state and is reported as
    degraded. Returns ``(cell, promotions, degraded)``.
    """
    eps = plane_tolerance(precision, box.diagonal)
    promotions = 0
    while True:
        cell = init_cell(site, box, eps, precision)
        try:
            clip(cell, stats)
            return cell, promotions, False
        except TopologyCorruption as exc:
            if promotions == MAX_PROMOTIONS:
                log.warning("cell %d degraded after %d promotions: %s", i, promotions, exc)
                return cell, promotions, True
            promotions += 1
            eps *= PROMOTION_FACTOR
            log.warning("cell %d: promoting plane tolerance to %g (%s)", i, eps, exc)


def cell_flags(cell: ConvexCell, degraded: bool) -> int:
    flags = 0
    if cell.is_empty:
        flags |= FLAG_EMPTY
    if cell.touches_boundary():
        flags |= FLAG_BOUNDARY
    if degraded:
        flags |= FLAG_DEGRADED
    return flags


def _clip_cell(cell: ConvexCell, i: int, sites: SiteArray, bvh: PowerBvh,
               config: BuildConfig, skip, stats: TraversalStats) -> None:
    if config.warm_start:
        for j in knn_warm_start(bvh, sites, i, config.warm_start_k):
            if skip is not None and skip[j]:
                continue
            outcome = clip_by_site(cell, sites, j)
            stats.clip_calls += 1
            if outcome is ClipOutcome.UNCHANGED:
                stats.clip_unchanged += 1
            elif outcome is ClipOutcome.EMPTIED:
                return
    best_first_clip(bvh, sites, cell, config.traversal, config.culling, skip, stats=stats)


def build_cell(i: int, sites: SiteArray, bvh: PowerBvh, box: Aabb,
               config: BuildConfig, skip=None) -> CellResult:
    if skip is not None and skip[i]:
        geometry = CellGeometry([], 0.0) if config.keep_geometry else None
        return CellResult(i, [], FLAG_EMPTY, geometry)

    stats = TraversalStats()
    cell, promotions, degraded = clip_with_promotion(
        i, sites.site(i), box, config.precision,
        lambda c, s: _clip_cell(c, i, sites, bvh, config, skip, s), stats)

    geometry = None
    if config.keep_geometry:
        geometry = CellGeometry(cell.faces(), cell.volume())
    return CellResult(i, cell.neighbors(), cell_flags(cell, degraded), geometry, stats, promotions)


# Workers

_WORKER = None


def _init_worker(sites, bvh, box, config, skip):
    global _WORKER
    _WORKER = (sites, bvh, box, config, skip)


def _build_chunk(ids: list[int], deadline: float | None) -> list[CellResult] | None:
    """None when the deadline passed before the chunk finished."""
    sites, bvh, box, config, skip = _WORKER
    try:
        return _run_cells(ids, sites, bvh, box, config, skip, deadline)
    except BuildTimeout:
        return None


def _run_cells(ids, sites, bvh, box, config, skip, deadline) -> list[CellResult]:
    out = []
    for i in ids:
        if deadline is not None and time.time() > deadline:
            raise BuildTimeout(0.0)
        out.append(build_cell(i, sites, bvh, box, config, skip))
    return out


def _chunks(n: int, threads: int) -> list[list[int]]:
    count = max(1, min(n, threads * 8))
    return [c.tolist() for c in np.array_split(np.arange(n), count) if len(c)]


def _run_parallel(sites, bvh, box, config, skip, threads, deadline, timeout):
    n = len(sites)
    results = []
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker,
                             initargs=(sites, bvh, box, config, skip)) as pool:
        futures = [pool.submit(_build_chunk, ids, deadline) for ids in _chunks(n, threads)]
        remaining = None if deadline is None else max(0.0, deadline - time.time())
        done, pending = wait(futures, timeout=remaining, return_when=FIRST_EXCEPTION)
        for f in done:
            if f.exception() is not None:
                pool.shutdown(wait=True, cancel_futures=True)
                raise f.exception()
        if pending:
            for f in pending:
                f.cancel()
            pool.shutdown(wait=True, cancel_futures=True)
            raise BuildTimeout(timeout)
        for f in futures:
            chunk = f.result()
            if chunk is None:
                raise BuildTimeout(timeout)
            results.extend(chunk)
    return results


def build_diagram(sites: SiteArray, config: BuildConfig = BuildConfig(),
                  timeout: float | None = None) -> PowerDiagram:
    """Build every cell and assemble the adjacency.

    Output does not depend on the worker count or completion order. With a
    ``timeout`` each worker checks the deadline before every cell and the
    parent stops waiting once it passes; either way ``BuildTimeout`` is raised.
    """
    n = len(sites)
    if n == 0:
        raise EmptyInput()
    t0 = time.perf_counter()
    deadline = None if timeout is None else time.time() + timeout

    sites = sites.astype(config.precision.dtype)
    box = build_box(sites, config.box_margin)
    bvh = build_bvh(sites, config.leaf_size)
    skip = suppressed_duplicates(sites, bvh, coincidence_tolerance(config.precision, box.diagonal))
    t_index = time.perf_counter()

    threads = min(config.resolved_threads(), n)
    try:
        if threads == 1:
            results = _run_cells(range(n), sites, bvh, box, config, skip, deadline)
        else:
            results = _run_parallel(sites, bvh, box, config, skip, threads, deadline, timeout)
    except BuildTimeout:
        raise BuildTimeout(timeout) from None
    results.sort(key=lambda r: r.id)
    t_cells = time.perf_counter()

    diagram = assemble(results, n)
    diagram.plane_eps = plane_tolerance(config.precision, box.diagonal)
    stats = BuildStats(
        seconds=t_cells - t0,
        index_seconds=t_index - t0,
        cells_seconds=t_cells - t_index,
        suppressed_duplicates=int(skip.sum()),
        thread_count=threads,
    )
    for r in results:
        stats.traversal.add(r.stats)
        stats.promotions += r.promotions
    stats.empty_cells = int((diagram.flags & FLAG_EMPTY).astype(bool).sum())
    stats.degraded_cells = int((diagram.flags & FLAG_DEGRADED).astype(bool).sum())
    diagram.stats = stats
    log.info("built %d cells in %.3fs (%d empty, %d degraded, %d workers)",
             n, stats.seconds, stats.empty_cells, stats.degraded_cells, threads)
    return diagram


def assemble(results: list[CellResult], n: int) -> PowerDiagram:
    """CSR from per-cell results ordered by id; rows ascending."""
    offsets = np.zeros(n + 1, dtype=np.int64)
    flags = np.zeros(n, dtype=np.uint8)
    rows = []
    for r in results:
        offsets[r.id + 1] = len(r.neighbors)
        flags[r.id] = r.flags
        rows.append(np.asarray(sorted(r.neighbors), dtype=np.int64))
    np.cumsum(offsets, out=offsets)
    neighbors = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    geometry = None
    if results and results[0].geometry is not None:
        geometry = [r.geometry for r in results]
    return PowerDiagram(n, offsets, neighbors, flags, geometry)
