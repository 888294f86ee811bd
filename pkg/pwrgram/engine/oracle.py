"""
Brute-force reference diagrams and diagram diffing.

The reference clips every cell by every other site in id order, with no
culling and no traversal, so it shares only the clip kernel with the fast
builder. ``ownership_violations`` checks a diagram against direct power
distance minimization and shares nothing with either.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from pwrgram.engine.builder import (
    FLAG_DEGRADED,
    FLAG_EMPTY,
    CellGeometry,
    CellResult,
    PowerDiagram,
    assemble,
    build_box,
    cell_flags,
    clip_with_promotion,
    suppressed_duplicates,
)
from pwrgram.engine.bvh import TraversalStats, build_bvh
from pwrgram.engine.cell import ClipOutcome, candidate_distance, clip_by_site
from pwrgram.engine.geometry import Aabb, PrecisionMode, SiteArray, coincidence_tolerance, plane_tolerance
from pwrgram.errors import EmptyInput, SizeMismatch

log = logging.getLogger(__name__)


@dataclass
class DiagramDiff:
    missing_pairs: list[tuple[int, int]] = field(default_factory=list)
    extra_pairs: list[tuple[int, int]] = field(default_factory=list)
    mismatch_rate: float = 0.0
    asymmetric_pairs: int = 0

    @property
    def is_empty(self) -> bool:
        return not self.missing_pairs and not self.extra_pairs

    def as_dict(self) -> dict:
        return {
            "missing_pairs": len(self.missing_pairs),
            "extra_pairs": len(self.extra_pairs),
            "mismatch_rate": self.mismatch_rate,
            "asymmetric_pairs": self.asymmetric_pairs,
        }


def brute_force_cell(i: int, sites: SiteArray, box: Aabb,
                     precision: PrecisionMode = PrecisionMode.DOUBLE,
                     order=None, skip=None) -> CellResult:
    """Clip site ``i``'s cell by every other site, in ``order`` (ascending id by default).

    Tolerance promotion follows the fast builder, so a cell that cannot be
    clipped consistently comes back degraded instead of raising.
    """
    if skip is not None and skip[i]:
        return CellResult(i, [], FLAG_EMPTY, CellGeometry([], 0.0))
    rows = sites.rows
    ids = range(len(sites)) if order is None else order

    def clip_all(cell, stats):
        for j in ids:
            if j == i or (skip is not None and skip[j]):
                continue
            if candidate_distance(cell, *rows[j]) is None:
                continue
            stats.clip_calls += 1
            if clip_by_site(cell, sites, j) is ClipOutcome.EMPTIED:
                break

    stats = TraversalStats()
    cell, promotions, degraded = clip_with_promotion(i, sites.site(i), box, precision, clip_all, stats)
    return CellResult(i, cell.neighbors(), cell_flags(cell, degraded),
                      CellGeometry(cell.faces(), cell.volume()), stats, promotions)


def brute_force_diagram(sites: SiteArray, box: Aabb | None = None,
                        precision: PrecisionMode = PrecisionMode.DOUBLE,
                        box_margin: float = 0.01) -> PowerDiagram:
    n = len(sites)
    if n == 0:
        raise EmptyInput()
    sites = sites.astype(precision.dtype)
    if box is None:
        box = build_box(sites, box_margin)
    skip = suppressed_duplicates(sites, build_bvh(sites), coincidence_tolerance(precision, box.diagonal))
    results = [brute_force_cell(i, sites, box, precision, skip=skip) for i in range(n)]
    diagram = assemble(results, n)
    diagram.plane_eps = plane_tolerance(precision, box.diagonal)
    log.debug("oracle: %d cells, %d pairs", n, len(diagram.pairs()))
    return diagram


def diff(a: PowerDiagram, b: PowerDiagram) -> DiagramDiff:
    """Compare candidate ``b`` against reference ``a`` as undirected pair sets.

    A reference pair counts as present only when both candidate rows list
    it; any candidate entry outside the reference counts as extra, even if
    only one row lists it. A one-sided entry therefore always shows up in
    the mismatch rate.
    """
    if a.site_count != b.site_count:
        raise SizeMismatch(f"diagrams have {a.site_count} and {b.site_count} sites")
    ref = a.pairs()
    missing = sorted(ref - b.pairs())
    extra = sorted(b.claimed_pairs() - ref)
    return DiagramDiff(
        missing_pairs=missing,
        extra_pairs=extra,
        mismatch_rate=(len(missing) + len(extra)) / max(1, len(ref)),
        asymmetric_pairs=b.asymmetric_pairs(),
    )


def ownership_violations(diagram: PowerDiagram, sites: SiteArray, samples: int = 1000,
                         seed: int = 0, eps: float | None = None) -> int:
    """Sampled points whose power-nearest site is not the unique cell containing them.

    A cell contains ``x`` when ``x`` is on its side of the bisector with every
    listed neighbor. Points within ``eps`` of any listed bisector are skipped.
    """
    n = len(sites)
    if diagram.site_count != n:
        raise SizeMismatch(f"diagram has {diagram.site_count} sites, input has {n}")
    positions = sites.positions.astype(np.float64)
    weights = sites.weights.astype(np.float64)
    tight = Aabb.from_points(positions)
    if eps is None:
        eps = diagram.plane_eps or plane_tolerance(PrecisionMode.DOUBLE, tight.diagonal)

    rows = diagram.row_ids()
    cols = diagram.neighbors
    gap = np.linalg.norm(positions[rows] - positions[cols], axis=1)
    live = ~(diagram.flags & (FLAG_EMPTY | FLAG_DEGRADED)).astype(bool)

    rng = np.random.default_rng(seed)
    points = tight.min_corner + (tight.max_corner - tight.min_corner) * rng.random((samples, 3))
    violations = 0
    for x in points:
        delta = positions - x
        power = (delta * delta).sum(axis=1) - weights
        # signed distance of x from each bisector, positive on the row's side
        side = (power[cols] - power[rows]) / (2.0 * gap)
        if len(side) and np.abs(side).min() <= eps:
            continue
        outside = np.zeros(n, dtype=bool)
        outside[rows[side < 0]] = True
        inside = np.flatnonzero(live & ~outside)
        owner = int(np.argmin(power))
        if len(inside) != 1 or int(inside[0]) != owner:
            violations += 1
    if violations:
        log.warning("ownership check: %d of %d samples violated", violations, samples)
    return violations


def plane_angle(sites: SiteArray, i: int, j: int, k: int) -> float:
    """Angle in radians between the bisectors (i, j) and (i, k); small for near-coincident planes."""
    p = sites.positions.astype(np.float64)
    u = p[j] - p[i]
    v = p[k] - p[i]
    c = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.acos(max(-1.0, min(1.0, c)))
