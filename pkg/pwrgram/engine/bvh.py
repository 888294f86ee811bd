"""
Power-augmented bounding volume hierarchy over the sites.

Nodes live in flat arrays (bounds, subtree max weight, children or leaf
range). The same tree answers KNN warm-start queries and drives the
best-first neighbor traversal that clips a cell by every site that can
still reach it.
"""

import heapq
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from pwrgram.engine.cell import ClipOutcome, ConvexCell, candidate_distance, clip_by_site
from pwrgram.engine.geometry import Aabb, SiteArray
from pwrgram.errors import EmptyInput

log = logging.getLogger(__name__)

DEFAULT_LEAF_SIZE = 10

BEST_FIRST = "best_first"
DEPTH_FIRST = "depth_first"
DIRECTIONAL = "directional"
ISOTROPIC = "isotropic"


@dataclass
class TraversalStats:
    nodes_visited: int = 0
    leaves_visited: int = 0
    clip_calls: int = 0
    clip_unchanged: int = 0
    stack_high_water: int = 0

    def add(self, other: "TraversalStats") -> "TraversalStats":
        self.nodes_visited += other.nodes_visited
        self.leaves_visited += other.leaves_visited
        self.clip_calls += other.clip_calls
        self.clip_unchanged += other.clip_unchanged
        self.stack_high_water = max(self.stack_high_water, other.stack_high_water)
        return self

    def as_dict(self) -> dict:
        return asdict(self)


class PowerBvh:
    def __init__(self, lo: np.ndarray, hi: np.ndarray, max_weight: np.ndarray,
                 left: np.ndarray, right: np.ndarray, first: np.ndarray,
                 count: np.ndarray, prim_order: np.ndarray, leaf_size: int):
        self.lo = lo
        self.hi = hi
        self.max_weight = max_weight
        self.left = left
        self.right = right
        self.first = first
        self.count = count
        self.prim_order = prim_order
        self.leaf_size = leaf_size
        # python-side copies for the per-node hot loop
        self._lo = [tuple(r) for r in lo.tolist()]
        self._hi = [tuple(r) for r in hi.tolist()]
        self._wmax = max_weight.tolist()
        self._left = left.tolist()
        self._right = right.tolist()

    root = 0

    def __len__(self) -> int:
        return len(self.left)

    def is_leaf(self, node: int) -> bool:
        return self._left[node] < 0

    def bounds(self, node: int) -> Aabb:
        return Aabb(self.lo[node].copy(), self.hi[node].copy())

    def members(self, node: int) -> np.ndarray:
        s = int(self.first[node])
        return self.prim_order[s:s + int(self.count[node])]

    def subtree_members(self, node: int) -> np.ndarray:
        stack, out = [node], []
        while stack:
            n = stack.pop()
            if self.is_leaf(n):
                out.append(self.members(n))
            else:
                stack.extend((self._left[n], self._right[n]))
        return np.concatenate(out)


def build_bvh(sites: SiteArray, leaf_size: int = DEFAULT_LEAF_SIZE) -> PowerBvh:
    """Median split over the longest axis; ties in coordinate go to the lower id."""
    n = len(sites)
    if n == 0:
        raise EmptyInput()
    if leaf_size < 1:
        raise ValueError(f"leaf_size must be >= 1, got {leaf_size}")
    positions = sites.positions.astype(np.float64)
    weights = sites.weights.astype(np.float64)
    order = np.arange(n, dtype=np.int64)

    lo, hi, wmax, left, right, first, count = [], [], [], [], [], [], []

    def alloc() -> int:
        for col in (lo, hi):
            col.append(None)
        for col in (wmax, left, right, first, count):
            col.append(0)
        return len(left) - 1

    work = [(alloc(), 0, n)]
    while work:
        node, s, e = work.pop()
        ids = order[s:e]
        pts = positions[ids]
        lo[node] = pts.min(axis=0)
        hi[node] = pts.max(axis=0)
        wmax[node] = weights[ids].max()
        if e - s <= leaf_size:
            left[node] = right[node] = -1
            first[node] = s
            count[node] = e - s
            continue
        axis = int(np.argmax(hi[node] - lo[node]))
        order[s:e] = ids[np.lexsort((ids, pts[:, axis]))]
        mid = s + (e - s) // 2
        l_node, r_node = alloc(), alloc()
        left[node], right[node] = l_node, r_node
        first[node], count[node] = s, e - s
        work.append((r_node, mid, e))
        work.append((l_node, s, mid))

    bvh = PowerBvh(
        np.array(lo), np.array(hi), np.array(wmax, dtype=np.float64),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(first, dtype=np.int64), np.array(count, dtype=np.int64),
        order, leaf_size,
    )
    log.debug("bvh: %d sites, %d nodes, leaf_size %d", n, len(bvh), leaf_size)
    return bvh


# Point queries


def _node_sq_dist(bvh: PowerBvh, node: int, p) -> float:
    lo, hi = bvh._lo[node], bvh._hi[node]
    sq = 0.0
    for a in range(3):
        if p[a] < lo[a]:
            g = lo[a] - p[a]
        elif p[a] > hi[a]:
            g = p[a] - hi[a]
        else:
            continue
        sq += g * g
    return sq


def knn_warm_start(bvh: PowerBvh, sites: SiteArray, q: int, k: int = 8) -> list[int]:
    """The ``k`` sites nearest to site ``q`` (excluding it), nearest first, ties to lower id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    p = sites.positions[q].astype(np.float64)
    pt = p.tolist()
    positions = sites.positions
    best: list[tuple[float, int]] = []  # max-heap on (d2, id) via negation
    heap = [(_node_sq_dist(bvh, bvh.root, pt), bvh.root)]
    while heap:
        d2, node = heapq.heappop(heap)
        if len(best) == k and d2 > -best[0][0]:
            break
        if not bvh.is_leaf(node):
            for child in (bvh._left[node], bvh._right[node]):
                heapq.heappush(heap, (_node_sq_dist(bvh, child, pt), child))
            continue
        ids = bvh.members(node)
        delta = positions[ids].astype(np.float64) - p
        for j, dj in zip(ids.tolist(), (delta * delta).sum(axis=1).tolist()):
            if j == q:
                continue
            if len(best) < k:
                heapq.heappush(best, (-dj, -j))
            elif (dj, j) < (-best[0][0], -best[0][1]):
                heapq.heapreplace(best, (-dj, -j))
    return [-j for _, j in sorted(best, key=lambda t: (-t[0], -t[1]))]


def sites_within(bvh: PowerBvh, sites: SiteArray, point, radius_sq: float) -> list[int]:
    """Ids with squared distance to ``point`` at most ``radius_sq``, ascending."""
    p = np.asarray(point, dtype=np.float64)
    pt = p.tolist()
    out = []
    stack = [bvh.root]
    while stack:
        node = stack.pop()
        if _node_sq_dist(bvh, node, pt) > radius_sq:
            continue
        if not bvh.is_leaf(node):
            stack.extend((bvh._left[node], bvh._right[node]))
            continue
        ids = bvh.members(node)
        delta = sites.positions[ids].astype(np.float64) - p
        out.extend(ids[(delta * delta).sum(axis=1) <= radius_sq].tolist())
    return sorted(out)


# Culling


def _radius(cell: ConvexCell, lo, hi, isotropic: bool) -> float:
    return cell.isotropic_radius() if isotropic else cell.radius_toward(lo, hi)


def _lower_bound(cell: ConvexCell, lo, hi, w_max: float) -> float | None:
    """Lower bound on the bisector distance to any site in [lo, hi]; None if the site is inside."""
    s = (cell._sx, cell._sy, cell._sz)
    sq = 0.0
    for a in range(3):
        if s[a] < lo[a]:
            g = lo[a] - s[a]
        elif s[a] > hi[a]:
            g = s[a] - hi[a]
        else:
            continue
        sq += g * g
    if sq == 0.0:
        return None
    d = math.sqrt(sq)
    w_i = cell.site.weight
    if w_i <= w_max:
        return d / 2.0 + (w_i - w_max) / (2.0 * d)
    return d / 2.0


def node_culled(cell: ConvexCell, bounds: Aabb, node_max_weight: float,
                isotropic: bool = False) -> bool:
    lb = _lower_bound(cell, bounds.min_corner, bounds.max_corner, node_max_weight)
    if lb is None:
        return False
    return lb > _radius(cell, bounds.min_corner, bounds.max_corner, isotropic)


def _node_key(cell: ConvexCell, bvh: PowerBvh, node: int, isotropic: bool) -> tuple[float, float]:
    """(lower bound, delta); the node can be skipped iff delta > 0."""
    lo, hi = bvh._lo[node], bvh._hi[node]
    lb = _lower_bound(cell, lo, hi, bvh._wmax[node])
    if lb is None:
        return 0.0, -math.inf
    return lb, lb - _radius(cell, lo, hi, isotropic)


# Traversal


def _process_leaf(bvh: PowerBvh, sites: SiteArray, cell: ConvexCell, node: int,
                  stats: TraversalStats, sort_members: bool, isotropic: bool,
                  skip) -> bool:
    """Clip by every member that survives site culling. True once the cell is empty."""
    ids = bvh.members(node)
    if sort_members and len(ids) > 1:
        delta = sites.positions[ids].astype(np.float64) - np.array(cell.site.position)
        ids = ids[np.lexsort((ids, (delta * delta).sum(axis=1)))]
    me = cell.site.id
    rows = sites.rows
    for j in ids.tolist():
        if j == me or (skip is not None and skip[j]):
            continue
        x, y, z, w = rows[j]
        d_ij = candidate_distance(cell, x, y, z, w)
        if d_ij is None:
            continue
        p = (x, y, z)
        if d_ij > _radius(cell, p, p, isotropic):
            continue
        outcome = clip_by_site(cell, sites, j)
        stats.clip_calls += 1
        if outcome is ClipOutcome.UNCHANGED:
            stats.clip_unchanged += 1
        elif outcome is ClipOutcome.EMPTIED:
            return True
        else:
            cell.collect_garbage()
    return False


def best_first_clip(bvh: PowerBvh, sites: SiteArray, cell: ConvexCell,
                    traversal: str = BEST_FIRST, culling: str = DIRECTIONAL,
                    skip=None, stats: TraversalStats | None = None) -> TraversalStats:
    """Clip ``cell`` by every site whose bisector can still reach it.

    Descends toward the child with the smaller ``delta`` (lower bound minus
    directional radius), parks the other child when it may still clip, and
    on backtrack pops the parked node with the smallest lower bound after
    re-testing it against the shrunk cell. ``traversal=depth_first`` swaps
    in a plain LIFO stack with left-first descent; ``culling=isotropic``
    uses one radius for every direction. ``skip`` masks ids that must never
    clip (non-owning duplicates). Counters accumulate into ``stats`` when
    given, so work done before a raise stays counted.
    """
    if stats is None:
        stats = TraversalStats()
    if cell.is_empty:
        return stats
    isotropic = culling == ISOTROPIC
    best = traversal == BEST_FIRST
    stack: list[tuple[float, int]] = []
    node = bvh.root
    stats.nodes_visited += 1

    while True:
        while node is not None and not bvh.is_leaf(node):
            n0, n1 = bvh._left[node], bvh._right[node]
            lb0, d0 = _node_key(cell, bvh, n0, isotropic)
            lb1, d1 = _node_key(cell, bvh, n1, isotropic)
            if min(d0, d1) > 0:
                node = None
                break
            if (d0 < d1) if best else (d0 <= 0):
                node, far, lb_far, d_far = n0, n1, lb1, d1
            else:
                node, far, lb_far, d_far = n1, n0, lb0, d0
            stats.nodes_visited += 1
            if d_far <= 0:
                stack.append((lb_far, far))
                if len(stack) > stats.stack_high_water:
                    stats.stack_high_water = len(stack)

        if node is not None:
            stats.leaves_visited += 1
            if _process_leaf(bvh, sites, cell, node, stats, best, isotropic, skip):
                return stats

        while True:
            if not stack:
                return stats
            if best:
                # unsorted stack: linear scan for the nearest, fill the hole with the last entry
                i_min = min(range(len(stack)), key=lambda i: stack[i][0])
                lb, idx = stack[i_min]
                last = stack.pop()
                if i_min < len(stack):
                    stack[i_min] = last
            else:
                lb, idx = stack.pop()
            if lb - _radius(cell, bvh._lo[idx], bvh._hi[idx], isotropic) <= 0:
                node = idx
                stats.nodes_visited += 1
                break
