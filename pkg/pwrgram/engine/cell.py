"""
Per-site convex cell clipping.

A cell is kept as the dual of its polyhedron: every vertex is a triplet of
plane indices, oriented consistently, and every face is the fan of triplets
sharing one plane. Clipping removes the triplets on the wrong side of the new
plane, walks the boundary of the resulting hole as a cycle of plane pairs
``(a, b)``, and closes it with one new triplet ``(a, b, h)`` per pair.
"""

import logging
import math
from enum import Enum

import numpy as np

from pwrgram.engine.geometry import (
    Aabb,
    HalfSpace,
    PrecisionMode,
    SiteArray,
    WeightedSite,
    bisector_plane,
    boundary_tag,
    is_boundary,
)
from pwrgram.errors import SiteOutsideBox, TopologyCorruption

log = logging.getLogger(__name__)

GC_THRESHOLD = 0.85
INITIAL_PLANE_CAPACITY = 32

# corner k of the initial box, axis a -> face 2a (min side) or 2a + 1 (max side)
_CUBE_TRIPLETS = []
for _k in range(8):
    _faces = [2 * a + (_k >> a & 1) for a in range(3)]
    # inward normals are +e_a on min faces, -e_a on max faces; keep det(n) > 0
    if bin(_k).count("1") % 2:
        _faces[0], _faces[1] = _faces[1], _faces[0]
    _CUBE_TRIPLETS.append(tuple(_faces))
_CUBE_TRIPLETS = np.array(_CUBE_TRIPLETS, dtype=np.int32)

_CORNER_BITS = np.array([[k >> a & 1 for a in range(3)] for k in range(8)], dtype=bool)


class ClipOutcome(str, Enum):
    UNCHANGED = "unchanged"
    CLIPPED = "clipped"
    EMPTIED = "emptied"


class ConvexCell:
    """Evolving polyhedron of one site."""

    def __init__(self, site: WeightedSite, box: Aabb, eps: float,
                 precision: PrecisionMode = PrecisionMode.DOUBLE,
                 gc_threshold: float = GC_THRESHOLD):
        self.site = site
        self.eps = eps
        self.precision = precision
        self.gc_threshold = gc_threshold
        self.dtype = precision.dtype
        self.compactions = 0

        self._planes = np.zeros((INITIAL_PLANE_CAPACITY, 4), dtype=self.dtype)
        self._sources = np.zeros(INITIAL_PLANE_CAPACITY, dtype=np.int64)
        self._n_planes = 0
        lo = np.asarray(box.min_corner, dtype=self.dtype)
        hi = np.asarray(box.max_corner, dtype=self.dtype)
        for a in range(3):
            e = np.zeros(3, dtype=self.dtype)
            e[a] = 1
            self._push_plane(e, -lo[a], boundary_tag(2 * a))
            self._push_plane(-e, hi[a], boundary_tag(2 * a + 1))

        self.triangles = _CUBE_TRIPLETS.copy()
        corners = np.where(_CORNER_BITS, hi, lo)
        self.positions = corners.astype(self.dtype)
        self._sx, self._sy, self._sz = (float(c) for c in site.position)
        self._update_bounds()

    # Plane storage

    @property
    def capacity(self) -> int:
        return len(self._sources)

    @property
    def plane_count(self) -> int:
        return self._n_planes

    @property
    def occupancy(self) -> float:
        return self._n_planes / self.capacity

    @property
    def planes(self) -> np.ndarray:
        return self._planes[:self._n_planes]

    @property
    def sources(self) -> np.ndarray:
        return self._sources[:self._n_planes]

    def half_space(self, index: int) -> HalfSpace:
        row = self._planes[index]
        return HalfSpace(row[:3].copy(), row[3], int(self._sources[index]))

    def _push_plane(self, normal, offset, source: int) -> int:
        if self._n_planes == self.capacity:
            grown = 2 * self.capacity
            planes = np.zeros((grown, 4), dtype=self.dtype)
            planes[:self._n_planes] = self._planes
            sources = np.zeros(grown, dtype=np.int64)
            sources[:self._n_planes] = self._sources
            self._planes, self._sources = planes, sources
        idx = self._n_planes
        self._planes[idx, :3] = normal
        self._planes[idx, 3] = offset
        self._sources[idx] = source
        self._n_planes += 1
        return idx

    # Derived state

    @property
    def vertex_count(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def live_planes(self) -> np.ndarray:
        """Indices of planes referenced by at least one vertex, ascending."""
        return np.unique(self.triangles)

    @property
    def live_plane_count(self) -> int:
        return len(self.live_planes())

    def live_sources(self) -> list[int]:
        return [int(s) for s in self._sources[self.live_planes()]]

    def face_extents(self) -> dict[int, tuple[float, float]]:
        """``(area, perimeter)`` of every live plane's face, keyed by plane index."""
        if self.is_empty:
            return {}
        tris = self.triangles.astype(np.int64)
        m = max(self._n_planes, 1)
        a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
        # owner of each directed edge (a, b), (b, c), (c, a)
        keys = np.concatenate([a * m + b, b * m + c, c * m + a])
        owner = np.tile(np.arange(len(tris)), 3)
        order = np.argsort(keys)
        keys, owner = keys[order], owner[order]
        # next vertex around plane a is the triangle holding (a, c); likewise (b, a) and (c, b)
        planes = np.concatenate([a, b, c])
        lookup = np.concatenate([a * m + c, b * m + a, c * m + b])
        nxt = owner[np.clip(np.searchsorted(keys, lookup), 0, len(keys) - 1)]
        cur = np.tile(np.arange(len(tris)), 3)
        rel = self.positions.astype(np.float64) - np.array([self._sx, self._sy, self._sz])
        twice = np.zeros((self._n_planes, 3))
        np.add.at(twice, planes, np.cross(rel[cur], rel[nxt]))
        perimeter = np.zeros(self._n_planes)
        np.add.at(perimeter, planes, np.linalg.norm(rel[nxt] - rel[cur], axis=1))
        area = 0.5 * np.linalg.norm(twice, axis=1)
        return {int(p): (float(area[p]), float(perimeter[p])) for p in np.unique(planes)}

    def is_sliver(self, area: float, perimeter: float) -> bool:
        """A face no wider than the plane tolerance is a coplanar tie, not an adjacency.

        Width is measured as ``2 * area / perimeter``, so the test depends on
        the face alone and two cells sharing a face decide it the same way.
        """
        return 2.0 * area <= self.eps * perimeter

    def face_sources(self) -> list[int]:
        """Source tags of live planes whose face is not a sliver."""
        return [int(self._sources[p]) for p, (area, perimeter) in self.face_extents().items()
                if not self.is_sliver(area, perimeter)]

    def neighbors(self) -> list[int]:
        return sorted({s for s in self.face_sources() if not is_boundary(s)})

    def touches_boundary(self) -> bool:
        return any(is_boundary(s) for s in self.face_sources())

    def _update_bounds(self):
        if self.is_empty:
            self.aabb = Aabb.empty()
            self.corner_dist = [0.0] * 8
            return
        pos = self.positions.astype(np.float64)
        lo = pos.min(axis=0)
        hi = pos.max(axis=0)
        self.aabb = Aabb(lo, hi)
        corners = np.where(_CORNER_BITS, hi, lo)
        delta = corners - np.array([self._sx, self._sy, self._sz])
        self.corner_dist = np.sqrt((delta * delta).sum(axis=1)).tolist()

    # Clipping

    def clip(self, h: HalfSpace) -> ClipOutcome:
        return self.clip_plane(h.normal, h.offset, h.source)

    def clip_plane(self, normal, offset, source: int) -> ClipOutcome:
        if self.is_empty:
            return ClipOutcome.EMPTIED
        normal = np.asarray(normal, dtype=self.dtype)
        offset = self.dtype.type(offset)
        marked = self.positions @ normal + offset < -self.eps
        if not marked.any():
            return ClipOutcome.UNCHANGED
        if marked.all():
            self.triangles = self.triangles[:0]
            self.positions = self.positions[:0]
            self._update_bounds()
            return ClipOutcome.EMPTIED

        ring = _hole_boundary(self.triangles[marked])
        ab = np.array(ring, dtype=np.int32)
        new_pos = _intersect(self._planes[ab[:, 0]], self._planes[ab[:, 1]],
                             np.append(normal, offset).astype(self.dtype))
        if not np.isfinite(new_pos).all():
            raise TopologyCorruption(
                f"cell {self.site.id}: degenerate vertex while clipping by {source}"
            )
        # rounding must not push new vertices past the current box
        new_pos = np.clip(new_pos, self.aabb.min_corner, self.aabb.max_corner)

        h_idx = self._push_plane(normal, offset, source)
        new_tris = np.column_stack([ab, np.full(len(ab), h_idx, dtype=np.int32)])
        keep = ~marked
        self.triangles = np.concatenate([self.triangles[keep], new_tris])
        self.positions = np.concatenate([self.positions[keep], new_pos.astype(self.dtype)])
        self._update_bounds()
        return ClipOutcome.CLIPPED

    def compact(self) -> "ConvexCell":
        """Drop planes no vertex references and remap the triplets."""
        live = self.live_planes()
        if len(live) == self._n_planes:
            return self
        remap = np.full(self._n_planes, -1, dtype=np.int32)
        remap[live] = np.arange(len(live), dtype=np.int32)
        n = len(live)
        self._planes[:n] = self._planes[live]
        self._sources[:n] = self._sources[live]
        self._n_planes = n
        self.triangles = remap[self.triangles]
        self.compactions += 1
        return self

    def collect_garbage(self) -> bool:
        if self.occupancy >= self.gc_threshold:
            before = self._n_planes
            self.compact()
            log.debug("cell %d: compacted planes %d -> %d", self.site.id, before, self._n_planes)
            return True
        return False

    # Culling bounds

    def radius_toward(self, lo, hi) -> float:
        """Max corner distance over the octants (around the site) that [lo, hi] touches."""
        s = (self._sx, self._sy, self._sz)
        pos = [hi[a] >= s[a] for a in range(3)]
        neg = [lo[a] < s[a] for a in range(3)]
        cd = self.corner_dist
        r = 0.0
        for k in range(8):
            if ((pos[0] if k & 1 else neg[0]) and (pos[1] if k & 2 else neg[1])
                    and (pos[2] if k & 4 else neg[2])):
                if cd[k] > r:
                    r = cd[k]
        return r

    def isotropic_radius(self) -> float:
        return max(self.corner_dist)

    def vertex_radius(self) -> float:
        if self.is_empty:
            return 0.0
        delta = self.positions.astype(np.float64) - np.array([self._sx, self._sy, self._sz])
        return float(np.sqrt((delta * delta).sum(axis=1)).max())

    # Geometry extraction

    def faces(self) -> list[tuple[int, np.ndarray]]:
        """(source tag, ordered outward vertex loop) for every live plane that is not a sliver."""
        out = []
        tris = self.triangles.tolist()
        by_plane: dict[int, dict[int, tuple[int, int]]] = {}
        for t, (a, b, c) in enumerate(tris):
            by_plane.setdefault(a, {})[b] = (c, t)
            by_plane.setdefault(b, {})[c] = (a, t)
            by_plane.setdefault(c, {})[a] = (b, t)
        for p in sorted(by_plane):
            fan = by_plane[p]
            start = next(iter(fan))
            loop = []
            q = start
            while True:
                r, t = fan[q]
                loop.append(t)
                q = r
                if q == start:
                    break
                if len(loop) > len(fan) or q not in fan:
                    raise TopologyCorruption(f"cell {self.site.id}: face {p} does not close")
            pts = self.positions[loop].astype(np.float64)
            inward = self._planes[p, :3].astype(np.float64)
            normal = _newell(pts - pts.mean(axis=0))
            perimeter = float(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1).sum())
            if self.is_sliver(0.5 * float(np.linalg.norm(normal)), perimeter):
                continue
            if np.dot(normal, inward) > 0:
                pts = pts[::-1]
            out.append((int(self._sources[p]), pts))
        out.sort(key=lambda f: f[0])
        return out

    def volume(self) -> float:
        if self.is_empty:
            return 0.0
        s = np.array([self._sx, self._sy, self._sz])
        total = 0.0
        for _, loop in self.faces():
            v0 = loop[0] - s
            for i in range(1, len(loop) - 1):
                total += np.dot(v0, np.cross(loop[i] - s, loop[i + 1] - s))
        return total / 6.0


def init_cell(site: WeightedSite, global_box: Aabb, eps: float,
              precision: PrecisionMode = PrecisionMode.DOUBLE,
              gc_threshold: float = GC_THRESHOLD) -> ConvexCell:
    if not global_box.strictly_contains(site.position):
        raise SiteOutsideBox(site.id)
    return ConvexCell(site, global_box, eps, precision, gc_threshold)


def clip(cell: ConvexCell, h: HalfSpace) -> ClipOutcome:
    return cell.clip(h)


def compact(cell: ConvexCell) -> ConvexCell:
    return cell.compact()


def directional_radius(cell: ConvexCell, target: Aabb) -> float:
    return cell.radius_toward(target.min_corner, target.max_corner)


def clip_by_site(cell: ConvexCell, sites: SiteArray, j: int) -> ClipOutcome:
    s = cell.site
    x, y, z, w = sites.rows[j]
    normal, offset = bisector_plane(s.position, s.weight, (x, y, z), w, cell.dtype)
    return cell.clip_plane(normal, offset, j)


def candidate_distance(cell: ConvexCell, x: float, y: float, z: float, w: float) -> float | None:
    """Bisector distance from the cell's site toward (x, y, z, w), None if coincident."""
    dx = x - cell._sx
    dy = y - cell._sy
    dz = z - cell._sz
    sq = dx * dx + dy * dy + dz * dz
    if sq == 0.0:
        return None
    return (sq + (cell.site.weight - w)) / (2.0 * math.sqrt(sq))


def site_culled(cell: ConvexCell, candidate: WeightedSite, isotropic: bool = False) -> bool:
    x, y, z = (float(c) for c in candidate.position)
    d_ij = candidate_distance(cell, x, y, z, float(candidate.weight))
    if d_ij is None:
        return False
    r = cell.isotropic_radius() if isotropic else cell.radius_toward((x, y, z), (x, y, z))
    return d_ij > r


# Helpers


def _hole_boundary(removed: np.ndarray) -> list[tuple[int, int]]:
    """Circular list of plane pairs bounding the removed triplets.

    All marked vertices are removed as one set and the ring is read off the
    directed edges whose reverse is not also removed. For a connected marked
    set this is the same ring as removing the vertices one at a time and
    growing the hole; a disconnected or pinched set raises instead.
    """
    edges = set()
    for a, b, c in removed.tolist():
        edges.add((a, b))
        edges.add((b, c))
        edges.add((c, a))
    nxt: dict[int, int] = {}
    for u, v in edges:
        if (v, u) in edges:
            continue
        if u in nxt:
            raise TopologyCorruption(f"hole boundary branches at plane {u}")
        nxt[u] = v
    if not nxt:
        raise TopologyCorruption("hole has no boundary")
    start = min(nxt)
    ring = []
    u = start
    while True:
        v = nxt.get(u)
        if v is None:
            raise TopologyCorruption(f"hole boundary is open at plane {u}")
        ring.append((u, v))
        u = v
        if u == start:
            break
        if len(ring) > len(nxt):
            raise TopologyCorruption("hole boundary does not return to its start")
    if len(ring) != len(nxt):
        raise TopologyCorruption("hole boundary is not a single cycle")
    return ring


def _intersect(pa: np.ndarray, pb: np.ndarray, ph: np.ndarray) -> np.ndarray:
    """Intersection points of plane rows ``pa[i]``, ``pb[i]`` and the single plane ``ph``."""
    na, nb = pa[:, :3], pb[:, :3]
    nh = np.broadcast_to(ph[:3], na.shape)
    bxh = np.cross(nb, nh)
    hxa = np.cross(nh, na)
    axb = np.cross(na, nb)
    det = (na * bxh).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = -(pa[:, 3:4] * bxh + pb[:, 3:4] * hxa + ph[3] * axb)
        return num / det[:, None]


def _newell(loop: np.ndarray) -> np.ndarray:
    nxt = np.roll(loop, -1, axis=0)
    return np.array([
        ((loop[:, 1] - nxt[:, 1]) * (loop[:, 2] + nxt[:, 2])).sum(),
        ((loop[:, 2] - nxt[:, 2]) * (loop[:, 0] + nxt[:, 0])).sum(),
        ((loop[:, 0] - nxt[:, 0]) * (loop[:, 1] + nxt[:, 1])).sum(),
    ])
