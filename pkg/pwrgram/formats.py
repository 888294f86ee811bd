"""
On-disk formats: binary site files, binary CSR adjacency, OBJ cell meshes and
the versioned stats JSON. All binary fields are little-endian.
"""

import json
import logging
import struct
from pathlib import Path

import numpy as np

from pwrgram.engine.builder import PowerDiagram
from pwrgram.engine.geometry import PrecisionMode, SiteArray
from pwrgram.errors import (
    BadHeader,
    BadMagic,
    FormatError,
    IoFailure,
    MissingGeometry,
    NonFiniteValue,
    TruncatedPayload,
)

log = logging.getLogger(__name__)

SITE_MAGIC = b"PWRGRAM1"
SITE_HEADER = struct.Struct("<8sBQ16s")
CSR_MAGIC = b"PWRCSR01"
CSR_HEADER = struct.Struct("<8sQ")

STATS_SCHEMA = "pwrgram.stats"
STATS_VERSION = 1

_FLOAT = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def _write_bytes(path, payload: bytes):
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(path, exc) from exc


# ---------------------------------------------------------------------------
# Sites
# ---------------------------------------------------------------------------


def read_sites(path) -> SiteArray:
    data = _read_bytes(path)
    if data[:8] != SITE_MAGIC:
        raise BadMagic(data[:8], SITE_MAGIC)
    if len(data) < SITE_HEADER.size:
        raise BadHeader(len(data), f"header needs {SITE_HEADER.size} bytes")
    _, precision, count, reserved = SITE_HEADER.unpack_from(data)
    if precision not in _FLOAT:
        raise BadHeader(8, f"precision must be 4 or 8, got {precision}")
    if reserved != bytes(16):
        raise BadHeader(17, "reserved bytes must be zero")
    dtype = _FLOAT[precision]
    expected = count * 4 * precision
    payload = len(data) - SITE_HEADER.size
    if payload != expected:
        raise TruncatedPayload(expected, payload)
    if count == 0:
        return SiteArray.from_arrays(np.zeros((0, 3)), dtype=dtype.newbyteorder("="))
    table = np.frombuffer(data, dtype=dtype, count=4 * count, offset=SITE_HEADER.size).reshape(-1, 4)
    bad = ~np.isfinite(table).all(axis=1)
    if bad.any():
        raise NonFiniteValue(int(np.flatnonzero(bad)[0]))
    native = table.astype(dtype.newbyteorder("="))
    return SiteArray(native[:, :3].copy(), native[:, 3].copy())


def write_sites(path, sites: SiteArray, precision=PrecisionMode.DOUBLE):
    """Single precision rounds to nearest."""
    width = 4 if PrecisionMode(precision) is PrecisionMode.SINGLE else 8
    table = np.column_stack([sites.positions, sites.weights]).astype(_FLOAT[width])
    header = SITE_HEADER.pack(SITE_MAGIC, width, len(sites), bytes(16))
    _write_bytes(path, header + table.tobytes())


# ---------------------------------------------------------------------------
# Adjacency
# ---------------------------------------------------------------------------


def adjacency_csr_bytes(diagram: PowerDiagram) -> bytes:
    return b"".join([
        CSR_HEADER.pack(CSR_MAGIC, diagram.site_count),
        diagram.offsets.astype("<u8").tobytes(),
        diagram.neighbors.astype("<u4").tobytes(),
        diagram.flags.astype("u1").tobytes(),
    ])


def write_adjacency_csr(path, diagram: PowerDiagram):
    _write_bytes(path, adjacency_csr_bytes(diagram))


def read_adjacency_csr(path) -> PowerDiagram:
    data = _read_bytes(path)
    if len(data) < CSR_HEADER.size:
        raise BadMagic(data[:8], CSR_MAGIC)
    magic, n = CSR_HEADER.unpack_from(data)
    if magic != CSR_MAGIC:
        raise BadMagic(magic, CSR_MAGIC)
    pos = CSR_HEADER.size
    if len(data) < pos + 8 * (n + 1):
        raise TruncatedPayload(8 * (n + 1), len(data) - pos)
    offsets = np.frombuffer(data, "<u8", n + 1, pos).astype(np.int64)
    pos += 8 * (n + 1)
    m = int(offsets[-1])
    if np.any(np.diff(offsets) < 0) or offsets[0] != 0:
        raise FormatError(f"offsets at byte {CSR_HEADER.size} are not a non-decreasing run from 0")
    expected = 4 * m + n
    if len(data) - pos != expected:
        raise TruncatedPayload(expected, len(data) - pos)
    neighbors = np.frombuffer(data, "<u4", m, pos).astype(np.int64) if m else np.zeros(0, dtype=np.int64)
    flags = np.frombuffer(data, "u1", n, pos + 4 * m).copy()
    return PowerDiagram(n, offsets, neighbors, flags)


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------


def _dedup(points: np.ndarray, store: list[np.ndarray], eps: float) -> int:
    for k, q in enumerate(store):
        if np.abs(q - points).max() <= eps:
            return k
    store.append(points)
    return len(store) - 1


def export_cells_obj(path, diagram: PowerDiagram):
    """One ``o cell_<id>`` object per nonempty cell, outward face loops."""
    if diagram.geometry is None:
        raise MissingGeometry()
    lines = ["# pwrgram cells"]
    base = 1
    for i, geometry in enumerate(diagram.geometry):
        if geometry is None or not geometry.faces:
            continue
        verts: list[np.ndarray] = []
        faces = []
        for _, loop in geometry.faces:
            idx = []
            for p in loop:
                k = _dedup(p, verts, diagram.plane_eps)
                if not idx or idx[-1] != k:
                    idx.append(k)
            if len(idx) > 1 and idx[0] == idx[-1]:
                idx.pop()
            if len(idx) >= 3:
                faces.append(idx)
        lines.append(f"o cell_{i}")
        lines.extend(f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in verts)
        lines.extend("f " + " ".join(str(base + k) for k in face) for face in faces)
        base += len(verts)
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    log.debug("wrote %d vertices to %s", base - 1, path)


# ---------------------------------------------------------------------------
# Stats
# ---------------------------------------------------------------------------


def write_stats_json(path, report: dict):
    doc = {"schema": STATS_SCHEMA, "version": STATS_VERSION, **report}
    try:
        with open(path, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=False)
            f.write("\n")
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def read_stats_json(path) -> dict:
    try:
        with open(path) as f:
            doc = json.load(f)
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at byte {exc.pos}") from exc
    if doc.get("schema") != STATS_SCHEMA:
        raise FormatError(f"{path}: schema must be {STATS_SCHEMA!r}")
    if doc.get("version") != STATS_VERSION:
        raise FormatError(f"{path}: unsupported stats version {doc.get('version')!r}")
    return doc
