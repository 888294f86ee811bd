import json
import struct

import numpy as np
import pytest

from pwrgram.engine.builder import BuildConfig, build_diagram
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
from pwrgram.formats import (
    CSR_MAGIC,
    SITE_HEADER,
    SITE_MAGIC,
    STATS_SCHEMA,
    adjacency_csr_bytes,
    export_cells_obj,
    read_adjacency_csr,
    read_sites,
    read_stats_json,
    write_adjacency_csr,
    write_sites,
    write_stats_json,
)


def _site_file(path, rows, precision=8, count=None, reserved=bytes(16)):
    fmt = "<f8" if precision == 8 else "<f4"
    table = np.asarray(rows, dtype=fmt).reshape(-1, 4)
    header = SITE_HEADER.pack(SITE_MAGIC, precision, len(table) if count is None else count, reserved)
    path.write_bytes(header + table.tobytes())
    return path


class TestSites:
    def test_double_round_trip(self, tmp_path, noise200):
        write_sites(tmp_path / "s.bin", noise200)
        back = read_sites(tmp_path / "s.bin")
        assert back.dtype == np.float64
        np.testing.assert_array_equal(back.positions, noise200.positions)
        np.testing.assert_array_equal(back.weights, noise200.weights)

    def test_single_rounds_to_nearest(self, tmp_path, noise200):
        write_sites(tmp_path / "s.bin", noise200, PrecisionMode.SINGLE)
        back = read_sites(tmp_path / "s.bin")
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back.positions, noise200.positions.astype(np.float32))

    def test_layout(self, tmp_path):
        sites = SiteArray.from_arrays([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], [0.5, -0.5])
        write_sites(tmp_path / "s.bin", sites)
        data = (tmp_path / "s.bin").read_bytes()
        assert len(data) == 33 + 2 * 32
        assert data[:8] == b"PWRGRAM1"
        assert data[8] == 8
        assert struct.unpack_from("<Q", data, 9) == (2,)
        assert data[17:33] == bytes(16)
        assert struct.unpack_from("<4d", data, 33) == (1.0, 2.0, 3.0, 0.5)

    def test_empty_file(self, tmp_path):
        path = _site_file(tmp_path / "s.bin", np.zeros((0, 4)))
        assert len(read_sites(path)) == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "s.bin"
        path.write_bytes(b"NOTSITES" + bytes(40))
        with pytest.raises(BadMagic) as err:
            read_sites(path)
        assert err.value.found == b"NOTSITES"

    def test_bad_precision(self, tmp_path):
        path = _site_file(tmp_path / "s.bin", [[0, 0, 0, 0]])
        data = bytearray(path.read_bytes())
        data[8] = 5
        path.write_bytes(bytes(data))
        with pytest.raises(BadHeader) as err:
            read_sites(path)
        assert err.value.offset == 8

    def test_reserved_must_be_zero(self, tmp_path):
        path = _site_file(tmp_path / "s.bin", [[0, 0, 0, 0]], reserved=b"\x01" + bytes(15))
        with pytest.raises(BadHeader) as err:
            read_sites(path)
        assert err.value.offset == 17

    def test_short_header(self, tmp_path):
        path = tmp_path / "s.bin"
        path.write_bytes(SITE_MAGIC + b"\x08")
        with pytest.raises(BadHeader):
            read_sites(path)

    def test_truncated(self, tmp_path):
        path = _site_file(tmp_path / "s.bin", [[0, 0, 0, 0], [1, 1, 1, 0]], count=3)
        with pytest.raises(TruncatedPayload) as err:
            read_sites(path)
        assert (err.value.expected, err.value.found) == (96, 64)

    def test_non_finite(self, tmp_path):
        path = _site_file(tmp_path / "s.bin", [[0, 0, 0, 0], [1, 1, 1, 0], [2, 2, 2, np.nan]], precision=4)
        with pytest.raises(NonFiniteValue) as err:
            read_sites(path)
        assert err.value.index == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_sites(tmp_path / "nope.bin")


class TestAdjacency:
    def test_two_site_layout(self):
        d = build_diagram(SiteArray.from_arrays([[0.0, 0, 0], [1.0, 0, 0]]))
        expected = (CSR_MAGIC + struct.pack("<Q", 2) + struct.pack("<3Q", 0, 1, 2)
                    + struct.pack("<2I", 1, 0) + bytes([2, 2]))
        assert adjacency_csr_bytes(d) == expected

    def test_round_trip(self, tmp_path, noise200):
        d = build_diagram(noise200)
        write_adjacency_csr(tmp_path / "a.csr", d)
        back = read_adjacency_csr(tmp_path / "a.csr")
        assert back.site_count == 200
        np.testing.assert_array_equal(back.offsets, d.offsets)
        np.testing.assert_array_equal(back.neighbors, d.neighbors)
        np.testing.assert_array_equal(back.flags, d.flags)

    def test_canonical_bytes(self, noise200):
        a = build_diagram(noise200, BuildConfig(traversal="depth_first"))
        b = build_diagram(noise200, BuildConfig(warm_start=True, leaf_size=3))
        assert adjacency_csr_bytes(a) == adjacency_csr_bytes(b)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "a.csr").write_bytes(b"PWRGRAM1" + bytes(8))
        with pytest.raises(BadMagic):
            read_adjacency_csr(tmp_path / "a.csr")

    def test_truncated(self, tmp_path):
        d = build_diagram(SiteArray.from_arrays([[0.0, 0, 0], [1.0, 0, 0]]))
        (tmp_path / "a.csr").write_bytes(adjacency_csr_bytes(d)[:-1])
        with pytest.raises(TruncatedPayload):
            read_adjacency_csr(tmp_path / "a.csr")


class TestObj:
    def _lines(self, path, prefix):
        return [line.split()[1:] for line in path.read_text().splitlines() if line.startswith(prefix)]

    def test_single_cell_is_a_box(self, tmp_path):
        d = build_diagram(SiteArray.from_arrays([[0.5, 0.5, 0.5]]), BuildConfig(keep_geometry=True))
        export_cells_obj(tmp_path / "c.obj", d)
        assert self._lines(tmp_path / "c.obj", "o ") == [["cell_0"]]
        assert len(self._lines(tmp_path / "c.obj", "v ")) == 8
        faces = self._lines(tmp_path / "c.obj", "f ")
        assert len(faces) == 6 and all(len(f) == 4 for f in faces)

    def test_indices_continue_across_cells(self, tmp_path):
        d = build_diagram(SiteArray.from_arrays([[0.0, 0, 0], [1.0, 0, 0]]), BuildConfig(keep_geometry=True))
        export_cells_obj(tmp_path / "c.obj", d)
        text = (tmp_path / "c.obj").read_text()
        assert "o cell_0" in text and "o cell_1" in text
        verts = self._lines(tmp_path / "c.obj", "v ")
        indices = [int(k) for f in self._lines(tmp_path / "c.obj", "f ") for k in f]
        assert len(verts) == 16
        assert min(indices) == 1 and max(indices) == 16

    def test_skips_empty_cells(self, tmp_path):
        sites = SiteArray.from_arrays([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0]])
        export_cells_obj(tmp_path / "c.obj", build_diagram(sites, BuildConfig(keep_geometry=True)))
        assert "cell_2" not in (tmp_path / "c.obj").read_text()

    def test_needs_geometry(self, tmp_path, lattice3):
        with pytest.raises(MissingGeometry):
            export_cells_obj(tmp_path / "c.obj", build_diagram(lattice3))


class TestStatsJson:
    def test_round_trip(self, tmp_path):
        write_stats_json(tmp_path / "s.json", {"kind": "build", "site_count": 3})
        doc = read_stats_json(tmp_path / "s.json")
        assert doc["schema"] == STATS_SCHEMA and doc["version"] == 1
        assert doc["site_count"] == 3

    @pytest.mark.parametrize("doc", [{"schema": "other", "version": 1},
                                     {"schema": STATS_SCHEMA, "version": 2}])
    def test_rejects_foreign_documents(self, tmp_path, doc):
        (tmp_path / "s.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            read_stats_json(tmp_path / "s.json")

    def test_invalid_json(self, tmp_path):
        (tmp_path / "s.json").write_text("{")
        with pytest.raises(FormatError):
            read_stats_json(tmp_path / "s.json")
