import numpy as np
import pytest

from pwrgram import formats, models
from pwrgram.app import EXIT_INPUT, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from pwrgram.engine import builder
from pwrgram.errors import TopologyCorruption


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setattr(builder, "PWRGRAM_THREADS", "1")


@pytest.fixture
def site_file(tmp_path):
    path = tmp_path / "sites.bin"
    assert main(["gen", "white-noise", "--n", "150", "--seed", "4", "--out", str(path)]) == EXIT_OK
    return path


def test_gen(tmp_path, capsys):
    out = tmp_path / "c.bin"
    assert main(["gen", "clustered", "--n", "100", "--k", "5", "--sigma", "0.2",
                 "--domain", "0", "1", "--precision", "single", "--out", str(out)]) == EXIT_OK
    sites = formats.read_sites(out)
    assert len(sites) == 100 and sites.dtype.itemsize == 4
    assert "sites: 100" in capsys.readouterr().out


def test_gen_single_site(tmp_path, capsys):
    assert main(["gen", "white-noise", "--n", "1", "--out", str(tmp_path / "one.bin")]) == EXIT_OK
    assert "d_nn: n/a" in capsys.readouterr().out


def test_build(tmp_path, site_file):
    csr, obj, stats = tmp_path / "a.csr", tmp_path / "c.obj", tmp_path / "s.json"
    assert main(["build", str(site_file), "--csr", str(csr), "--obj", str(obj), "--stats", str(stats),
                 "--weights-ratio", "0.1"]) == EXIT_OK
    d = formats.read_adjacency_csr(csr)
    assert d.site_count == 150 and d.asymmetric_pairs() == 0
    nonempty = sum(not d.is_empty(i) for i in range(150))
    assert obj.read_text().count("o cell_") == nonempty
    doc = formats.read_stats_json(stats)
    assert doc["kind"] == "build" and doc["config"]["culling"] == "directional"
    assert doc["build"]["traversal"]["clip_calls"] > 0


def test_build_flags_do_not_change_output(tmp_path, site_file):
    a, b = tmp_path / "a.csr", tmp_path / "b.csr"
    assert main(["build", str(site_file), "--csr", str(a)]) == EXIT_OK
    assert main(["build", str(site_file), "--csr", str(b), "--culling", "isotropic",
                 "--traversal", "depth-first", "--warm-start", "--leaf-size", "4"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_export(tmp_path, site_file):
    obj = tmp_path / "c.obj"
    assert main(["export", str(site_file), "--obj", str(obj)]) == EXIT_OK
    assert "o cell_149" in obj.read_text()


def test_verify(tmp_path, site_file):
    stats = tmp_path / "v.json"
    assert main(["verify", str(site_file), "--ownership-samples", "100", "--stats", str(stats)]) == EXIT_OK
    doc = formats.read_stats_json(stats)
    assert doc["mismatch_rate"] == 0 and doc["ownership_violations"] == 0


def test_verify_refuses_large_inputs(site_file):
    assert main(["verify", str(site_file), "--max-sites", "100"]) == EXIT_INPUT


def test_verify_reports_mismatch(site_file, monkeypatch):
    from pwrgram import app

    real = app.build_diagram

    def lossy(sites, config):
        d = real(sites, config)
        d.neighbors = d.neighbors.copy()
        d.neighbors[0] = d.neighbors[1]
        return d

    monkeypatch.setattr(app, "build_diagram", lossy)
    assert main(["verify", str(site_file)]) == EXIT_VERIFY


def test_verify_fails_on_one_sided_entry_at_zero_tolerance(site_file, monkeypatch, capsys):
    from pwrgram import app

    real = app.build_diagram

    def one_sided(sites, config):
        d = real(sites, config)
        # drop the last entry of the last nonempty row only
        last = int(d.offsets[-1]) - 1
        d.neighbors = np.delete(d.neighbors, last)
        d.offsets = d.offsets.copy()
        d.offsets[np.searchsorted(d.offsets, last, side="right"):] -= 1
        return d

    monkeypatch.setattr(app, "build_diagram", one_sided)
    assert main(["verify", str(site_file)]) == EXIT_VERIFY
    assert "asymmetric: 1" in capsys.readouterr().out


def test_verify_single_precision_clustered(tmp_path):
    path, stats = tmp_path / "c.bin", tmp_path / "v.json"
    assert main(["gen", "clustered", "--n", "300", "--k", "10", "--seed", "2", "--out", str(path)]) == EXIT_OK
    rc = main(["verify", str(path), "--precision", "single", "--weights-ratio", "1e-3",
               "--tolerance", "0.002", "--stats", str(stats)])
    doc = formats.read_stats_json(stats)
    assert rc == (EXIT_OK if doc["mismatch_rate"] <= 0.002 else EXIT_VERIFY)
    assert doc["config"]["precision"] == "single"


def test_geometry_failure_is_an_input_error(site_file, monkeypatch, capsys):
    from pwrgram import app

    def corrupt(sites, config):
        raise TopologyCorruption("hole boundary branches at plane 23")

    monkeypatch.setattr(app, "build_diagram", corrupt)
    assert main(["verify", str(site_file)]) == EXIT_INPUT
    assert "TopologyCorruption" in capsys.readouterr().err


def test_bench(tmp_path, site_file, bench_db):
    csv_path, json_path = tmp_path / "b.csv", tmp_path / "b.json"
    assert main(["bench", str(site_file), "--warmup", "0", "--runs", "1",
                 "--matrix", "culling=directional,isotropic", "--csv", str(csv_path),
                 "--json", str(json_path), "--machine", "ci"]) == EXIT_OK
    assert len(csv_path.read_text().splitlines()) == 3
    assert len(formats.read_stats_json(json_path)["configs"]) == 2
    assert len(models.load_runs(str(site_file))) == 2


def test_bench_writes_reports_next_to_input(site_file, bench_db, capsys):
    assert main(["bench", str(site_file), "--warmup", "0", "--runs", "1"]) == EXIT_OK
    csv_path = site_file.with_suffix(".bench.csv")
    json_path = site_file.with_suffix(".bench.json")
    assert len(csv_path.read_text().splitlines()) == 2
    assert len(formats.read_stats_json(json_path)["configs"]) == 1
    assert str(csv_path) in capsys.readouterr().out


def test_sweep_weights(tmp_path, site_file, capsys):
    out = tmp_path / "s.csv"
    assert main(["sweep-weights", str(site_file), "--ratios", "0,0.01", "--seeds", "1,2",
                 "--out", str(out), "--no-store"]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "weight_ratio,empty_ratio,seconds" and len(lines) == 3
    assert "weight_ratio" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["build"],
    ["frobnicate"],
    ["gen", "white-noise", "--out", "x.bin"],
    ["build", "x.bin", "--csr", "a.csr", "--culling", "sideways"],
    ["sweep-weights", "x.bin", "--ratios", "a,b"],
])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as err:
        main(argv)
    assert err.value.code == EXIT_USAGE


def test_invalid_values_are_usage_errors(tmp_path, site_file):
    assert main(["build", str(site_file), "--csr", str(tmp_path / "a.csr"),
                 "--warm-start-k", "0"]) == EXIT_USAGE
    assert main(["gen", "white-noise", "--n", "5", "--domain", "1", "0",
                 "--out", str(tmp_path / "x.bin")]) == EXIT_USAGE
    assert main(["bench", str(site_file), "--runs", "0", "--no-store"]) == EXIT_USAGE


def test_input_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage!" + bytes(40))
    assert main(["build", str(bad), "--csr", str(tmp_path / "a.csr")]) == EXIT_INPUT
    assert main(["build", str(tmp_path / "missing.bin"), "--csr", str(tmp_path / "a.csr")]) == EXIT_INPUT


def test_empty_site_file(tmp_path):
    empty = tmp_path / "empty.bin"
    empty.write_bytes(formats.SITE_HEADER.pack(formats.SITE_MAGIC, 8, 0, bytes(16)))
    assert main(["build", str(empty), "--csr", str(tmp_path / "a.csr")]) == EXIT_INPUT
