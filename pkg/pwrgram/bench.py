"""
Benchmark protocol: warm-up runs, timed runs and a wall-clock limit per
configuration, over the cross product of the requested ablation values.
Also hosts the weight sweep that tabulates empty-cell ratio against weight
spread.
"""

import csv
import itertools
import logging
import os
import statistics
import time
from dataclasses import asdict, dataclass, field

from pwrgram.datasets import median_nn_distance, sample_weights
from pwrgram.engine.builder import BuildConfig, Culling, Traversal, build_diagram, empty_ratio
from pwrgram.engine.geometry import PrecisionMode, SiteArray
from pwrgram.errors import BuildTimeout, IoFailure, TooFewSites

log = logging.getLogger(__name__)

COUNTERS = ("nodes_visited", "leaves_visited", "clip_calls", "clip_unchanged", "stack_high_water")

CSV_COLUMNS = (
    "dataset", "site_count", "machine", "precision", "culling", "traversal",
    "warm_start", "leaf_size", "thread_count", "weight_ratio", "phase", "run_index",
    "status", "seconds", "index_seconds", "cells_seconds", *COUNTERS, "empty_ratio",
)

SWEEP_COLUMNS = ("weight_ratio", "empty_ratio", "seconds")
DEFAULT_RATIOS = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


MATRIX_KEYS = {
    "culling": Culling,
    "traversal": Traversal,
    "warm_start": _parse_bool,
    "leaf_size": int,
    "precision": PrecisionMode,
}


@dataclass(frozen=True)
class BenchProtocol:
    warmup_runs: int = 3
    timed_runs: int = 10
    timeout_seconds: float = 300.0

    def __post_init__(self):
        if self.timed_runs < 1:
            raise ValueError(f"timed_runs must be >= 1, got {self.timed_runs}")
        if self.warmup_runs < 0:
            raise ValueError(f"warmup_runs must be >= 0, got {self.warmup_runs}")
        if not self.timeout_seconds > 0:
            raise ValueError(f"timeout_seconds must be > 0, got {self.timeout_seconds}")


@dataclass
class RunRecord:
    phase: str
    run_index: int
    status: str
    seconds: float | None = None
    index_seconds: float | None = None
    cells_seconds: float | None = None
    counters: dict = field(default_factory=dict)
    empty_ratio: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class ConfigResult:
    config: BuildConfig
    runs: list[RunRecord] = field(default_factory=list)

    @property
    def timed(self) -> list[RunRecord]:
        return [r for r in self.runs if r.phase == "timed"]

    @property
    def completed(self) -> list[RunRecord]:
        return [r for r in self.timed if r.ok]

    @property
    def dnf(self) -> bool:
        return any(not r.ok for r in self.runs)

    def _median(self, attr: str) -> float | None:
        values = [getattr(r, attr) for r in self.completed]
        return statistics.median(values) if values else None

    def summary(self) -> dict:
        seconds = [r.seconds for r in self.completed]
        total = sum(seconds)
        return {
            "config": self.config.echo(),
            "status": "dnf" if self.dnf else "ok",
            "warmup_runs": [r.seconds for r in self.runs if r.phase == "warmup"],
            "runs": [r.seconds for r in self.timed],
            "mean": statistics.fmean(seconds) if seconds else None,
            "median": statistics.median(seconds) if seconds else None,
            "min": min(seconds) if seconds else None,
            "index_fraction": sum(r.index_seconds for r in self.completed) / total if total else None,
            "cells_fraction": sum(r.cells_seconds for r in self.completed) / total if total else None,
            "traversal": {
                c: statistics.median(r.counters[c] for r in self.completed) if seconds else None
                for c in COUNTERS
            },
            "empty_ratio": self._median("empty_ratio"),
        }


@dataclass
class BenchReport:
    dataset: str
    site_count: int
    machine: str
    protocol: BenchProtocol
    results: list[ConfigResult] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "kind": "bench",
            "dataset": self.dataset,
            "site_count": self.site_count,
            "machine": self.machine,
            "protocol": asdict(self.protocol),
            "configs": [r.summary() for r in self.results],
        }

    def rows(self) -> list[dict]:
        out = []
        for result in self.results:
            c = result.config
            for r in result.runs:
                out.append({
                    "dataset": self.dataset,
                    "site_count": self.site_count,
                    "machine": self.machine,
                    "precision": c.precision.value,
                    "culling": c.culling.value,
                    "traversal": c.traversal.value,
                    "warm_start": c.warm_start,
                    "leaf_size": c.leaf_size,
                    "thread_count": c.resolved_threads(),
                    "weight_ratio": None,
                    "phase": r.phase,
                    "run_index": r.run_index,
                    "status": r.status,
                    "seconds": r.seconds,
                    "index_seconds": r.index_seconds,
                    "cells_seconds": r.cells_seconds,
                    **{k: r.counters.get(k) for k in COUNTERS},
                    "empty_ratio": r.empty_ratio,
                })
        return out


def machine_descriptor(label: str | None = None) -> str:
    return f"{label or 'unspecified'} ({os.cpu_count() or 1} cores)"


def parse_matrix(items: list[str]) -> dict[str, list]:
    """``["traversal=best_first,depth_first", ...]`` -> ``{"traversal": [...]}``."""
    matrix: dict[str, list] = {}
    for item in items:
        key, sep, values = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in MATRIX_KEYS or not values.strip():
            raise ValueError(f"bad --matrix entry {item!r}; keys: {', '.join(MATRIX_KEYS)}")
        convert = MATRIX_KEYS[key]
        matrix[key] = [convert(v.strip()) for v in values.split(",")]
    return matrix


def expand_matrix(base: BuildConfig, matrix: dict[str, list]) -> list[BuildConfig]:
    keys = list(matrix)
    return [base.with_changes(**dict(zip(keys, combo)))
            for combo in itertools.product(*(matrix[k] for k in keys))]


def timed_build(sites: SiteArray, config: BuildConfig, timeout: float | None, phase: str,
                run_index: int) -> RunRecord:
    t0 = time.perf_counter()
    try:
        diagram = build_diagram(sites, config, timeout=timeout)
    except BuildTimeout:
        return RunRecord(phase, run_index, "dnf")
    seconds = time.perf_counter() - t0
    stats = diagram.stats
    return RunRecord(
        phase, run_index, "ok", seconds, stats.index_seconds, stats.cells_seconds,
        stats.traversal.as_dict(), empty_ratio(diagram),
    )


def run_bench(sites: SiteArray, protocol: BenchProtocol = BenchProtocol(),
              matrix: dict[str, list] | None = None, base: BuildConfig = BuildConfig(),
              dataset: str = "", machine: str | None = None) -> BenchReport:
    report = BenchReport(dataset, len(sites), machine_descriptor(machine), protocol)
    for config in expand_matrix(base, matrix or {}):
        result = ConfigResult(config)
        report.results.append(result)
        plan = [("warmup", k) for k in range(protocol.warmup_runs)]
        plan += [("timed", k) for k in range(protocol.timed_runs)]
        for phase, k in plan:
            record = timed_build(sites, config, protocol.timeout_seconds, phase, k)
            result.runs.append(record)
            if not record.ok:
                log.warning("DNF: %s run %d exceeded %gs (%s/%s)", phase, k,
                            protocol.timeout_seconds, config.culling.value, config.traversal.value)
                break
        summary = result.summary()
        if summary["median"] is not None:
            log.info("%s/%s warm_start=%s leaf=%d: median %.3fs over %d runs",
                     config.culling.value, config.traversal.value, config.warm_start,
                     config.leaf_size, summary["median"], len(result.completed))
    return report


# ---------------------------------------------------------------------------
# Weight sweep
# ---------------------------------------------------------------------------


@dataclass
class SweepRow:
    weight_ratio: float
    empty_ratio: float
    seconds: float
    samples: list[tuple[float, float]] = field(default_factory=list)


def sweep_weights(sites: SiteArray, ratios=DEFAULT_RATIOS, seeds=(0,),
                  config: BuildConfig = BuildConfig(), d_nn: float | None = None) -> list[SweepRow]:
    """Median empty ratio and build time per weight ratio, over ``seeds``."""
    if not seeds:
        raise ValueError("at least one weight seed is required")
    if d_nn is None and any(r > 0 for r in ratios):
        try:
            d_nn = median_nn_distance(sites)
        except TooFewSites:
            d_nn = 0.0
    out = []
    for ratio in ratios:
        samples = []
        for seed in seeds:
            weighted = sites.with_weights(sample_weights(sites, ratio, seed, d_nn))
            t0 = time.perf_counter()
            diagram = build_diagram(weighted, config)
            samples.append((empty_ratio(diagram), time.perf_counter() - t0))
        row = SweepRow(
            ratio,
            statistics.median(e for e, _ in samples),
            statistics.median(s for _, s in samples),
            samples,
        )
        log.info("weight ratio %g: empty ratio %.3f, %.3fs", ratio, row.empty_ratio, row.seconds)
        out.append(row)
    return out


def sweep_rows(rows: list[SweepRow], dataset: str, site_count: int, machine: str,
               config: BuildConfig) -> list[dict]:
    """Bench-store rows for a sweep, one per (ratio, seed) sample."""
    out = []
    for row in rows:
        for k, (ratio_empty, seconds) in enumerate(row.samples):
            out.append({
                "dataset": dataset,
                "site_count": site_count,
                "machine": machine,
                "precision": config.precision.value,
                "culling": config.culling.value,
                "traversal": config.traversal.value,
                "warm_start": config.warm_start,
                "leaf_size": config.leaf_size,
                "thread_count": config.resolved_threads(),
                "weight_ratio": row.weight_ratio,
                "phase": "timed",
                "run_index": k,
                "status": "ok",
                "seconds": seconds,
                "empty_ratio": ratio_empty,
            })
    return out


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _write_csv(path, columns, rows):
    try:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: "" if row.get(k) is None else row.get(k) for k in columns})
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def write_bench_csv(path, report: BenchReport):
    _write_csv(path, CSV_COLUMNS, report.rows())


def write_sweep_csv(path, rows: list[SweepRow]):
    _write_csv(path, SWEEP_COLUMNS, (
        {"weight_ratio": r.weight_ratio, "empty_ratio": f"{r.empty_ratio:.3f}", "seconds": r.seconds}
        for r in rows
    ))
