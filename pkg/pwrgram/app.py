import argparse
import logging
import sys
from pathlib import Path

from pwrgram import bench, datasets, formats
from pwrgram.engine.builder import BuildConfig, Culling, Traversal, build_diagram, empty_ratio
from pwrgram.engine.geometry import Aabb, PrecisionMode, SiteArray
from pwrgram.engine.oracle import brute_force_diagram, diff, ownership_violations
from pwrgram.errors import EmptyInput, InputError, IoFailure, PwrgramError, TooFewSites
from pwrgram.models import record_runs

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_VERIFY = 3

DEFAULT_VERIFY_CAP = 5000


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _choice(enum_cls):
    def convert(value: str):
        try:
            return enum_cls(value.replace("-", "_"))
        except ValueError:
            names = ", ".join(m.value for m in enum_cls)
            raise argparse.ArgumentTypeError(f"invalid choice {value!r} (choose from {names})")
    return convert


def _float_list(value: str) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")


def _int_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


def _config_flags() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    g = p.add_argument_group("build configuration")
    g.add_argument("--precision", type=_choice(PrecisionMode), default=PrecisionMode.DOUBLE)
    g.add_argument("--leaf-size", type=int, default=10)
    g.add_argument("--warm-start", action="store_true")
    g.add_argument("--warm-start-k", type=int, default=8)
    g.add_argument("--box-margin", type=float, default=0.01)
    g.add_argument("--culling", type=_choice(Culling), default=Culling.DIRECTIONAL)
    g.add_argument("--traversal", type=_choice(Traversal), default=Traversal.BEST_FIRST)
    g.add_argument("--threads", default="auto", help="worker count or 'auto' (PWRGRAM_THREADS overrides)")
    g.add_argument("--weights-ratio", type=float, default=None,
                   help="replace file weights with sampled ones at this ratio")
    g.add_argument("--weight-seed", type=int, default=0)
    return p


def _load_sites(args) -> SiteArray:
    sites = formats.read_sites(args.input)
    if len(sites) == 0:
        raise EmptyInput(f"{args.input}: file holds no sites")
    if args.weights_ratio is not None:
        if args.weights_ratio < 0:
            raise ValueError(f"--weights-ratio must be >= 0, got {args.weights_ratio}")
        sites = sites.with_weights(datasets.sample_weights(sites, args.weights_ratio, args.weight_seed))
    return sites


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    lo, hi = args.domain
    if not lo < hi:
        raise ValueError(f"--domain needs lo < hi, got {lo} {hi}")
    spec = datasets.GeneratorSpec(
        kind=args.kind.replace("-", "_"),
        n=args.n,
        domain=Aabb.from_points([[lo] * 3, [hi] * 3]),
        cluster_count=args.k,
        cluster_sigma=args.sigma,
        seed=args.seed,
    )
    sites = datasets.generate(spec)
    formats.write_sites(args.out, sites, args.precision)
    print(f"sites: {len(sites)}")
    try:
        print(f"d_nn: {datasets.median_nn_distance(sites):.6g}")
    except TooFewSites:
        print("d_nn: n/a")
    return EXIT_OK


def _stats_report(kind: str, args, config: BuildConfig, diagram) -> dict:
    return {
        "kind": kind,
        "input": str(args.input),
        "site_count": diagram.site_count,
        "config": config.echo(),
        "build": diagram.stats.as_dict(),
        "empty_ratio": empty_ratio(diagram),
    }


def cmd_build(args) -> int:
    config = BuildConfig.from_args(args).with_changes(keep_geometry=args.obj is not None)
    sites = _load_sites(args)
    diagram = build_diagram(sites, config)
    formats.write_adjacency_csr(args.csr, diagram)
    if args.obj:
        formats.export_cells_obj(args.obj, diagram)
    if args.stats:
        formats.write_stats_json(args.stats, _stats_report("build", args, config, diagram))
    print(f"cells: {diagram.site_count}, pairs: {len(diagram.pairs())}, "
          f"empty ratio: {empty_ratio(diagram):.3f}")
    return EXIT_OK


def cmd_export(args) -> int:
    config = BuildConfig.from_args(args)
    sites = _load_sites(args)
    diagram = build_diagram(sites, config)
    formats.export_cells_obj(args.obj, diagram)
    print(f"exported {sum(1 for g in diagram.geometry if g and g.faces)} cells to {args.obj}")
    return EXIT_OK


def cmd_verify(args) -> int:
    config = BuildConfig.from_args(args)
    sites = _load_sites(args)
    if len(sites) > args.max_sites:
        print(f"refusing to verify {len(sites)} sites: brute force is capped at "
              f"{args.max_sites} (raise --max-sites)", file=sys.stderr)
        return EXIT_INPUT
    fast = build_diagram(sites, config)
    reference = brute_force_diagram(sites, precision=config.precision, box_margin=config.box_margin)
    result = diff(reference, fast)
    print(f"pairs: {len(reference.pairs())}, missing: {len(result.missing_pairs)}, "
          f"extra: {len(result.extra_pairs)}, asymmetric: {result.asymmetric_pairs}, "
          f"mismatch rate: {result.mismatch_rate:.6f}")
    violations = None
    if args.ownership_samples:
        violations = ownership_violations(fast, sites, args.ownership_samples)
        print(f"ownership violations: {violations} of {args.ownership_samples}")
    if args.stats:
        report = _stats_report("verify", args, config, fast)
        report.update(result.as_dict())
        report["tolerance"] = args.tolerance
        report["ownership_violations"] = violations
        formats.write_stats_json(args.stats, report)
    if result.mismatch_rate > args.tolerance or violations:
        return EXIT_VERIFY
    if args.tolerance == 0 and result.asymmetric_pairs:
        return EXIT_VERIFY
    return EXIT_OK


def cmd_bench(args) -> int:
    base = BuildConfig.from_args(args)
    protocol = bench.BenchProtocol(args.warmup, args.runs, args.timeout)
    matrix = bench.parse_matrix(args.matrix)
    sites = _load_sites(args)
    report = bench.run_bench(sites, protocol, matrix, base, str(args.input), args.machine)
    csv_path = args.csv or args.input.with_suffix(".bench.csv")
    json_path = args.json or args.input.with_suffix(".bench.json")
    bench.write_bench_csv(csv_path, report)
    formats.write_stats_json(json_path, report.as_dict())
    print(f"wrote {csv_path} and {json_path}")
    if not args.no_store:
        record_runs(report.rows())
    for summary in report.as_dict()["configs"]:
        c = summary["config"]
        median = "DNF" if summary["median"] is None else f"{summary['median']:.4f}s"
        print(f"{c['culling']:>11} {c['traversal']:>11} warm_start={c['warm_start']!s:<5} "
              f"leaf={c['leaf_size']:<3} median={median} clip_calls={summary['traversal']['clip_calls']}")
    return EXIT_OK


def cmd_sweep_weights(args) -> int:
    config = BuildConfig.from_args(args)
    if any(r < 0 for r in args.ratios):
        raise ValueError("weight ratios must be >= 0")
    sites = formats.read_sites(args.input)
    if len(sites) == 0:
        raise EmptyInput(f"{args.input}: file holds no sites")
    rows = bench.sweep_weights(sites, args.ratios, args.seeds, config)
    if args.out:
        bench.write_sweep_csv(args.out, rows)
    if not args.no_store:
        machine = bench.machine_descriptor(args.machine)
        record_runs(bench.sweep_rows(rows, str(args.input), len(sites), machine, config))
    print("weight_ratio  empty_ratio  seconds")
    for r in rows:
        print(f"{r.weight_ratio:<12g}  {r.empty_ratio:<11.3f}  {r.seconds:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pwrgram", description="3D power diagrams by per-cell clipping")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    config = _config_flags()

    p = sub.add_parser("gen", help="generate a synthetic site file")
    p.add_argument("kind", choices=["white-noise", "clustered", "density-gradient"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=10, help="cluster count")
    p.add_argument("--sigma", type=float, default=0.1, help="cluster standard deviation")
    p.add_argument("--domain", type=float, nargs=2, default=list(datasets.DEFAULT_DOMAIN),
                   metavar=("LO", "HI"))
    p.add_argument("--precision", type=_choice(PrecisionMode), default=PrecisionMode.DOUBLE)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", parents=[config], help="build a diagram")
    p.add_argument("input", type=Path)
    p.add_argument("--csr", type=Path, required=True)
    p.add_argument("--obj", type=Path)
    p.add_argument("--stats", type=Path)
    p.set_defaults(func=cmd_build, keep_geometry=False)

    p = sub.add_parser("verify", parents=[config], help="compare against the brute-force reference")
    p.add_argument("input", type=Path)
    p.add_argument("--tolerance", type=float, default=0.0)
    p.add_argument("--max-sites", type=int, default=DEFAULT_VERIFY_CAP)
    p.add_argument("--ownership-samples", type=int, default=0)
    p.add_argument("--stats", type=Path)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[config], help="run the benchmark protocol")
    p.add_argument("input", type=Path)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--timeout", type=float, default=300.0)
    p.add_argument("--matrix", action="append", default=[],
                   help="key=v1,v2 over culling, traversal, warm_start, leaf_size, precision")
    p.add_argument("--csv", type=Path, help="per-run rows (default: <input>.bench.csv)")
    p.add_argument("--json", type=Path, help="per-configuration summary (default: <input>.bench.json)")
    p.add_argument("--machine")
    p.add_argument("--no-store", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-weights", parents=[config], help="empty ratio against weight ratio")
    p.add_argument("input", type=Path)
    p.add_argument("--ratios", type=_float_list, default=list(bench.DEFAULT_RATIOS))
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--out", type=Path)
    p.add_argument("--machine")
    p.add_argument("--no-store", action="store_true")
    p.set_defaults(func=cmd_sweep_weights)

    p = sub.add_parser("export", parents=[config], help="write cell meshes as OBJ")
    p.add_argument("input", type=Path)
    p.add_argument("--obj", type=Path, required=True)
    p.set_defaults(func=cmd_export, keep_geometry=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(stream=sys.stdout, level=level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"pwrgram: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, IoFailure) as exc:
        print(f"pwrgram: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PwrgramError as exc:
        print(f"pwrgram: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
