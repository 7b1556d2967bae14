"""Command-line entry point: ``tracemerge <command> ...``.

Exit codes: 0 success, 1 usage error, 2 I/O or format error,
3 anomalies found by ``validate``, 4 too few reference frames.
"""

import argparse
import csv
import logging
import os
import sys

from . import bench as bench_mod
from .errors import TooFewReferences, TraceError
from .intersect import (
    DEFAULT_DELTA_MAX_US,
    DEFAULT_NEIGHBOR_WINDOW,
    intersect,
    prune_invalid_references,
    read_pairs_csv,
    write_pairs_csv,
)
from .merge import DUPLICATE_THRESHOLD_US, merge_many, reference_pairs, shared_frames
from .pcap_io import open_trace
from .sync import DEFAULT_WINDOW, average_sync_error, fit_mapping
from .tracegen import generate_scenario, load_scenario, read_manifest, shared_times, write_air
from .uniques import ExtractStats, UniqueStream, extract_uniques, write_sidecar
from .validate import (
    EXIT_ANOMALIES,
    EXIT_CLEAN,
    find_duplicate_data_frames,
    find_duplicate_unique_frames,
    report_lines,
)

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NO_REFERENCES = 4

log = logging.getLogger("tracemerge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _window_list(text):
    out = []
    for part in text.split(","):
        if "-" in part:
            a, b = part.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("windows must be positive integers")
    return out


def _add_sync_flags(p):
    p.add_argument("--window", "-w", type=int, default=DEFAULT_WINDOW,
                   help="regression window parameter w (w+1 references per fit, default 2)")
    p.add_argument("--delta-max", type=int, default=DEFAULT_DELTA_MAX_US, metavar="US",
                   help="max deviation of a reference's clock offset from its neighbours' "
                        "median before it is pruned (default 100000)")
    p.add_argument("--neighbor-window", type=int, default=DEFAULT_NEIGHBOR_WINDOW, metavar="N",
                   help="neighbours used for the offset median (default 5)")


def build_parser():
    parser = _Parser(prog="tracemerge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("merge", help="merge two or more traces")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    _add_sync_flags(p)
    p.add_argument("--threshold", type=int, default=DUPLICATE_THRESHOLD_US, metavar="US",
                   help="duplicate window in microseconds (default 106)")
    p.add_argument("--pairs", help="precomputed reference pairs CSV (two inputs only)")
    p.add_argument("--kv", action="store_true", help="print stats as key=value lines")

    p = sub.add_parser("uniques", help="extract unique-frame digests")
    p.add_argument("trace")
    p.add_argument("-o", "--output", required=True, help="sidecar file to write")

    p = sub.add_parser("intersect", help="find reference frames shared by two traces")
    p.add_argument("first", help="trace or uniques sidecar")
    p.add_argument("second", help="trace or uniques sidecar")
    p.add_argument("-o", "--output", help="CSV of reference pairs")
    p.add_argument("--no-prune", action="store_true")
    p.add_argument("--delta-max", type=int, default=DEFAULT_DELTA_MAX_US, metavar="US")
    p.add_argument("--neighbor-window", type=int, default=DEFAULT_NEIGHBOR_WINDOW, metavar="N")

    p = sub.add_parser("sync-error", help="fit the clock mapping and report its error")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--window", "-w", type=_window_list, default=[DEFAULT_WINDOW],
                   help="window parameter(s), e.g. 2 or 1-10 or 1,2,4")
    p.add_argument("--delta-max", type=int, default=DEFAULT_DELTA_MAX_US, metavar="US")
    p.add_argument("--neighbor-window", type=int, default=DEFAULT_NEIGHBOR_WINDOW, metavar="N")
    p.add_argument("--manifests", nargs=2, metavar=("CSV1", "CSV2"),
                   help="ground-truth manifests; otherwise the frames a merge would unify are used")
    p.add_argument("--segments", action="store_true", help="print every mapping segment")
    p.add_argument("--csv", help="write window,error rows here")

    p = sub.add_parser("validate", help="run duplicate heuristics on traces")
    p.add_argument("traces", nargs="+")

    p = sub.add_parser("gen", help="generate a synthetic scenario")
    p.add_argument("config", help="key=value scenario file")
    p.add_argument("-o", "--outdir", required=True)

    p = sub.add_parser("bench", help="throughput / memory measurements")
    p.add_argument("--sizes", default="100,500,1000", help="per-trace sizes in MB")
    p.add_argument("--workdir", default=".")
    p.add_argument("--csv", help="write the report here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--digests", type=int, default=1_000_000,
                   help="table size for the per-digest memory measurement")
    return parser


def cmd_merge(args):
    if len(args.inputs) < 2:
        raise UsageError("merge needs at least two input traces")
    kwargs = dict(window=args.window, delta_max_us=args.delta_max,
                  neighbor_window=args.neighbor_window, threshold_us=args.threshold)
    if args.pairs:
        if len(args.inputs) != 2:
            raise UsageError("--pairs only applies to a two-trace merge")
        kwargs["pairs"] = read_pairs_csv(args.pairs)
    reports = merge_many(args.inputs, args.output, **kwargs)
    for step, rep in enumerate(reports, 1):
        if args.kv:
            print(f"step={step}")
            for line in rep.lines():
                print(line)
        else:
            s = rep.stats
            print(f"step {step}: {rep.trace1} + {rep.trace2}")
            print(f"  references {len(rep.references)} (rejected {len(rep.rejected)}, "
                  f"collisions {len(rep.collisions)})")
            print(f"  frames in {s.frames_in_1} + {s.frames_in_2}, unified {s.duplicates_unified} "
                  f"({100 * s.shared_fraction:.1f}% shared), out {s.frames_out}")
            print(f"  average synchronization error {s.avg_sync_error:.2f} us")
    return 0


def cmd_uniques(args):
    stats = ExtractStats()
    with open_trace(args.trace) as reader:
        n = write_sidecar(args.output, extract_uniques(reader, stats))
    print(f"{args.trace}: {n} unique frames out of {stats.frames} "
          f"({stats.malformed} malformed skipped)")
    return 0


def cmd_intersect(args):
    pairs, collisions = intersect(UniqueStream(args.first), UniqueStream(args.second))
    filtered = sum(c.disposition == "filtered" for c in collisions)
    print(f"{len(pairs)} reference pairs, {filtered} filtered collisions, "
          f"{len(collisions) - filtered} cross-trace suspects")
    rejected = []
    if not args.no_prune:
        pairs, rejected = prune_invalid_references(pairs, args.neighbor_window, args.delta_max)
        print(f"{len(rejected)} invalid references pruned, {len(pairs)} kept")
    if args.output:
        write_pairs_csv(args.output, pairs)
    return 0


def cmd_sync_error(args):
    kept, rejected, _ = reference_pairs(args.first, args.second, args.delta_max,
                                        args.neighbor_window)
    truth = None
    if args.manifests:
        truth = shared_times(read_manifest(args.manifests[0]), read_manifest(args.manifests[1]))
    rows = []
    for w in args.window:
        mapping = fit_mapping(kept, w)
        shared = truth if truth is not None else shared_frames(args.first, args.second, mapping)
        err = average_sync_error(shared, mapping)
        rows.append((w, err, len(shared)))
        print(f"w={w} segments={len(mapping)} shared={len(shared)} "
              f"avg_error_us={err:.3f} reversals={len(mapping.monotonicity_violations())}")
        if args.segments:
            for s in mapping.segments:
                print(f"  [{s.t1_start}, {s.t1_end}) a={s.a:.9f} b={s.b:.1f}")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["window", "avg_error_us", "shared"])
            for row in rows:
                w.writerow([row[0], f"{row[1]:.4f}", row[2]])
    return 0


def cmd_validate(args):
    dirty = False
    for path in args.traces:
        with open_trace(path) as r:
            groups = find_duplicate_unique_frames(r)
        with open_trace(path) as r:
            anomalies = find_duplicate_data_frames(r)
        for line in report_lines(path, groups, anomalies):
            print(line)
        dirty = dirty or bool(groups or anomalies)
    return EXIT_ANOMALIES if dirty else EXIT_CLEAN


def cmd_gen(args):
    air_cfg, monitors = load_scenario(args.config)
    air, paths, manifests = generate_scenario(air_cfg, monitors, args.outdir)
    write_air(os.path.join(args.outdir, "air.csv"), air)
    print(f"{len(air)} air frames")
    for p, m in zip(paths, manifests):
        print(f"{p}: {len(m)} frames")
    return 0


def cmd_bench(args):
    sizes = [float(s) for s in args.sizes.split(",")]
    os.makedirs(args.workdir, exist_ok=True)
    print("size_mb frames wall_s mb_per_s peak_rss_mb")

    def show(r):
        print(f"{r.size_mb:g} {r.frames} {r.wall_s:.2f} {r.mb_per_s:.1f} {r.peak_rss_mb:.1f}",
              flush=True)

    rows = bench_mod.run_bench(sizes, args.workdir, args.seed, progress=show)
    if len(rows) >= 3:
        slope, icpt, resid = bench_mod.linear_fit([r.input_bytes / 1e9 for r in rows],
                                                  [r.wall_s for r in rows])
        print(f"linear fit: {slope:.2f} s/GB + {icpt:.2f} s, "
              f"max relative residual {100 * resid:.1f}%")
    if args.digests:
        resident, peak = bench_mod.digest_table_bytes(args.digests)
        print(f"digest table: {resident:.1f} B/digest resident, {peak:.1f} B/digest peak "
              f"({args.digests} digests)")
    if args.csv:
        bench_mod.write_csv(args.csv, rows)
    return 0


COMMANDS = {
    "merge": cmd_merge,
    "uniques": cmd_uniques,
    "intersect": cmd_intersect,
    "sync-error": cmd_sync_error,
    "validate": cmd_validate,
    "gen": cmd_gen,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tracemerge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TooFewReferences as exc:
        print(f"tracemerge: {exc}", file=sys.stderr)
        return EXIT_NO_REFERENCES
    except (TraceError, OSError) as exc:
        print(f"tracemerge: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
