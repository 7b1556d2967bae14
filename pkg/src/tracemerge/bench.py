"""Throughput and memory measurements for the merge pipeline.

Every timed merge runs in a fresh interpreter (multiprocessing "spawn") so
that the OS-reported peak resident size belongs to that run alone. Peak RSS
comes from VmHWM in /proc/self/status where available: getrusage()'s
ru_maxrss survives fork+exec on Linux and would report the parent's peak.
"""

import csv
import math
import multiprocessing as mp
import os
import resource
import sys
import time
import tracemalloc
from typing import NamedTuple

import numpy as np

from .intersect import load_table
from .merge import merge, merge_files
from .pcap_io import open_trace
from .sync import ClockMapping
from .tracegen import AirConfig, MonitorCapture, generate_air, random_monitor
from .uniques import SIDECAR_DTYPE, extract_uniques

MB = 1_000_000


class BenchRow(NamedTuple):
    size_mb: float
    frames: int
    input_bytes: int
    wall_s: float
    mb_per_s: float
    peak_rss_mb: float


def bench_air_config(seed, block):
    return AirConfig(seed=seed * 100_003 + block, duration_us=1_000_000, n_aps=4,
                     data_rate_hz=1500.0, payload_min=1000, payload_max=1500)


def generate_pair(workdir, size_mb, seed=0, loss=0.05):
    """Two monitor traces of roughly ``size_mb`` megabytes each, written block by block."""
    rng = np.random.default_rng(seed)
    paths = [os.path.join(workdir, f"bench{size_mb:g}_{k}.pcap") for k in (0, 1)]
    caps = [MonitorCapture(random_monitor(rng, loss), p) for p in paths]
    offset = 0
    block = 0
    try:
        while min(c.bytes_written for c in caps) < size_mb * MB:
            air = generate_air(bench_air_config(seed, block))
            frames = [f._replace(emit_time_us=f.emit_time_us + offset) for f in air.frames]
            for c in caps:
                c.add(frames)
            offset = frames[-1].emit_time_us + air.config.min_gap_us
            block += 1
    finally:
        for c in caps:
            c.close()
    return paths, sum(len(c.rows) for c in caps)


def peak_rss_mb():
    try:
        with open("/proc/self/status") as f:
            for line in f:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) / 1024.0
    except OSError:
        pass
    kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return kb / 1024.0 / (1024.0 if sys.platform == "darwin" else 1.0)


def _timed_merge(p1, p2, out):
    t0 = time.perf_counter()
    report = merge_files(p1, p2, out)
    wall = time.perf_counter() - t0
    return wall, peak_rss_mb(), report.stats.frames_in_1 + report.stats.frames_in_2


def measure_merge(p1, p2, out):
    """(wall_s, peak_rss_mb, frames) of one pipeline run in a fresh process."""
    ctx = mp.get_context("spawn")
    with ctx.Pool(1) as pool:
        return pool.apply(_timed_merge, (p1, p2, out))


def run_bench(sizes_mb, workdir, seed=0, keep=False, progress=None):
    rows = []
    for size in sizes_mb:
        (p1, p2), _ = generate_pair(workdir, size, seed)
        # Flush the freshly written inputs so their writeback does not land
        # inside the timed run.
        if hasattr(os, "sync"):
            os.sync()
        out = os.path.join(workdir, f"bench{size:g}_merged.pcap")
        nbytes = os.path.getsize(p1) + os.path.getsize(p2)
        try:
            wall, rss, frames = measure_merge(p1, p2, out)
        finally:
            if not keep:
                for p in (p1, p2, out):
                    if os.path.exists(p):
                        os.remove(p)
        row = BenchRow(size, frames, nbytes, wall, nbytes / MB / wall, rss)
        if progress:
            progress(row)
        rows.append(row)
    return rows


def linear_fit(xs, ys):
    """Least-squares (slope, intercept, max relative residual)."""
    slope, intercept = np.polyfit(np.asarray(xs, float), np.asarray(ys, float), 1)
    fitted = slope * np.asarray(xs, float) + intercept
    rel = np.abs(np.asarray(ys, float) - fitted) / fitted
    return float(slope), float(intercept), float(rel.max())


def write_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BenchRow._fields)
        for r in rows:
            w.writerow([f"{v:.4f}" if isinstance(v, float) else v for v in r])


def random_digests(n, seed=0):
    rng = np.random.default_rng(seed)
    arr = np.zeros(n, dtype=SIDECAR_DTYPE)
    arr["lo"] = rng.integers(0, 2**63, n, dtype=np.uint64) * 2 + rng.integers(0, 2, n, dtype=np.uint64)
    arr["hi"] = rng.integers(0, 2**63, n, dtype=np.uint64)
    arr["ts"] = np.arange(n, dtype=np.uint64) * 1000
    arr["ord"] = np.arange(n, dtype=np.uint64) * 7
    return arr


def digest_table_bytes(n, seed=0, presize=True):
    """(resident bytes per digest, peak bytes per digest) for a loaded table."""
    digests = random_digests(n, seed)
    tracemalloc.start()
    try:
        base = tracemalloc.get_traced_memory()[0]
        table = load_table(digests, expected=n if presize else 0)
        current, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    assert len(table) == n
    return (current - base) / n, (peak - base) / n


def streaming_peak(p1, p2=None):
    """tracemalloc peak (bytes) of extraction over p1, and of a merge of p1 with p2."""
    tracemalloc.start()
    try:
        with open_trace(p1) as r:
            tracemalloc.reset_peak()
            base = tracemalloc.get_traced_memory()[0]
            for _ in extract_uniques(r):
                pass
            extract_peak = tracemalloc.get_traced_memory()[1] - base
        merge_peak = math.nan
        if p2 is not None:
            mapping = ClockMapping.identity()
            with open_trace(p1) as r1, open_trace(p2) as r2:
                tracemalloc.reset_peak()
                base = tracemalloc.get_traced_memory()[0]
                merge(r1, r2, mapping, None)
                merge_peak = tracemalloc.get_traced_memory()[1] - base
    finally:
        tracemalloc.stop()
    return extract_peak, merge_peak


def _streaming_in_child(p1, p2):
    with open_trace(p1) as r:
        for _ in extract_uniques(r):
            pass
    with open_trace(p1) as r1, open_trace(p2) as r2:
        merge(r1, r2, ClockMapping.identity(), None)
    return peak_rss_mb()


def streaming_rss(p1, p2):
    """Peak RSS (MB) of a fresh process running extraction and the merge pass."""
    ctx = mp.get_context("spawn")
    with ctx.Pool(1) as pool:
        return pool.apply(_streaming_in_child, (p1, p2))
