"""Duplicate-aware merge of two synchronized traces, and the full pipeline.

Two cursors walk the traces; trace-1 times are mapped into trace 2's
timebase and the earlier head frame is written. Heads with identical MAC
content closer than 106 us are a single on-air frame and are written once
(the trace-2 copy).
"""

import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field

from .errors import FormatError, MixedLinkType, TooFewReferences, UnorderedInput
from .frame80211 import mac_bounds
from .intersect import (
    DEFAULT_DELTA_MAX_US,
    DEFAULT_NEIGHBOR_WINDOW,
    intersect,
    prune_invalid_references,
)
from .pcap_io import LINKTYPE_IEEE802_11, TraceHeader, create_writer, open_trace
from .sync import DEFAULT_WINDOW, ClockMapping, fit_mapping
from .uniques import UniqueStream, frame_hash

log = logging.getLogger(__name__)

DUPLICATE_THRESHOLD_US = 106
DEFAULT_ORDER_TOLERANCE_US = 1000


@dataclass
class MergeStats:
    frames_in_1: int = 0
    frames_in_2: int = 0
    duplicates_unified: int = 0
    frames_out: int = 0
    # Output timestamps raised to keep the output non-decreasing.
    clamped: int = 0
    sync_error_sum: int = 0

    @property
    def avg_sync_error(self):
        if not self.duplicates_unified:
            return float("nan")
        return self.sync_error_sum / self.duplicates_unified

    @property
    def shared_fraction(self):
        total = self.frames_out
        return self.duplicates_unified / total if total else 0.0

    def lines(self):
        return [
            f"frames_in_1={self.frames_in_1}",
            f"frames_in_2={self.frames_in_2}",
            f"duplicates_unified={self.duplicates_unified}",
            f"frames_out={self.frames_out}",
            f"clamped={self.clamped}",
            f"avg_sync_error_us={self.avg_sync_error:.3f}",
        ]


def _mac(rec):
    try:
        start, end, _ = mac_bounds(rec.payload, rec.linktype, rec.original_len)
    except FormatError:
        return rec.payload
    return rec.payload[start:end]


def content_identical(r1, r2, digest=frame_hash) -> bool:
    """True iff both records carry the same MAC frame, PHY header and FCS aside."""
    m1 = _mac(r1)
    m2 = _mac(r2)
    if digest(m1) != digest(m2):
        return False
    return m1 == m2


def _stripped(rec):
    """(payload, original_len) of a record reduced to its bare MAC frame."""
    try:
        start, end, fcs = mac_bounds(rec.payload, rec.linktype, rec.original_len)
    except FormatError:
        return rec.payload, rec.original_len
    mac = rec.payload[start:end]
    removed = start + (4 if fcs else 0)
    return mac, max(len(mac), rec.original_len - removed)


class _Input:
    __slots__ = ("it", "name", "tol", "last", "count")

    def __init__(self, records, name, tol):
        self.it = iter(records)
        self.name = name
        self.tol = tol
        self.last = None
        self.count = 0

    def next(self):
        rec = next(self.it, None)
        if rec is None:
            return None
        if self.last is not None and rec.ts_us < self.last - self.tol:
            raise UnorderedInput(rec.ordinal, f"{self.name}: timestamps regress at record "
                                              f"{rec.ordinal} ({rec.ts_us} < {self.last})")
        if self.last is None or rec.ts_us > self.last:
            self.last = rec.ts_us
        self.count += 1
        return rec


def merge(t1, t2, mapping: ClockMapping, out, threshold_us=DUPLICATE_THRESHOLD_US,
          order_tolerance_us=DEFAULT_ORDER_TOLERANCE_US, shared=None, digest=frame_hash):
    """Merge two record streams into ``out`` (a TraceWriter, or None to dry-run).

    ``shared``, if given, receives (t1_us, t2_us) for every unified pair.
    """
    stats = MergeStats()
    in1 = _Input(t1, "trace 1", order_tolerance_us)
    in2 = _Input(t2, "trace 2", order_tolerance_us)
    out_lt = out.header.linktype if out is not None else None
    write = out.write if out is not None else None
    last_out = -1

    def emit(ts, rec):
        nonlocal last_out
        if ts < last_out:
            stats.clamped += 1
            ts = last_out
        last_out = ts
        stats.frames_out += 1
        if write is None:
            return
        if rec.linktype == out_lt:
            write(ts, rec.payload, rec.original_len)
        elif out_lt == LINKTYPE_IEEE802_11:
            payload, orig = _stripped(rec)
            write(ts, payload, orig)
        else:
            raise MixedLinkType(f"cannot write link type {rec.linktype} into a "
                                f"link type {out_lt} trace")

    f1 = in1.next()
    f2 = in2.next()
    m1 = mapping(f1.ts_us) if f1 is not None else None
    while f1 is not None or f2 is not None:
        if f1 is None:
            emit(f2.ts_us, f2)
            f2 = in2.next()
        elif f2 is None:
            emit(m1, f1)
            f1 = in1.next()
            m1 = mapping(f1.ts_us) if f1 is not None else None
        else:
            gap = abs(m1 - f2.ts_us)
            if gap < threshold_us and content_identical(f1, f2, digest):
                emit(f2.ts_us, f2)
                stats.duplicates_unified += 1
                stats.sync_error_sum += gap
                if shared is not None:
                    shared.append((f1.ts_us, f2.ts_us))
                f1 = in1.next()
                m1 = mapping(f1.ts_us) if f1 is not None else None
                f2 = in2.next()
            elif m1 <= f2.ts_us:
                emit(m1, f1)
                f1 = in1.next()
                m1 = mapping(f1.ts_us) if f1 is not None else None
            else:
                emit(f2.ts_us, f2)
                f2 = in2.next()
    stats.frames_in_1 = in1.count
    stats.frames_in_2 = in2.count
    if stats.clamped:
        log.warning("%d mapped timestamps stepped backwards and were clamped", stats.clamped)
    return stats


@dataclass
class MergeReport:
    trace1: str
    trace2: str
    output: str | None
    stats: MergeStats
    mapping: ClockMapping
    references: list
    rejected: list = field(default_factory=list)
    collisions: list = field(default_factory=list)
    window: int = DEFAULT_WINDOW

    def lines(self):
        head = [
            f"trace1={self.trace1}",
            f"trace2={self.trace2}",
            f"references={len(self.references)}",
            f"rejected_references={len(self.rejected)}",
            f"collisions={len(self.collisions)}",
            f"window={self.window}",
            f"mapping_reversals={len(self.mapping.monotonicity_violations())}",
        ]
        return head + self.stats.lines()


def reference_pairs(path1, path2, delta_max_us=DEFAULT_DELTA_MAX_US,
                    neighbor_window=DEFAULT_NEIGHBOR_WINDOW):
    """uniques -> intersection -> pruning. Returns (kept, rejected, collisions)."""
    pairs, collisions = intersect(UniqueStream(path1), UniqueStream(path2))
    if len(pairs) < 2:
        raise TooFewReferences(f"{path1} and {path2} share only {len(pairs)} unique frames")
    kept, rejected = prune_invalid_references(pairs, neighbor_window, delta_max_us)
    return kept, rejected, collisions


def output_header(h1: TraceHeader, h2: TraceHeader) -> TraceHeader:
    linktype = h2.linktype if h1.linktype == h2.linktype else LINKTYPE_IEEE802_11
    return TraceHeader(linktype=linktype, snaplen=max(h1.snaplen, h2.snaplen))


def merge_files(path1, path2, out_path, window=DEFAULT_WINDOW,
                delta_max_us=DEFAULT_DELTA_MAX_US, neighbor_window=DEFAULT_NEIGHBOR_WINDOW,
                threshold_us=DUPLICATE_THRESHOLD_US, pairs=None,
                order_tolerance_us=DEFAULT_ORDER_TOLERANCE_US) -> MergeReport:
    """Run the whole pipeline on two PCAP files.

    ``pairs`` may supply precomputed (already pruned) reference pairs, in
    which case extraction and intersection are skipped.
    """
    if pairs is None:
        kept, rejected, collisions = reference_pairs(path1, path2, delta_max_us, neighbor_window)
    else:
        kept, rejected, collisions = sorted(pairs, key=lambda p: p.t1_us), [], []
    mapping = fit_mapping(kept, window)
    with open_trace(path1) as r1, open_trace(path2) as r2:
        header = output_header(r1.header, r2.header)
        with create_writer(out_path, header) as w:
            stats = merge(r1, r2, mapping, w, threshold_us, order_tolerance_us)
    return MergeReport(str(path1), str(path2), str(out_path), stats, mapping,
                       kept, rejected, collisions, window)


def shared_frames(path1, path2, mapping, threshold_us=DUPLICATE_THRESHOLD_US):
    """(t1, t2) of frames the merge would unify, without writing anything."""
    shared = []
    with open_trace(path1) as r1, open_trace(path2) as r2:
        merge(r1, r2, mapping, None, threshold_us, shared=shared)
    return shared


def merge_many(paths, out_path, **kwargs):
    """Left fold of pairwise merges: ((T1+T2)+T3)+...

    Returns the per-step MergeReports. The final trace is in the timebase
    of the last input.
    """
    paths = [str(p) for p in paths]
    if len(paths) < 2:
        raise ValueError("merging needs at least two traces")
    out_path = str(out_path)
    reports = []
    tmpdir = tempfile.mkdtemp(prefix="tracemerge-", dir=os.path.dirname(os.path.abspath(out_path)))
    try:
        acc = paths[0]
        for step, nxt in enumerate(paths[1:], start=1):
            last = step == len(paths) - 1
            target = out_path if last else os.path.join(tmpdir, f"step{step}.pcap")
            try:
                report = merge_files(acc, nxt, target, **kwargs)
            except TooFewReferences as exc:
                raise TooFewReferences(f"step {step} ({acc} + {nxt}): {exc}") from exc
            reports.append(report)
            acc = target
    finally:
        shutil.rmtree(tmpdir, ignore_errors=True)
    return reports
