from collections import Counter

import pytest

from tracemerge.errors import MixedLinkType, TooFewReferences, UnorderedInput
from tracemerge.frame80211 import mac_bytes
from tracemerge.merge import content_identical, merge, merge_files, merge_many
from tracemerge.pcap_io import FrameRecord, TraceHeader, create_writer, open_trace, read_all
from tracemerge.sync import ClockMapping
from tracemerge.tracegen import MonitorModel, capture, expected_union, shared_times
from tracemerge.validate import find_duplicate_unique_frames

from helpers import (
    AP,
    beacon,
    data_frame,
    fcs_of,
    merge_and_check,
    radiotap,
    scenario,
    union_mismatch,
    write_pcap,
)

T0 = 1_100_000_000_000_000


def run_merge(tmp_path, items1, items2, mapping=None, linktype=105, **kw):
    p1 = write_pcap(tmp_path / "a.pcap", items1, linktype)
    p2 = write_pcap(tmp_path / "b.pcap", items2, linktype)
    out = tmp_path / "o.pcap"
    with open_trace(p1) as r1, open_trace(p2) as r2, \
            create_writer(out, TraceHeader(linktype=linktype)) as w:
        stats = merge(r1, r2, mapping or ClockMapping.identity(), w, **kw)
    return stats, read_all(out)[1]


def test_self_merge_is_identity(tmp_path):
    _, (p1, _), _, _ = scenario(tmp_path, 1, duration_us=2_000_000)
    out = tmp_path / "self.pcap"
    with open_trace(p1) as a, open_trace(p1) as b, \
            create_writer(out, a.header) as w:
        stats = merge(a, b, ClockMapping.identity(), w)
    _, original = read_all(p1)
    assert stats.duplicates_unified == len(original) == stats.frames_out
    assert out.read_bytes() == open(p1, "rb").read()


@pytest.mark.parametrize("dt, n_out", [(0, 1), (105, 1), (106, 2), (107, 2), (-105, 1), (-106, 2)])
def test_duplicate_threshold(tmp_path, dt, n_out):
    f = beacon(77)
    stats, out = run_merge(tmp_path, [(T0, f)], [(T0 + dt, f)])
    assert len(out) == n_out == stats.frames_out
    assert stats.duplicates_unified == 2 - n_out
    if n_out == 1:
        assert out[0].ts_us == T0 + dt  # the trace-2 copy is written


def test_different_content_is_never_unified(tmp_path):
    stats, out = run_merge(tmp_path, [(T0, beacon(1))], [(T0, beacon(2))])
    assert stats.duplicates_unified == 0
    # Equal timestamps: the trace-1 frame goes first.
    assert [r.payload for r in out] == [beacon(1), beacon(2)]


def test_content_identity_ignores_phy_header_and_fcs():
    mac = data_frame(AP, 5, b"hello" * 10)
    pa = radiotap(signal=-30) + mac
    pb = radiotap(tsft=False, fcs=True) + mac + fcs_of(mac)
    pc = mac[:-1] + b"X"
    a = FrameRecord(0, len(pa), pa, 0, 127)
    b = FrameRecord(0, len(pb), pb, 0, 127)
    c = FrameRecord(0, len(pc), pc, 0, 105)
    assert content_identical(a, b)
    assert not content_identical(a, c)


def test_digest_collision_is_caught_by_byte_comparison(tmp_path):
    weak = lambda mac: mac[:2]  # noqa: E731  every beacon collides under this digest
    f1, f2 = beacon(100), beacon(200)
    r1 = FrameRecord(0, len(f1), f1, 0, 105)
    r2 = FrameRecord(0, len(f2), f2, 0, 105)
    assert weak(f1) == weak(f2)
    assert not content_identical(r1, r2, digest=weak)
    stats, out = run_merge(tmp_path, [(T0, f1)], [(T0 + 10, f2)], digest=weak)
    assert stats.duplicates_unified == 0 and len(out) == 2


@pytest.mark.parametrize("seed, loss", [(0, 0.0), (1, 0.1), (2, 0.3), (3, (0.0, 0.5))])
def test_generator_merge_recovers_union(tmp_path, seed, loss):
    report, mismatch, (air, p1, p2, manifests, out) = merge_and_check(
        tmp_path, seed, loss=loss, duration_us=5_000_000)
    assert mismatch is None, mismatch
    s = report.stats
    assert s.frames_out == s.frames_in_1 + s.frames_in_2 - s.duplicates_unified
    assert s.duplicates_unified == len(shared_times(*manifests))
    assert s.clamped == 0

    # Output is in trace 2's timebase: frames seen by monitor 2 keep their stamps.
    _, recs = read_all(out)
    m2 = {air.frames[r.air_id].mac: r.captured_ts_us for r in manifests[1]}
    union = expected_union(*manifests)
    by_id = dict(zip(union, recs))
    for air_id in union:
        mac = air.frames[air_id].mac
        if mac in m2 and air.frames[air_id].kind != "ack":
            assert by_id[air_id].ts_us == m2[mac]
    ts = [r.ts_us for r in recs]
    assert ts == sorted(ts)
    with open_trace(out) as r:
        assert find_duplicate_unique_frames(r) == []


def test_conservation_and_commutativity(tmp_path):
    _, (p1, p2), _, _ = scenario(tmp_path, 9, loss=0.2, duration_us=4_000_000)
    merge_files(p1, p2, tmp_path / "ab.pcap")
    merge_files(p2, p1, tmp_path / "ba.pcap")
    inputs = {r.payload for p in (p1, p2) for r in read_all(p)[1]}
    ab = read_all(tmp_path / "ab.pcap")[1]
    ba = read_all(tmp_path / "ba.pcap")[1]
    assert all(r.payload in inputs for r in ab)
    assert Counter(mac_bytes(r) for r in ab) == Counter(mac_bytes(r) for r in ba)


def test_merge_many_four_monitors(tmp_path):
    air, paths, manifests, _ = scenario(tmp_path, 21, loss=[0.3, 0.4, 0.2, 0.5], n_monitors=4,
                                        duration_us=5_000_000)
    reports = merge_many(paths, tmp_path / "all.pcap")
    assert len(reports) == 3
    assert union_mismatch(tmp_path / "all.pcap", air, manifests) is None


def test_merge_many_of_two_equals_pairwise(tmp_path):
    _, (p1, p2), _, _ = scenario(tmp_path, 4, duration_us=3_000_000)
    merge_many([p1, p2], tmp_path / "many.pcap")
    merge_files(p1, p2, tmp_path / "one.pcap")
    assert (tmp_path / "many.pcap").read_bytes() == (tmp_path / "one.pcap").read_bytes()


def test_mixed_linktypes_are_stripped_to_raw(tmp_path):
    air, paths, manifests, _ = scenario(tmp_path, 6, duration_us=3_000_000)
    # Re-capture monitor 2 as raw 802.11.
    manifests[1] = capture(air, MonitorModel(loss_prob=0.2, seed=77, clock_b=-1e6,
                                             linktype=105), tmp_path / "raw.pcap")
    report = merge_files(paths[0], tmp_path / "raw.pcap", tmp_path / "mixed.pcap")
    header, recs = read_all(tmp_path / "mixed.pcap")
    assert header.linktype == 105
    assert union_mismatch(tmp_path / "mixed.pcap", air, manifests) is None
    assert all(r.original_len == len(r.payload) for r in recs)
    assert report.stats.duplicates_unified == len(shared_times(*manifests))


def test_fcs_monitor_merges_with_plain_monitor(tmp_path):
    air, paths, manifests, _ = scenario(tmp_path, 12, duration_us=3_000_000)
    manifests[1] = capture(air, MonitorModel(loss_prob=0.2, seed=5, clock_a=1 + 4e-5, fcs=True),
                           tmp_path / "fcs.pcap")
    merge_files(paths[0], tmp_path / "fcs.pcap", tmp_path / "m.pcap")
    assert union_mismatch(tmp_path / "m.pcap", air, manifests) is None


def test_writer_rejects_foreign_linktype(tmp_path):
    p1 = write_pcap(tmp_path / "a.pcap", [(T0, radiotap() + beacon(1))], 127)
    p2 = write_pcap(tmp_path / "b.pcap", [(T0 + 500, radiotap() + beacon(2))], 127)
    with open_trace(p1) as r1, open_trace(p2) as r2, \
            create_writer(tmp_path / "o.pcap", TraceHeader(linktype=127)) as w:
        merge(r1, r2, ClockMapping.identity(), w)
    raw = write_pcap(tmp_path / "c.pcap", [(T0, beacon(3))], 105)
    with open_trace(raw) as r1, open_trace(p2) as r2, \
            create_writer(tmp_path / "o2.pcap", TraceHeader(linktype=127)) as w:
        with pytest.raises(MixedLinkType):
            merge(r1, r2, ClockMapping.identity(), w)


def test_unordered_input(tmp_path):
    items = [(T0, beacon(1)), (T0 + 5000, beacon(2)), (T0 + 3000, beacon(3))]
    with pytest.raises(UnorderedInput) as exc:
        run_merge(tmp_path, items, [(T0, beacon(9))])
    assert exc.value.ordinal == 2
    # Small regressions within the tolerance are accepted and clamped.
    items = [(T0, beacon(1)), (T0 + 5000, beacon(2)), (T0 + 4500, beacon(3))]
    stats, out = run_merge(tmp_path, items, [(T0 + 10**6, beacon(9))])
    assert stats.clamped == 1 and [r.ts_us for r in out] == [T0, T0 + 5000, T0 + 5000, T0 + 10**6]


def test_too_few_references_names_the_step(tmp_path):
    _, (a, b), _, _ = scenario(tmp_path / "x", 1, duration_us=2_000_000)
    _, (c, _), _, _ = scenario(tmp_path / "y", 2, duration_us=2_000_000)
    with pytest.raises(TooFewReferences, match="step 2"):
        merge_many([a, b, c], tmp_path / "out.pcap")
