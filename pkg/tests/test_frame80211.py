import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracemerge.errors import FormatError, MalformedRadiotap, TooShort
from tracemerge.frame80211 import (
    FrameType,
    format_mac,
    is_unique_candidate,
    mac_bytes,
    parse_frame,
    parse_mac_str,
    radiotap_info,
    sender_and_seq,
)
from tracemerge.pcap_io import FrameRecord, read_all
from tracemerge.tracegen import AirConfig, MonitorModel, capture, generate_air

from helpers import (
    AP,
    ack_frame,
    beacon,
    data_frame,
    fcs_of,
    mgmt_frame,
    probe_response,
    radiotap,
)


def rec(payload, linktype=105, original_len=None):
    return FrameRecord(0, len(payload) if original_len is None else original_len, payload, 0,
                       linktype)


def test_beacon_layout():
    tsf = 0x0123456789ABCDEF
    raw = mgmt_frame(8, tsf, seq=77)
    assert len(raw) == 24 + 12
    f = parse_frame(rec(raw))
    assert f.ftype == FrameType.MANAGEMENT and f.subtype == 8 and f.is_beacon
    assert not f.retry
    assert f.mgmt_timestamp == tsf == int.from_bytes(raw[24:32], "little")
    assert f.seq_num == 77
    assert f.addr2 == AP and f.body_offset == 0 and not f.fcs_present


def test_retry_bit():
    assert parse_frame(rec(mgmt_frame(8, 5, retry=True))).retry
    assert not parse_frame(rec(mgmt_frame(8, 5))).retry


@pytest.mark.parametrize("raw, expected", [
    (beacon(1), True),
    (beacon(1, retry=True), True),
    (probe_response(1), True),
    (probe_response(1, retry=True), False),
    (data_frame(AP, 3, b"payload"), False),
    (ack_frame(AP), False),
    (mgmt_frame(4, 1), False),  # probe request
])
def test_unique_candidate_rule(raw, expected):
    assert is_unique_candidate(parse_frame(rec(raw))) is expected


def test_truncated_beacon_is_not_a_candidate():
    raw = beacon(0xFFFF_0000_1111)
    cut = raw[:24 + 7]
    f = parse_frame(rec(cut, original_len=len(raw)))
    assert f.is_beacon and f.mgmt_timestamp is None
    assert not is_unique_candidate(f)


def test_sender_and_seq():
    sender = parse_mac_str("aa:00:00:00:00:01")
    f = parse_frame(rec(data_frame(sender, 7, b"\xaa\xaa\x03" + b"x" * 20)))
    assert f.ftype == FrameType.DATA
    assert sender_and_seq(f) == (sender, 7)
    assert format_mac(sender) == "aa:00:00:00:00:01"
    ack = parse_frame(rec(ack_frame(sender)))
    assert ack.ftype == FrameType.CONTROL and ack.seq_num is None
    assert sender_and_seq(ack) is None


@pytest.mark.parametrize("tsft", [True, False])
def test_radiotap_offset_and_fcs(tsft):
    mac = beacon(42)
    plain = radiotap(tsft=tsft) + mac
    f = parse_frame(rec(plain, 127))
    assert f.body_offset == (23 if tsft else 15) and not f.fcs_present
    assert mac_bytes(rec(plain, 127)) == mac

    with_fcs = radiotap(tsft=tsft, fcs=True) + mac + fcs_of(mac)
    f = parse_frame(rec(with_fcs, 127))
    assert f.fcs_present and f.mac_end == len(with_fcs) - 4
    assert mac_bytes(rec(with_fcs, 127)) == mac
    assert f.mgmt_timestamp == 42


def test_fcs_not_trimmed_from_snaplen_truncated_record():
    mac = data_frame(AP, 1, b"z" * 100)
    full = radiotap(fcs=True) + mac + fcs_of(mac)
    cut = full[:60]
    assert mac_bytes(rec(cut, 127, original_len=len(full))) == cut[23:]


def test_radiotap_extended_bitmap_alignment():
    # Two present words (bit 31 set in the first), then TSFT aligned to 8,
    # then Flags with the FCS bit.
    present0 = (1 << 0) | (1 << 1) | (1 << 31)
    hdr = struct.pack("<BBHII", 0, 0, 25, present0, 0) + b"\x00" * 4 + struct.pack("<Q", 9) + b"\x10"
    assert len(hdr) == 25
    assert radiotap_info(hdr + b"\x00" * 10) == (25, True)


def test_malformed_radiotap():
    with pytest.raises(MalformedRadiotap):
        parse_frame(rec(struct.pack("<BBHI", 0, 0, 200, 0) + beacon(1), 127))
    with pytest.raises(MalformedRadiotap):
        parse_frame(rec(struct.pack("<BBHI", 1, 0, 8, 0) + beacon(1), 127))


def test_too_short():
    with pytest.raises(TooShort):
        parse_frame(rec(b"\x80"))
    with pytest.raises(TooShort):
        parse_frame(rec(b""))


@given(st.binary(min_size=0, max_size=80), st.sampled_from([105, 127]))
@settings(max_examples=400, deadline=None)
def test_parsing_is_total_and_pure(raw, linktype):
    r = rec(raw, linktype)
    try:
        a = parse_frame(r)
    except FormatError:
        with pytest.raises(FormatError):
            parse_frame(r)
        return
    assert parse_frame(r) == a
    if a.mgmt_timestamp is not None:
        assert a.ftype == FrameType.MANAGEMENT and a.subtype in (5, 8)


_KINDS = {"beacon": (FrameType.MANAGEMENT, 8), "probe_resp": (FrameType.MANAGEMENT, 5),
          "data": (FrameType.DATA, 0), "ack": (FrameType.CONTROL, 13)}


@pytest.mark.parametrize("linktype, fcs, tsft", [(127, False, True), (127, True, False),
                                                 (105, False, True)])
def test_generator_labels(tmp_path, linktype, fcs, tsft):
    air = generate_air(AirConfig(seed=3, duration_us=2_000_000, probe_rate_hz=40))
    mon = MonitorModel(loss_prob=0.1, seed=9, linktype=linktype, fcs=fcs, radiotap_tsft=tsft)
    rows = capture(air, mon, tmp_path / "m.pcap")
    _, records = read_all(tmp_path / "m.pcap")
    assert len(records) == len(rows)
    kinds = set()
    for r, row in zip(records, rows):
        truth = air.frames[row.air_id]
        f = parse_frame(r)
        kinds.add(truth.kind)
        assert (f.ftype, f.subtype) == _KINDS[truth.kind]
        assert f.retry == truth.retry
        assert mac_bytes(r) == truth.mac
        assert f.fcs_present == fcs
        if truth.kind == "ack":
            assert sender_and_seq(f) is None
        else:
            assert sender_and_seq(f) == (truth.sender, truth.seq)
        if truth.tsf is not None:
            assert f.mgmt_timestamp == truth.tsf
        assert is_unique_candidate(f) == (truth.kind == "beacon"
                                          or (truth.kind == "probe_resp" and not truth.retry))
    assert kinds == set(_KINDS)
