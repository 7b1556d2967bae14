"""Post-hoc consistency checks for any trace, merged or not.

Two heuristics:

* duplicate unique frames: a beacon or probe response should occur once;
* duplicate data frames: per sender, two successive non-retry data frames
  should never share both sequence number and body.
"""

from typing import NamedTuple

from .errors import FormatError
from .frame80211 import FrameType, format_mac, mac_bounds, parse_mac
from .uniques import extract_uniques, frame_hash

EXIT_CLEAN = 0
EXIT_ANOMALIES = 3


class DuplicateGroup(NamedTuple):
    hash: bytes
    ordinals: list
    timestamps: list


class DataAnomaly(NamedTuple):
    sender: bytes
    seq_num: int
    ordinals: tuple


def find_duplicate_unique_frames(records):
    seen = {}
    for d in extract_uniques(records):
        seen.setdefault(d.hash, []).append((d.ordinal, d.ts_us))
    return [DuplicateGroup(h, [o for o, _ in occ], [t for _, t in occ])
            for h, occ in seen.items() if len(occ) > 1]


def find_duplicate_data_frames(records):
    last = {}
    out = []
    for rec in records:
        payload = rec.payload
        try:
            start, end, fcs = mac_bounds(payload, rec.linktype, rec.original_len)
        except FormatError:
            continue
        if end - start < 24 or (payload[start] >> 2) & 0x3 != FrameType.DATA:
            continue
        frame = parse_mac(payload, start, end, fcs)
        if frame.retry or frame.addr2 is None:
            continue
        body = payload[frame.frame_body_start:end] if frame.frame_body_start is not None else b""
        key = (frame.seq_num, frame_hash(body))
        prev = last.get(frame.addr2)
        if prev is not None and prev[0] == key:
            out.append(DataAnomaly(frame.addr2, frame.seq_num, (prev[1], rec.ordinal)))
        last[frame.addr2] = (key, rec.ordinal)
    return out


def report_lines(name, groups, anomalies):
    lines = [f"{name}: {len(groups)} duplicate unique frames, "
             f"{len(anomalies)} duplicate data frames"]
    for g in groups:
        occ = ", ".join(f"#{o}@{t}" for o, t in zip(g.ordinals, g.timestamps))
        lines.append(f"  unique {g.hash.hex()}: {occ}")
    for a in anomalies:
        lines.append(f"  data {format_mac(a.sender)} seq={a.seq_num}: "
                     f"#{a.ordinals[0]} #{a.ordinals[1]}")
    return lines
