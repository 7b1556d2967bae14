"""Minimal IEEE 802.11 MAC decoding, optionally behind a radiotap header.

Only what the merger needs is decoded: Frame Control, addresses, sequence
number, and the 64-bit timestamp carried by beacons and probe responses.
Of the radiotap fields, only Flags is interpreted (to learn whether the
capture carries a trailing FCS).
"""

import struct
from dataclasses import dataclass
from enum import IntEnum

from .errors import MalformedRadiotap, TooShort
from .pcap_io import LINKTYPE_RADIOTAP, FrameRecord


class FrameType(IntEnum):
    MANAGEMENT = 0
    CONTROL = 1
    DATA = 2
    EXTENSION = 3


SUBTYPE_PROBE_RESP = 5
SUBTYPE_BEACON = 8

FC_TO_DS = 0x01
FC_FROM_DS = 0x02
FC_RETRY = 0x08
FC_ORDER = 0x80

RADIOTAP_TSFT = 1 << 0
RADIOTAP_FLAGS = 1 << 1
RADIOTAP_EXT = 1 << 31
RADIOTAP_F_FCS = 0x10

FCS_LEN = 4

# Control subtypes that carry a transmitter address (addr2).
_CTRL_WITH_TA = frozenset((8, 9, 10, 11, 14, 15))

_u16 = struct.Struct("<H")
_u64 = struct.Struct("<Q")


@dataclass(frozen=True, slots=True)
class ParsedFrame:
    ftype: FrameType
    subtype: int
    retry: bool
    seq_num: int | None
    addr1: bytes | None
    addr2: bytes | None
    addr3: bytes | None
    mgmt_timestamp: int | None
    # Offset of the MAC header inside the record payload (radiotap length).
    body_offset: int
    fcs_present: bool
    # End of the MAC frame inside the payload, FCS excluded.
    mac_end: int
    # Offset of the frame body (after the MAC header), or None if not captured.
    frame_body_start: int | None

    @property
    def is_beacon(self):
        return self.ftype == FrameType.MANAGEMENT and self.subtype == SUBTYPE_BEACON

    @property
    def is_probe_response(self):
        return self.ftype == FrameType.MANAGEMENT and self.subtype == SUBTYPE_PROBE_RESP


def radiotap_info(payload: bytes):
    """Return (header_length, fcs_flag) for a radiotap-prefixed payload."""
    if len(payload) < 8:
        raise MalformedRadiotap("payload shorter than a radiotap header")
    if payload[0] != 0:
        raise MalformedRadiotap(f"unknown radiotap version {payload[0]}")
    rt_len, = _u16.unpack_from(payload, 2)
    if rt_len < 8 or rt_len > len(payload):
        raise MalformedRadiotap(f"radiotap length {rt_len} exceeds payload of {len(payload)} bytes")
    present, = struct.unpack_from("<I", payload, 4)
    pos = 8
    word = present
    while word & RADIOTAP_EXT:
        if pos + 4 > rt_len:
            raise MalformedRadiotap("radiotap present bitmap overruns header")
        word, = struct.unpack_from("<I", payload, pos)
        pos += 4
    fcs = False
    if present & RADIOTAP_FLAGS:
        if present & RADIOTAP_TSFT:
            pos = (pos + 7) & ~7
            pos += 8
        if pos < rt_len:
            fcs = bool(payload[pos] & RADIOTAP_F_FCS)
    return rt_len, fcs


def mac_bounds(payload: bytes, linktype: int, original_len: int | None = None):
    """(start, end, fcs_present) of the MAC frame inside a record payload.

    The FCS is trimmed only when it is flagged and actually captured
    (a snaplen-truncated record does not contain it).
    """
    if linktype == LINKTYPE_RADIOTAP:
        start, fcs = radiotap_info(payload)
    else:
        start, fcs = 0, False
    end = len(payload)
    if fcs and (original_len is None or original_len == end) and end - start >= FCS_LEN:
        end -= FCS_LEN
    return start, end, fcs


def mac_bytes(record: FrameRecord) -> bytes:
    """The MAC frame of a record with PHY header and FCS removed."""
    start, end, _ = mac_bounds(record.payload, record.linktype, record.original_len)
    return record.payload[start:end]


def parse_mac(payload: bytes, start: int, end: int, fcs: bool) -> ParsedFrame:
    n = end - start
    if n < 2:
        raise TooShort(f"{n} bytes cannot hold a Frame Control field")
    fc0 = payload[start]
    flags = payload[start + 1]
    ftype = FrameType((fc0 >> 2) & 0x3)
    subtype = fc0 >> 4
    retry = bool(flags & FC_RETRY)

    def addr(off):
        if off + 6 <= n:
            return payload[start + off:start + off + 6]
        return None

    addr1 = addr(4)
    addr2 = addr3 = seq = ts = body = None
    if ftype == FrameType.CONTROL:
        if subtype in _CTRL_WITH_TA:
            addr2 = addr(10)
    elif ftype in (FrameType.MANAGEMENT, FrameType.DATA):
        addr2 = addr(10)
        addr3 = addr(16)
        if n >= 24:
            seq = _u16.unpack_from(payload, start + 22)[0] >> 4
        if ftype == FrameType.MANAGEMENT:
            hdr = 24 + (4 if flags & FC_ORDER else 0)
        else:
            hdr = 24
            if flags & FC_TO_DS and flags & FC_FROM_DS:
                hdr += 6
            if subtype & 0x8:
                hdr += 2
                if flags & FC_ORDER:
                    hdr += 4
        if hdr <= n:
            body = start + hdr
        if (ftype == FrameType.MANAGEMENT and subtype in (SUBTYPE_BEACON, SUBTYPE_PROBE_RESP)
                and body is not None and body + 8 <= end):
            ts = _u64.unpack_from(payload, body)[0]
    return ParsedFrame(ftype, subtype, retry, seq, addr1, addr2, addr3, ts,
                       start, fcs, end, body)


def parse_frame(record: FrameRecord, linktype: int | None = None) -> ParsedFrame:
    if not record.payload:
        raise TooShort("empty payload")
    lt = record.linktype if linktype is None else linktype
    start, end, fcs = mac_bounds(record.payload, lt, record.original_len)
    return parse_mac(record.payload, start, end, fcs)


def is_unique_candidate(frame: ParsedFrame) -> bool:
    if frame.ftype != FrameType.MANAGEMENT or frame.mgmt_timestamp is None:
        return False
    if frame.subtype == SUBTYPE_BEACON:
        return True
    return frame.subtype == SUBTYPE_PROBE_RESP and not frame.retry


def sender_and_seq(frame: ParsedFrame):
    if frame.ftype not in (FrameType.MANAGEMENT, FrameType.DATA):
        return None
    if frame.addr2 is None or frame.seq_num is None:
        return None
    return frame.addr2, frame.seq_num


def format_mac(addr: bytes) -> str:
    return ":".join(f"{b:02x}" for b in addr)


def parse_mac_str(text: str) -> bytes:
    return bytes(int(p, 16) for p in text.split(":"))
