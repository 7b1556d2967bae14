"""Streaming reader and writer for classic (microsecond) PCAP files.

Only two link types are accepted: raw 802.11 (105) and radiotap (127).
Readers never hold more than one record in memory.
"""

import logging
import struct
import sys
from dataclasses import dataclass

from .errors import (
    BadMagic,
    MixedLinkType,
    TimestampOverflow,
    TruncatedRecord,
    UnsupportedLinkType,
)

log = logging.getLogger(__name__)

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D
LINKTYPE_IEEE802_11 = 105
LINKTYPE_RADIOTAP = 127
SUPPORTED_LINKTYPES = (LINKTYPE_IEEE802_11, LINKTYPE_RADIOTAP)

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
DEFAULT_SNAPLEN = 65535

# Largest ts_us a classic PCAP record header can carry (ts_sec is u32).
MAX_TS_US = 0xFFFFFFFF * 1_000_000 + 999_999

_BUFSIZE = 1 << 20


@dataclass
class TraceHeader:
    linktype: int
    snaplen: int = DEFAULT_SNAPLEN
    version: tuple = (2, 4)
    thiszone: int = 0
    sigfigs: int = 0
    magic: int = MAGIC_USEC
    byteorder: str = sys.byteorder

    def __post_init__(self):
        if self.linktype not in SUPPORTED_LINKTYPES:
            raise UnsupportedLinkType(f"link type {self.linktype} is not 105 or 127")


@dataclass(slots=True)
class FrameRecord:
    ts_us: int
    original_len: int
    payload: bytes
    ordinal: int
    linktype: int

    @property
    def captured_len(self):
        return len(self.payload)


def _structs(byteorder):
    prefix = "<" if byteorder == "little" else ">"
    return (struct.Struct(prefix + "IHHiIII"), struct.Struct(prefix + "IIII"))


def _detect_byteorder(raw_magic: bytes):
    le, = struct.unpack("<I", raw_magic)
    be, = struct.unpack(">I", raw_magic)
    if le == MAGIC_USEC:
        return "little"
    if be == MAGIC_USEC:
        return "big"
    if MAGIC_NSEC in (le, be):
        raise BadMagic("nanosecond-resolution PCAP is not supported")
    raise BadMagic(f"bad PCAP magic 0x{le:08x}")


class TraceReader:
    """Iterate over the FrameRecords of a PCAP file in file order.

    ``source`` may be a path or an open binary file object. With
    ``strict=False`` a truncated trailing record is logged and the stream
    simply ends; ``self.truncated_at`` then holds its ordinal.
    """

    def __init__(self, source, strict=True):
        if hasattr(source, "read"):
            self._f = source
            self._owns = False
            self.name = getattr(source, "name", "<stream>")
        else:
            self._f = open(source, "rb", buffering=_BUFSIZE)
            self._owns = True
            self.name = str(source)
        self.strict = strict
        self.truncated_at = None
        try:
            self.header = self._read_header()
        except Exception:
            self.close()
            raise
        self._started = False

    def _read_header(self):
        raw = self._f.read(GLOBAL_HEADER_LEN)
        if len(raw) < 4:
            raise BadMagic(f"{self.name}: too short for a PCAP header")
        order = _detect_byteorder(raw[:4])
        if len(raw) < GLOBAL_HEADER_LEN:
            raise TruncatedRecord(-1, f"{self.name}: truncated global header")
        ghdr, self._rhdr = _structs(order)
        magic, vmaj, vmin, zone, sigfigs, snaplen, linktype = ghdr.unpack(raw)
        if linktype not in SUPPORTED_LINKTYPES:
            raise UnsupportedLinkType(f"{self.name}: link type {linktype} is not 105 or 127")
        return TraceHeader(linktype=linktype, snaplen=snaplen, version=(vmaj, vmin),
                           thiszone=zone, sigfigs=sigfigs, magic=magic, byteorder=order)

    def __iter__(self):
        if self._started:
            raise RuntimeError("a TraceReader can only be iterated once; reopen the trace")
        self._started = True
        return self._records()

    def _records(self):
        read = self._f.read
        unpack = self._rhdr.unpack
        linktype = self.header.linktype
        ordinal = 0
        while True:
            rh = read(RECORD_HEADER_LEN)
            if not rh:
                return
            if len(rh) < RECORD_HEADER_LEN:
                self._truncated(ordinal)
                return
            ts_sec, ts_usec, incl, orig = unpack(rh)
            payload = read(incl)
            if len(payload) < incl:
                self._truncated(ordinal)
                return
            yield FrameRecord(ts_sec * 1_000_000 + ts_usec, orig, payload, ordinal, linktype)
            ordinal += 1

    def _truncated(self, ordinal):
        self.truncated_at = ordinal
        if self.strict:
            raise TruncatedRecord(ordinal, f"{self.name}: record {ordinal} is truncated")
        log.warning("%s: record %d is truncated, stopping", self.name, ordinal)

    def close(self):
        if self._owns:
            self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_trace(path, strict=True):
    return TraceReader(path, strict=strict)


class TraceWriter:
    def __init__(self, target, header: TraceHeader):
        if header.linktype not in SUPPORTED_LINKTYPES:
            raise UnsupportedLinkType(f"link type {header.linktype} is not 105 or 127")
        # Output is always written in native order.
        self.header = TraceHeader(linktype=header.linktype, snaplen=header.snaplen,
                                  thiszone=header.thiszone, sigfigs=header.sigfigs)
        if hasattr(target, "write"):
            self._f = target
            self._owns = False
        else:
            self._f = open(target, "wb", buffering=_BUFSIZE)
            self._owns = True
        ghdr, self._rhdr = _structs(self.header.byteorder)
        self._f.write(ghdr.pack(MAGIC_USEC, 2, 4, self.header.thiszone, self.header.sigfigs,
                                self.header.snaplen, self.header.linktype))
        self.count = 0

    def append(self, record: FrameRecord):
        if record.linktype != self.header.linktype:
            raise MixedLinkType(
                f"record {record.ordinal} has link type {record.linktype}, "
                f"trace has {self.header.linktype}")
        self.write(record.ts_us, record.payload, record.original_len)

    def write(self, ts_us, payload, original_len=None):
        if not 0 <= ts_us <= MAX_TS_US:
            raise TimestampOverflow(f"timestamp {ts_us} us does not fit a PCAP record header")
        sec, usec = divmod(ts_us, 1_000_000)
        n = len(payload)
        self._f.write(self._rhdr.pack(sec, usec, n, n if original_len is None else original_len))
        self._f.write(payload)
        self.count += 1

    def close(self):
        if self._owns:
            self._f.close()
        else:
            self._f.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def create_writer(path, header: TraceHeader):
    return TraceWriter(path, header)


def append(writer: TraceWriter, record: FrameRecord):
    writer.append(record)


def read_all(path):
    """Convenience for tests and small traces: (header, list of records)."""
    with open_trace(path) as reader:
        return reader.header, list(reader)
