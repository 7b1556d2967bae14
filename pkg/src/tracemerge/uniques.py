"""Unique-frame extraction.

A unique frame is a beacon or a non-retransmitted probe response; the
embedded 64-bit timestamp makes its bytes unique over a measurement. Each
one is reduced to a fixed-size token: a 128-bit BLAKE2b digest of the MAC
frame (PHY header and FCS removed), its capture time and its ordinal.
"""

import hashlib
import logging
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .errors import FormatError
from .frame80211 import (
    SUBTYPE_BEACON,
    SUBTYPE_PROBE_RESP,
    is_unique_candidate,
    mac_bounds,
    parse_mac,
)
from .pcap_io import FrameRecord, open_trace

log = logging.getLogger(__name__)

DIGEST_SIZE = 16

# On-disk sidecar record: hash[16] | ts_us u64 | ordinal u64, little-endian.
SIDECAR_DTYPE = np.dtype([("lo", "<u8"), ("hi", "<u8"), ("ts", "<u8"), ("ord", "<u8")])
SIDECAR_RECORD_LEN = SIDECAR_DTYPE.itemsize


class UniqueFrameDigest(NamedTuple):
    hash: bytes
    ts_us: int
    ordinal: int


@dataclass
class ExtractStats:
    frames: int = 0
    uniques: int = 0
    malformed: int = 0


def frame_hash(mac: bytes) -> bytes:
    return hashlib.blake2b(mac, digest_size=DIGEST_SIZE).digest()


def digest_frame(record: FrameRecord, frame) -> UniqueFrameDigest:
    mac = record.payload[frame.body_offset:frame.mac_end]
    return UniqueFrameDigest(frame_hash(mac), record.ts_us, record.ordinal)


# Frame Control byte 0 of a beacon / probe response (protocol version 0).
_CANDIDATE_FC0 = frozenset(((SUBTYPE_BEACON << 4), (SUBTYPE_PROBE_RESP << 4)))


def extract_uniques(records: Iterable[FrameRecord],
                    stats: ExtractStats | None = None) -> Iterator[UniqueFrameDigest]:
    """Yield the digests of unique-frame candidates, in capture order.

    Records whose radiotap header is malformed are skipped and counted.
    """
    if stats is None:
        stats = ExtractStats()
    blake = hashlib.blake2b
    for rec in records:
        stats.frames += 1
        payload = rec.payload
        try:
            start, end, fcs = mac_bounds(payload, rec.linktype, rec.original_len)
        except FormatError as exc:
            stats.malformed += 1
            log.debug("record %d: %s", rec.ordinal, exc)
            continue
        if end - start < 2 or payload[start] not in _CANDIDATE_FC0:
            continue
        frame = parse_mac(payload, start, end, fcs)
        if not is_unique_candidate(frame):
            continue
        stats.uniques += 1
        yield UniqueFrameDigest(blake(payload[start:end], digest_size=DIGEST_SIZE).digest(),
                                rec.ts_us, rec.ordinal)
    if stats.malformed:
        log.warning("skipped %d records with malformed radiotap headers", stats.malformed)


class UniqueStream:
    """Re-iterable digest stream backed by a PCAP file or a sidecar file."""

    def __init__(self, path):
        self.path = str(path)
        self.is_sidecar = not _looks_like_pcap(self.path)
        self.stats = ExtractStats()
        self.reads = 0

    def __len__(self):
        if not self.is_sidecar:
            raise TypeError("digest count is only known up front for sidecar files")
        return os.path.getsize(self.path) // SIDECAR_RECORD_LEN

    def __iter__(self):
        self.reads += 1
        if self.is_sidecar:
            yield from iter_sidecar(self.path)
            return
        self.stats = ExtractStats()
        with open_trace(self.path) as reader:
            yield from extract_uniques(reader, self.stats)

    def batches(self, size=1 << 16):
        """Yield SIDECAR_DTYPE arrays of at most ``size`` digests."""
        self.reads += 1
        if self.is_sidecar:
            yield from _sidecar_batches(self.path, size)
            return
        self.stats = ExtractStats()
        with open_trace(self.path) as reader:
            yield from to_batches(extract_uniques(reader, self.stats), size)


def _looks_like_pcap(path):
    with open(path, "rb") as f:
        head = f.read(4)
    return head in (b"\xd4\xc3\xb2\xa1", b"\xa1\xb2\xc3\xd4",
                    b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d")


def to_batches(digests: Iterable[UniqueFrameDigest], size=1 << 16):
    buf = bytearray()
    n = 0
    for d in digests:
        buf += d.hash
        buf += d.ts_us.to_bytes(8, "little")
        buf += d.ordinal.to_bytes(8, "little")
        n += 1
        if n == size:
            yield np.frombuffer(bytes(buf), dtype=SIDECAR_DTYPE)
            buf.clear()
            n = 0
    if n:
        yield np.frombuffer(bytes(buf), dtype=SIDECAR_DTYPE)


def batch_to_digests(batch) -> Iterator[UniqueFrameDigest]:
    raw = batch.tobytes()
    for i in range(len(batch)):
        off = i * SIDECAR_RECORD_LEN
        yield UniqueFrameDigest(raw[off:off + 16],
                                int.from_bytes(raw[off + 16:off + 24], "little"),
                                int.from_bytes(raw[off + 24:off + 32], "little"))


def _sidecar_batches(path, size):
    with open(path, "rb") as f:
        while True:
            chunk = f.read(size * SIDECAR_RECORD_LEN)
            if not chunk:
                return
            if len(chunk) % SIDECAR_RECORD_LEN:
                raise FormatError(f"{path}: sidecar size is not a multiple of {SIDECAR_RECORD_LEN}")
            yield np.frombuffer(chunk, dtype=SIDECAR_DTYPE)


def iter_sidecar(path) -> Iterator[UniqueFrameDigest]:
    for batch in _sidecar_batches(path, 1 << 16):
        yield from batch_to_digests(batch)


def write_sidecar(path, digests: Iterable[UniqueFrameDigest]) -> int:
    n = 0
    with open(path, "wb") as f:
        for batch in to_batches(digests):
            f.write(batch.tobytes())
            n += len(batch)
    return n


def extract_file(path, stats: ExtractStats | None = None) -> list:
    with open_trace(path) as reader:
        return list(extract_uniques(reader, stats))
