"""Frame builders, trace writers and ground-truth checks shared by the tests."""

import struct
import zlib

import numpy as np

from tracemerge.frame80211 import mac_bytes
from tracemerge.merge import merge_files
from tracemerge.pcap_io import TraceHeader, create_writer, read_all
from tracemerge.tracegen import (
    AirConfig,
    expected_union,
    generate_scenario,
    random_monitor,
)

AP = bytes.fromhex("02a000000001")
STA = bytes.fromhex("025000000007")
BROADCAST = b"\xff" * 6


def mgmt_frame(subtype=8, tsf=0, seq=0, retry=False, sa=AP, da=BROADCAST, extra=b"\x64\x00\x31\x04"):
    """A management frame whose body starts with the 8-byte timestamp ``tsf``."""
    fc = bytes([subtype << 4, 0x08 if retry else 0x00])
    hdr = fc + b"\x00\x00" + da + sa + sa + struct.pack("<H", seq << 4)
    return hdr + struct.pack("<Q", tsf) + extra


def beacon(tsf, seq=0, **kw):
    return mgmt_frame(8, tsf, seq, **kw)


def probe_response(tsf, seq=0, retry=False, **kw):
    return mgmt_frame(5, tsf, seq, retry=retry, da=STA, **kw)


def data_frame(sender, seq, body, retry=False, bssid=AP, dest=BROADCAST):
    """A to-DS data frame (addr1 = BSSID, addr2 = sender, addr3 = destination)."""
    fc = bytes([0x08, 0x01 | (0x08 if retry else 0)])
    return fc + b"\x2c\x00" + bssid + sender + dest + struct.pack("<H", seq << 4) + body


def ack_frame(ra):
    return b"\xd4\x00\x00\x00" + ra


def radiotap(tsft=True, fcs=False, signal=-50, channel=2462):
    flags = 0x10 if fcs else 0x00
    if tsft:
        return struct.pack("<BBHIQBBHHb", 0, 0, 23, 0x2B, 123456789, flags, 0, channel, 0xA0,
                           signal)
    return struct.pack("<BBHIBBHHb", 0, 0, 15, 0x2A, flags, 0, channel, 0xA0, signal)


def fcs_of(mac):
    return struct.pack("<I", zlib.crc32(mac))


def write_pcap(path, items, linktype=105, snaplen=65535):
    """Write ``items`` = [(ts_us, payload) or (ts_us, payload, original_len)]."""
    with create_writer(path, TraceHeader(linktype=linktype, snaplen=snaplen)) as w:
        for item in items:
            w.write(*item)
    return path


def scenario(outdir, seed, loss=0.2, duration_us=10_000_000, n_monitors=2, data_rate_hz=500.0,
             jitter_sigma_us=5.0, monitor_kw=None, **air_kw):
    """Random monitors (clock slopes within 50 ppm, offsets up to 10 s) over one air schedule.

    ``loss`` may be a scalar or one value per monitor.
    """
    rng = np.random.default_rng(seed)
    losses = loss if isinstance(loss, (list, tuple)) else [loss] * n_monitors
    monitors = [random_monitor(rng, lp, jitter_sigma_us=jitter_sigma_us, **(monitor_kw or {}))
                for lp in losses]
    cfg = AirConfig(seed=seed, duration_us=duration_us, data_rate_hz=data_rate_hz, **air_kw)
    air, paths, manifests = generate_scenario(cfg, monitors, str(outdir))
    return air, paths, manifests, monitors


def union_mismatch(out_path, air, manifests):
    """None when ``out_path`` is exactly the ground-truth union, else a description.

    The expected output holds every air frame captured by at least one
    monitor, once, in air order; frames are compared on their MAC bytes.
    """
    _, records = read_all(out_path)
    got = [mac_bytes(r) for r in records]
    want = [air.frames[i].mac for i in expected_union(*manifests)]
    if got == want:
        return None
    if len(got) != len(want):
        return f"{len(got)} output frames, expected {len(want)}"
    first = next(i for i, (g, w) in enumerate(zip(got, want)) if g != w)
    return f"first difference at output position {first}"


def merge_and_check(tmp_path, seed, **kw):
    air, (p1, p2), manifests, _ = scenario(tmp_path, seed, **kw)
    out = str(tmp_path / "merged.pcap")
    report = merge_files(p1, p2, out)
    return report, union_mismatch(out, air, manifests), (air, p1, p2, manifests, out)
