"""Synthetic ground truth: an on-air frame schedule and imperfect monitors.

The air schedule is a time-ordered list of real 802.11 frames (beacons,
probe responses, data frames and their ACKs). Each monitor observes it
through frame loss, an affine clock with optional slope changes, Gaussian
timestamp jitter and optional delay spikes, and writes a PCAP plus a
manifest mapping each captured ordinal back to its air frame.

Randomness comes from numpy's PCG64 generator; monitor streams are derived
from their own seeds so monitors are independent of one another.
"""

import csv
import math
import os
import struct
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .errors import BadConfig
from .pcap_io import LINKTYPE_IEEE802_11, LINKTYPE_RADIOTAP, TraceHeader, create_writer

EPOCH_US = 1_088_000_000 * 1_000_000
BROADCAST = b"\xff" * 6


@dataclass
class AirConfig:
    seed: int = 0
    duration_us: int = 10_000_000
    beacon_interval_us: int = 100_000
    n_aps: int = 3
    n_stations: int = 8
    data_rate_hz: float = 500.0
    probe_rate_hz: float = 5.0
    probe_retry_prob: float = 0.2
    data_retry_prob: float = 0.05
    # Non-retry data frame sent twice with the same sequence number.
    dup_data_prob: float = 0.0
    acks: bool = True
    min_gap_us: int = 212
    payload_min: int = 40
    payload_max: int = 400

    def validate(self):
        if self.duration_us <= 0 or self.beacon_interval_us <= 0:
            raise BadConfig("durations must be positive")
        if self.n_aps < 1 or self.n_stations < 1:
            raise BadConfig("need at least one access point and one station")
        if self.min_gap_us < 212:
            raise BadConfig("min_gap_us below 212 would create ambiguous duplicates")
        if not 0 < self.payload_min <= self.payload_max:
            raise BadConfig("bad payload size range")
        for name in ("probe_retry_prob", "data_retry_prob", "dup_data_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise BadConfig(f"{name} must be a probability")
        if self.data_rate_hz < 0 or self.probe_rate_hz < 0:
            raise BadConfig("rates must be non-negative")


@dataclass
class MonitorModel:
    loss_prob: float = 0.0
    clock_a: float = 1.0
    clock_b: float = 0.0
    drift_changes: list = field(default_factory=list)
    jitter_sigma_us: float = 5.0
    seed: int = 0
    spike_prob: float = 0.0
    spike_max_us: float = 0.0
    linktype: int = LINKTYPE_RADIOTAP
    fcs: bool = False
    radiotap_tsft: bool = True
    snaplen: int = 65535

    def validate(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise BadConfig("loss_prob must be in [0, 1]")
        if self.jitter_sigma_us < 0 or self.spike_max_us < 0:
            raise BadConfig("jitter must be non-negative")
        for _, a in [(0, self.clock_a)] + list(self.drift_changes):
            if not 0.9 < a < 1.1:
                raise BadConfig(f"clock slope {a} outside (0.9, 1.1)")
        if self.linktype not in (LINKTYPE_IEEE802_11, LINKTYPE_RADIOTAP):
            raise BadConfig("linktype must be 105 or 127")
        if self.fcs and self.linktype != LINKTYPE_RADIOTAP:
            raise BadConfig("an FCS can only be flagged through radiotap")

    def clock(self, t):
        """Monitor-local time (us, relative, float) for air times ``t``."""
        t = np.asarray(t, dtype=np.float64)
        changes = sorted(self.drift_changes)
        starts = [0.0] + [float(c[0]) for c in changes]
        slopes = [self.clock_a] + [float(c[1]) for c in changes]
        base = [float(self.clock_b)]
        for k in range(1, len(starts)):
            base.append(base[-1] + slopes[k - 1] * (starts[k] - starts[k - 1]))
        starts_a = np.array(starts)
        idx = np.clip(np.searchsorted(starts_a, t, side="right") - 1, 0, None)
        return np.array(base)[idx] + np.array(slopes)[idx] * (t - starts_a[idx])


class AirFrame(NamedTuple):
    air_id: int
    emit_time_us: int
    mac: bytes
    kind: str
    retry: bool
    sender: bytes | None
    seq: int | None
    tsf: int | None


@dataclass
class AirSchedule:
    frames: list
    beacon_interval_us: int
    config: AirConfig

    def __len__(self):
        return len(self.frames)


class ManifestRow(NamedTuple):
    ordinal: int
    air_id: int
    emit_time_us: int
    captured_ts_us: int


def _mac_addr(prefix, n):
    return bytes([0x02, prefix, 0, 0, (n >> 8) & 0xFF, n & 0xFF])


def _mgmt_body(tsf, ssid):
    return (struct.pack("<QHH", tsf, 100, 0x0431)
            + bytes([0, len(ssid)]) + ssid
            + bytes([1, 8, 0x82, 0x84, 0x8B, 0x96, 0x0C, 0x12, 0x18, 0x24])
            + bytes([3, 1, 11]))


def generate_air(config: AirConfig) -> AirSchedule:
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))
    dur = config.duration_us
    aps = [_mac_addr(0xA0, k) for k in range(config.n_aps)]
    stas = [_mac_addr(0x50, k) for k in range(config.n_stations)]
    tsf_base = [int(x) for x in rng.integers(1 << 30, 1 << 40, size=config.n_aps)]

    # (sort_key, desired_time, id, kind, params). Followers (ACK, retry,
    # duplicate) share their parent's key so an exchange is never interleaved.
    events = []
    keys = []

    def add(t, kind, parent=None, **params):
        eid = len(events)
        if parent is None:
            key = (float(t), eid, 0)
        else:
            key = keys[parent][:2] + (eid,)
        keys.append(key)
        events.append((key, float(t), eid, kind, params))
        return eid

    for k in range(config.n_aps):
        phase = rng.uniform(0, config.beacon_interval_us)
        for t in np.arange(phase, dur, config.beacon_interval_us):
            add(t, "beacon", ap=k)

    n_probe = rng.poisson(config.probe_rate_hz * dur / 1e6)
    for t in np.sort(rng.uniform(0, dur, n_probe)):
        ap = int(rng.integers(config.n_aps))
        sta = int(rng.integers(config.n_stations))
        parent = add(t, "probe_resp", ap=ap, sta=sta)
        if rng.random() < config.probe_retry_prob:
            add(t + 1, "retry", parent, of=parent)

    n_data = rng.poisson(config.data_rate_hz * dur / 1e6)
    times = np.sort(rng.uniform(0, dur, n_data))
    senders = rng.integers(config.n_stations, size=n_data)
    dests = rng.integers(1 << 16, size=n_data)
    sizes = rng.integers(config.payload_min, config.payload_max + 1, size=n_data)
    retries = rng.random(n_data) < config.data_retry_prob
    dups = rng.random(n_data) < config.dup_data_prob
    for t, s, d, n, r, dup in zip(times, senders, dests, sizes, retries, dups):
        parent = add(t, "data", sta=int(s), dest=int(d), size=int(n))
        if config.acks:
            add(t + 0.5, "ack", parent, sta=int(s))
        if r:
            add(t + 1, "retry", parent, of=parent)
            if config.acks:
                add(t + 1.5, "ack", parent, sta=int(s))
        if dup:
            add(t + 2, "dup", parent, of=parent)
            if config.acks:
                add(t + 2.5, "ack", parent, sta=int(s))

    events.sort(key=lambda e: e[0])
    seq_ap = [0] * config.n_aps
    seq_sta = [0] * config.n_stations
    built = {}
    frames = []
    last = -math.inf
    for _, desired, eid, kind, p in events:
        t = max(int(math.ceil(desired)), last + config.min_gap_us if frames else 0)
        last = t
        if kind in ("beacon", "probe_resp"):
            ap = p["ap"]
            seq = seq_ap[ap]
            seq_ap[ap] = (seq + 1) & 0xFFF
            tsf = tsf_base[ap] + t
            if kind == "beacon":
                fc, dst = b"\x80\x00", BROADCAST
            else:
                fc, dst = b"\x50\x00", stas[p["sta"]]
            mac = (fc + b"\x00\x00" + dst + aps[ap] + aps[ap] + struct.pack("<H", seq << 4)
                   + _mgmt_body(tsf, b"net%d" % ap))
            fr = AirFrame(len(frames), t, mac, kind, False, aps[ap], seq, tsf)
        elif kind == "data":
            s = p["sta"]
            seq = seq_sta[s]
            seq_sta[s] = (seq + 1) & 0xFFF
            ap = s % config.n_aps
            body = (b"\xaa\xaa\x03\x00\x00\x00\x08\x00"
                    + rng.integers(0, 256, size=p["size"], dtype=np.uint8).tobytes())
            mac = (b"\x08\x01\x2c\x00" + aps[ap] + stas[s] + _mac_addr(0xD0, p["dest"])
                   + struct.pack("<H", seq << 4) + body)
            fr = AirFrame(len(frames), t, mac, "data", False, stas[s], seq, None)
        elif kind == "ack":
            mac = b"\xd4\x00\x00\x00" + stas[p["sta"]]
            fr = AirFrame(len(frames), t, mac, "ack", False, None, None, None)
        else:
            orig = built[p["of"]]
            mac = orig.mac
            if kind == "retry":
                mac = mac[:1] + bytes([mac[1] | 0x08]) + mac[2:]
            fr = AirFrame(len(frames), t, mac, orig.kind, kind == "retry",
                          orig.sender, orig.seq, orig.tsf)
        built[eid] = fr
        frames.append(fr)
    return AirSchedule(frames, config.beacon_interval_us, config)


def _radiotap(monitor, signal):
    flags = 0x10 if monitor.fcs else 0x00
    if monitor.radiotap_tsft:
        present = 0x0000002B  # TSFT, Flags, Channel, dBm antenna signal
        return struct.pack("<BBHIQBBHHb", 0, 0, 23, present, 0, flags, 0, 2462, 0x00A0, signal)
    present = 0x0000002A
    return struct.pack("<BBHIBBHHb", 0, 0, 15, present, flags, 0, 2462, 0x00A0, signal)


def capture_times(frames, monitor: MonitorModel, rng, prev_ts=None):
    """(kept_mask, captured_ts_us) for ``frames``, drawing from ``rng``.

    Timestamps are made strictly increasing (also relative to ``prev_ts``).
    """
    n = len(frames)
    emit = np.array([f.emit_time_us for f in frames], dtype=np.float64)
    kept = rng.random(n) >= monitor.loss_prob
    sigma = monitor.jitter_sigma_us
    jitter = np.clip(rng.normal(0.0, 1.0, n), -4, 4) * sigma
    if monitor.spike_prob > 0:
        spikes = rng.random(n) < monitor.spike_prob
        jitter += spikes * rng.uniform(0, monitor.spike_max_us, n)
    local = np.rint(monitor.clock(emit) + jitter).astype(np.int64)
    ts = local[kept] + EPOCH_US
    if len(ts):
        if prev_ts is not None:
            ts[0] = max(ts[0], prev_ts + 1)
        steps = np.arange(len(ts), dtype=np.int64)
        ts = np.maximum.accumulate(ts - steps) + steps
    return kept, ts


class MonitorCapture:
    """Incremental capture of successive air-frame blocks into one trace."""

    def __init__(self, monitor: MonitorModel, out):
        monitor.validate()
        self.monitor = monitor
        self.rng = np.random.Generator(np.random.PCG64(monitor.seed))
        self.writer = create_writer(out, TraceHeader(linktype=monitor.linktype,
                                                     snaplen=monitor.snaplen))
        self.rows = []
        self.last_ts = None
        self.bytes_written = 24

    def add(self, frames):
        mon = self.monitor
        kept, ts = capture_times(frames, mon, self.rng, self.last_ts)
        idx = np.flatnonzero(kept).tolist()
        signals = self.rng.integers(-90, -30, size=len(idx)).tolist()
        write = self.writer.write
        rows = self.rows
        radiotap = mon.linktype == LINKTYPE_RADIOTAP
        ordinal = len(rows)
        for k, (i, t) in enumerate(zip(idx, ts.tolist())):
            fr = frames[i]
            payload = fr.mac
            if radiotap:
                if mon.fcs:
                    payload = payload + struct.pack("<I", zlib.crc32(payload))
                payload = _radiotap(mon, signals[k]) + payload
            orig = len(payload)
            payload = payload[:mon.snaplen]
            write(t, payload, orig)
            self.bytes_written += 16 + len(payload)
            rows.append(ManifestRow(ordinal + k, fr.air_id, fr.emit_time_us, t))
        if len(ts):
            self.last_ts = int(ts[-1])

    def close(self):
        self.writer.close()


def capture(air: AirSchedule, monitor: MonitorModel, out, manifest_path=None):
    """Write what ``monitor`` records of ``air`` to ``out``; return the manifest."""
    cap = MonitorCapture(monitor, out)
    try:
        cap.add(air.frames)
    finally:
        cap.close()
    if manifest_path is not None:
        write_manifest(manifest_path, cap.rows)
    return cap.rows


def write_manifest(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ManifestRow._fields)
        w.writerows(rows)


def read_manifest(path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        next(r)
        return [ManifestRow(*map(int, row)) for row in r]


def write_air(path, air: AirSchedule):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["air_id", "emit_time_us", "kind", "retry", "sender", "seq", "tsf", "mac_hex"])
        for fr in air.frames:
            w.writerow([fr.air_id, fr.emit_time_us, fr.kind, int(fr.retry),
                        fr.sender.hex() if fr.sender else "", "" if fr.seq is None else fr.seq,
                        "" if fr.tsf is None else fr.tsf, fr.mac.hex()])


# -- oracle helpers -------------------------------------------------------

def shared_times(m1, m2):
    """(t1, t2) capture times of air frames present in both manifests."""
    by_air = {r.air_id: r.captured_ts_us for r in m2}
    return [(r.captured_ts_us, by_air[r.air_id]) for r in m1 if r.air_id in by_air]


def expected_union(*manifests):
    """Air ids captured by at least one monitor, in air order."""
    ids = set()
    for m in manifests:
        ids.update(r.air_id for r in m)
    return sorted(ids)


# -- scenario files -------------------------------------------------------

def _coerce(value: str, typ):
    if typ is bool or typ == "bool":
        return value.strip().lower() in ("1", "true", "yes", "on")
    if typ is int or typ == "int":
        return int(float(value)) if "e" in value.lower() else int(value)
    if typ is float or typ == "float":
        return float(value)
    return value


def _drift(value):
    out = []
    for item in filter(None, (s.strip() for s in value.split(";"))):
        t, a = item.split(":")
        out.append((int(float(t)), float(a)))
    return out


def load_scenario(path):
    """Parse a flat key=value scenario file into (AirConfig, [MonitorModel])."""
    air_types = {f.name: f.type for f in fields(AirConfig)}
    mon_types = {f.name: f.type for f in fields(MonitorModel)}
    air_kw = {}
    mons = {}
    n_monitors = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise BadConfig(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key == "n_monitors":
                    n_monitors = int(value)
                elif key.startswith("monitor."):
                    _, idx, name = key.split(".", 2)
                    if name not in mon_types:
                        raise BadConfig(f"{path}:{lineno}: unknown monitor key {name!r}")
                    v = _drift(value) if name == "drift_changes" else _coerce(value, mon_types[name])
                    mons.setdefault(int(idx), {})[name] = v
                elif key in air_types:
                    air_kw[key] = _coerce(value, air_types[key])
                else:
                    raise BadConfig(f"{path}:{lineno}: unknown key {key!r}")
            except ValueError as exc:
                raise BadConfig(f"{path}:{lineno}: {exc}") from exc
    if n_monitors is None:
        n_monitors = max(mons) + 1 if mons else 2
    air = AirConfig(**air_kw)
    monitors = []
    for i in range(n_monitors):
        kw = mons.get(i, {})
        kw.setdefault("seed", air.seed * 1000 + i + 1)
        monitors.append(MonitorModel(**kw))
    air.validate()
    for m in monitors:
        m.validate()
    return air, monitors


def dump_scenario(path, air: AirConfig, monitors):
    lines = [f"{k} = {v}" for k, v in asdict(air).items()]
    lines.append(f"n_monitors = {len(monitors)}")
    for i, m in enumerate(monitors):
        for k, v in asdict(m).items():
            if k == "drift_changes":
                v = ";".join(f"{t}:{a!r}" for t, a in v)
            lines.append(f"monitor.{i}.{k} = {v}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def random_monitor(rng, loss, max_ppm=50.0, max_offset_us=10_000_000, jitter_sigma_us=5.0, **kw):
    return MonitorModel(
        loss_prob=loss,
        clock_a=1.0 + rng.uniform(-max_ppm, max_ppm) * 1e-6,
        clock_b=float(rng.uniform(-max_offset_us, max_offset_us)),
        jitter_sigma_us=jitter_sigma_us,
        seed=int(rng.integers(1 << 31)),
        **kw,
    )


def wander_drift(rng, duration_us, base_slope, amplitude_ppm, period_us, step_us=10_000):
    """Slope changes approximating a sinusoidal frequency wander."""
    phase = rng.uniform(0, 2 * math.pi)
    out = []
    for t in range(step_us, int(duration_us), step_us):
        out.append((t, base_slope + amplitude_ppm * 1e-6 * math.sin(2 * math.pi * t / period_us + phase)))
    return out


def generate_scenario(air_cfg: AirConfig, monitors, outdir, prefix="monitor"):
    """Generate air + all monitor traces into ``outdir``; return (air, paths, manifests)."""
    os.makedirs(outdir, exist_ok=True)
    air = generate_air(air_cfg)
    paths, manifests = [], []
    for i, mon in enumerate(monitors):
        p = os.path.join(outdir, f"{prefix}{i}.pcap")
        manifests.append(capture(air, mon, p, os.path.join(outdir, f"{prefix}{i}.csv")))
        paths.append(p)
    return air, paths, manifests
