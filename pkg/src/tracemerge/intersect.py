"""Reference-frame identification by hash-table intersection.

All digests of the first trace are loaded into an open-addressing table
(linear probing, 128-bit keys stored inline). Keys seen more than once in
the first trace are collisions: they are remembered and excluded before the
second trace is scanned. The second trace is then streamed once and every
digest found in the table yields a reference pair.

The table is vectorised with numpy and processes digests in batches, which
keeps storage around 60 bytes per digest.
"""

import bisect
import csv
import logging
import statistics
from typing import NamedTuple

import numpy as np

from .errors import TooFewReferences
from .uniques import SIDECAR_DTYPE, to_batches

log = logging.getLogger(__name__)

DEFAULT_NEIGHBOR_WINDOW = 5
DEFAULT_DELTA_MAX_US = 100_000

MAX_LOAD = 0.7
_CHUNK_BITS = 16
_CHUNK = 1 << _CHUNK_BITS


class ReferencePair(NamedTuple):
    hash: bytes
    t1_us: int
    t2_us: int
    ord1: int
    ord2: int

    @property
    def offset(self):
        return self.t2_us - self.t1_us


class CollisionReport(NamedTuple):
    hash: bytes
    count: int
    # "filtered": repeated within trace 1, excluded from the table.
    # "suspect": one trace-1 entry matched several trace-2 digests.
    disposition: str = "filtered"


def _key_bytes(lo, hi):
    return int(lo).to_bytes(8, "little") + int(hi).to_bytes(8, "little")


class DigestTable:
    """Hash table of 128-bit digests with per-entry capture time and ordinal."""

    def __init__(self, expected=0):
        cap = 1 << 10
        while expected > cap * MAX_LOAD:
            cap <<= 1
        self._alloc(cap)
        self.size = 0
        self._ts = []
        self._ord = []
        # entry index -> number of occurrences, only for repeated keys
        self.repeats = {}

    def _alloc(self, cap):
        self.capacity = cap
        self.mask = np.uint64(cap - 1)
        self.slot_lo = np.zeros(cap, dtype=np.uint64)
        self.slot_hi = np.zeros(cap, dtype=np.uint64)
        self.slot_idx = np.full(cap, -1, dtype=np.int32)

    @property
    def nbytes(self):
        slots = self.slot_lo.nbytes + self.slot_hi.nbytes + self.slot_idx.nbytes
        return slots + sum(a.nbytes for a in self._ts) + sum(a.nbytes for a in self._ord)

    def __len__(self):
        return self.size

    def _grow(self, needed):
        cap = self.capacity
        while needed > cap * MAX_LOAD:
            cap <<= 1
        if cap == self.capacity:
            return
        used = self.slot_idx >= 0
        lo, hi, idx = self.slot_lo[used], self.slot_hi[used], self.slot_idx[used]
        self._alloc(cap)
        del used
        self._place_distinct(lo, hi, idx)

    def _place_distinct(self, lo, hi, idx):
        # Rehash of keys already known to be distinct.
        pos = lo & self.mask
        pending = np.arange(len(lo))
        while len(pending):
            s = pos[pending]
            empty = self.slot_idx[s] < 0
            cand = pending[empty]
            _, first = np.unique(s[empty], return_index=True)
            win = cand[first]
            ws = pos[win]
            self.slot_lo[ws] = lo[win]
            self.slot_hi[ws] = hi[win]
            self.slot_idx[ws] = idx[win]
            placed = np.zeros(len(lo), dtype=bool)
            placed[win] = True
            busy = pending[~empty]
            pos[busy] = (pos[busy] + np.uint64(1)) & self.mask
            pending = pending[~placed[pending]]

    def insert_batch(self, batch):
        """Insert a SIDECAR_DTYPE batch; repeated keys are counted."""
        m = len(batch)
        if not m:
            return
        self._grow(self.size + m)
        lo = np.ascontiguousarray(batch["lo"])
        hi = np.ascontiguousarray(batch["hi"])
        ts = batch["ts"].astype(np.int64)
        ordn = batch["ord"].astype(np.int64)
        pos = lo & self.mask
        pending = np.arange(m)
        while len(pending):
            s = pos[pending]
            occ = self.slot_idx[s]
            empty = occ < 0

            # Lowest batch index wins a contended empty slot, so the first
            # occurrence of a repeated key is the one stored.
            cand = pending[empty]
            _, first = np.unique(s[empty], return_index=True)
            win = cand[first]
            if len(win):
                ws = pos[win]
                new_idx = np.arange(self.size, self.size + len(win), dtype=np.int64)
                self.slot_lo[ws] = lo[win]
                self.slot_hi[ws] = hi[win]
                self.slot_idx[ws] = new_idx
                self._append_entries(ts[win], ordn[win])
                self.size += len(win)

            busy = pending[~empty]
            bs = s[~empty]
            same = (self.slot_lo[bs] == lo[busy]) & (self.slot_hi[bs] == hi[busy])
            for e in self.slot_idx[bs[same]].tolist():
                self.repeats[e] = self.repeats.get(e, 1) + 1
            moving = busy[~same]
            pos[moving] = (pos[moving] + np.uint64(1)) & self.mask

            keep = np.zeros(m, dtype=bool)
            keep[moving] = True
            keep[cand] = True
            keep[win] = False
            pending = np.flatnonzero(keep)

    def _append_entries(self, ts, ordn):
        i = 0
        n = len(ts)
        while i < n:
            if not self._ts or len(self._ts[-1]) == _CHUNK:
                room = _CHUNK
                take = min(room, n - i)
                self._ts.append(ts[i:i + take].copy())
                self._ord.append(ordn[i:i + take].copy())
            else:
                room = _CHUNK - len(self._ts[-1])
                take = min(room, n - i)
                self._ts[-1] = np.concatenate([self._ts[-1], ts[i:i + take]])
                self._ord[-1] = np.concatenate([self._ord[-1], ordn[i:i + take]])
            i += take

    def gather(self, idx):
        """(ts, ordinal) arrays for entry indices."""
        idx = np.asarray(idx, dtype=np.int64)
        ts = np.empty(len(idx), dtype=np.int64)
        od = np.empty(len(idx), dtype=np.int64)
        chunk = idx >> _CHUNK_BITS
        off = idx & (_CHUNK - 1)
        for c in np.unique(chunk).tolist():
            sel = chunk == c
            ts[sel] = self._ts[c][off[sel]]
            od[sel] = self._ord[c][off[sel]]
        return ts, od

    def lookup(self, lo, hi):
        """Entry index for each key, or -1 when absent."""
        m = len(lo)
        out = np.full(m, -1, dtype=np.int64)
        pos = lo & self.mask
        pending = np.arange(m)
        while len(pending):
            s = pos[pending]
            occ = self.slot_idx[s]
            empty = occ < 0
            same = ~empty & (self.slot_lo[s] == lo[pending]) & (self.slot_hi[s] == hi[pending])
            out[pending[same]] = occ[same]
            moving = pending[~empty & ~same]
            pos[moving] = (pos[moving] + np.uint64(1)) & self.mask
            pending = moving
        return out

    def entry_key(self, e):
        hit = np.flatnonzero(self.slot_idx == e)[0]
        return _key_bytes(self.slot_lo[hit], self.slot_hi[hit])


def _batches_of(stream, size=1 << 16):
    if hasattr(stream, "batches"):
        return stream.batches(size)
    if isinstance(stream, np.ndarray):
        return (stream[i:i + size] for i in range(0, len(stream), size))
    return to_batches(stream, size)


def load_table(stream, expected=None) -> DigestTable:
    if expected is None:
        try:
            expected = len(stream)
        except TypeError:
            expected = 0
    table = DigestTable(expected)
    for batch in _batches_of(stream):
        table.insert_batch(batch)
    return table


def intersect(first, second):
    """Intersect two digest streams in capture order.

    Returns ``(pairs, collisions)``. Pairs come out in the second stream's
    order; keys repeated in the first stream never produce pairs.
    """
    table = load_table(first)
    collisions = [CollisionReport(table.entry_key(e), n, "filtered")
                  for e, n in sorted(table.repeats.items())]
    if collisions:
        log.info("filtered %d colliding digests from the first trace", len(collisions))
    banned = np.fromiter(table.repeats.keys(), dtype=np.int64, count=len(table.repeats))

    pairs = []
    hits = {}
    for batch in _batches_of(second):
        lo = np.ascontiguousarray(batch["lo"])
        hi = np.ascontiguousarray(batch["hi"])
        found = table.lookup(lo, hi)
        ok = found >= 0
        if len(banned):
            ok &= ~np.isin(found, banned)
        rows = np.flatnonzero(ok)
        if not len(rows):
            continue
        entries = found[rows]
        t1, o1 = table.gather(entries)
        raw = batch[rows].tobytes()
        t2 = batch["ts"][rows].astype(np.int64).tolist()
        o2 = batch["ord"][rows].astype(np.int64).tolist()
        for k, e in enumerate(entries.tolist()):
            hits[e] = hits.get(e, 0) + 1
            off = k * SIDECAR_DTYPE.itemsize
            pairs.append(ReferencePair(raw[off:off + 16], int(t1[k]), t2[k], int(o1[k]), o2[k]))

    for e, n in sorted(hits.items()):
        if n > 1:
            collisions.append(CollisionReport(table.entry_key(e), n, "suspect"))
    return pairs, collisions


def brute_force_intersect(first, second):
    """O(n*m) reference used to check the table implementation."""
    first = list(first)
    second = list(second)
    out = []
    for u2 in second:
        matches = [u1 for u1 in first if u1.hash == u2.hash]
        if len(matches) == 1:
            u1 = matches[0]
            out.append(ReferencePair(u2.hash, u1.ts_us, u2.ts_us, u1.ordinal, u2.ordinal))
    return out


def _longest_increasing(values):
    """Indices of one longest strictly increasing subsequence."""
    tails = []
    tail_idx = []
    prev = [-1] * len(values)
    for i, v in enumerate(values):
        k = bisect.bisect_left(tails, v)
        if k == len(tails):
            tails.append(v)
            tail_idx.append(i)
        else:
            tails[k] = v
            tail_idx[k] = i
        prev[i] = tail_idx[k - 1] if k else -1
    out = []
    i = tail_idx[-1] if tail_idx else -1
    while i >= 0:
        out.append(i)
        i = prev[i]
    return out[::-1]


def prune_invalid_references(pairs, neighbor_window=DEFAULT_NEIGHBOR_WINDOW,
                             delta_max_us=DEFAULT_DELTA_MAX_US):
    """Drop reference pairs with anomalous clock offsets or broken ordering.

    A pair is rejected when its offset (t2 - t1) is more than
    ``delta_max_us`` away from the median offset of its ``neighbor_window``
    nearest neighbours (by t1 rank). Survivors are then reduced to the
    longest subsequence increasing in both t1 and t2.
    """
    ordered = sorted(pairs, key=lambda p: (p.t1_us, -p.t2_us))
    n = len(ordered)
    offsets = [p.t2_us - p.t1_us for p in ordered]
    kept, rejected = [], []
    W = neighbor_window
    for i, p in enumerate(ordered):
        if n - 1 <= W:
            neigh = offsets[:i] + offsets[i + 1:]
        else:
            lo = min(max(0, i - W // 2), n - 1 - W)
            neigh = offsets[lo:i] + offsets[i + 1:lo + W + 1]
        if neigh and abs(offsets[i] - statistics.median(neigh)) > delta_max_us:
            rejected.append(p)
        else:
            kept.append(p)

    # t1 ascending with t2 descending on ties: a strict LIS on t2 then keeps
    # at most one pair per t1 value.
    chain = _longest_increasing([p.t2_us for p in kept])
    keep = set(chain)
    rejected.extend(p for i, p in enumerate(kept) if i not in keep)
    kept = [kept[i] for i in chain]
    rejected.sort(key=lambda p: (p.t1_us, p.t2_us))
    if len(kept) < 2:
        raise TooFewReferences(f"only {len(kept)} reference frames survive pruning")
    return kept, rejected


def write_pairs_csv(path, pairs):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["hash", "t1_us", "t2_us", "ord1", "ord2"])
        for p in pairs:
            w.writerow([p.hash.hex(), p.t1_us, p.t2_us, p.ord1, p.ord2])


def read_pairs_csv(path):
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        return [ReferencePair(bytes.fromhex(row["hash"]), int(row["t1_us"]), int(row["t2_us"]),
                              int(row["ord1"]), int(row["ord2"])) for row in r]
