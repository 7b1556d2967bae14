"""Piecewise affine clock mapping between two traces.

For every reference frame R_i a least-squares line t2 = a*t1 + b is fitted
over the w+1 references R_{i-floor(w/2)} .. R_{i+ceil(w/2)} (shifted inwards
at the trace edges) and used for t1 in [R_i, R_{i+1}). The first segment
extends to -inf and the last one to +inf. A window whose slope falls
outside SLOPE_BOUNDS is widened until it does not.

Each segment keeps an integer anchor (x0, y0) taken from its window so that
evaluation never squares or multiplies epoch-scale microsecond values in
floating point.
"""

import bisect
import logging
import math
from typing import NamedTuple

from .errors import DegenerateWindow, EmptySet, ImplausibleSlope, TooFewReferences

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 2
# Sanity bound on any segment slope (real crystal oscillators are far closer to 1).
SLOPE_BOUNDS = (0.9, 1.1)


class Segment(NamedTuple):
    t1_start: float
    t1_end: float
    a: float
    x0: int
    y0: int
    c: float
    ref_index: int

    @property
    def b(self):
        """Offset of the equivalent t2 = a*t1 + b form (approximate at epoch scale)."""
        return self.y0 + self.c - self.a * self.x0

    def value(self, t1):
        return self.y0 + self.c + self.a * (t1 - self.x0)


def round_half_away(v):
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


def window_bounds(i, n, w):
    """Inclusive index range of the regression window for reference i."""
    lo = i - w // 2
    hi = i + (w + 1) // 2
    if lo < 0:
        lo, hi = 0, w
    elif hi > n - 1:
        lo, hi = n - 1 - w, n - 1
    return lo, hi


def regress(xs, ys):
    """Least-squares (a, x0, y0, c) with t2 = y0 + c + a*(t1 - x0)."""
    x0, y0 = xs[0], ys[0]
    dx = [float(x - x0) for x in xs]
    dy = [float(y - y0) for y in ys]
    k = len(dx)
    mx = sum(dx) / k
    my = sum(dy) / k
    sxx = sum((x - mx) ** 2 for x in dx)
    if sxx == 0.0:
        raise DegenerateWindow(f"all {k} references share t1={x0}")
    sxy = sum((x - mx) * (y - my) for x, y in zip(dx, dy))
    a = sxy / sxx
    return a, x0, y0, my - a * mx


class ClockMapping:
    def __init__(self, segments):
        if not segments:
            raise ValueError("a clock mapping needs at least one segment")
        self.segments = list(segments)
        self._bounds = [s.t1_start for s in self.segments[1:]]

    @classmethod
    def affine(cls, a=1.0, b=0):
        b_int = round_half_away(b)
        return cls([Segment(-math.inf, math.inf, a, 0, b_int, float(b - b_int), 0)])

    @classmethod
    def identity(cls):
        return cls.affine(1.0, 0)

    def __len__(self):
        return len(self.segments)

    def segment_for(self, t1):
        return self.segments[bisect.bisect_right(self._bounds, t1)]

    def __call__(self, t1):
        s = self.segments[bisect.bisect_right(self._bounds, t1)]
        return s.y0 + round_half_away(s.c + s.a * (t1 - s.x0))

    apply = __call__

    def monotonicity_violations(self):
        """Segment boundaries where the mapping steps backwards in time."""
        out = []
        for s in self.segments[1:]:
            t = int(s.t1_start)
            if self(t - 1) > self(t):
                out.append(t)
        return out


def _fit_window(t1, t2, i, w):
    """Regression for reference i, widening the window while the slope is implausible.

    Two references a few hundred microseconds apart can yield a wild slope
    from jitter alone; one more reference on each side fixes that.
    """
    n = len(t1)
    lo_b, hi_b = SLOPE_BOUNDS
    for width in range(w, n):
        lo, hi = window_bounds(i, n, width)
        a, x0, y0, c = regress(t1[lo:hi + 1], t2[lo:hi + 1])
        if math.isfinite(a) and lo_b < a < hi_b:
            if width > w:
                log.debug("reference %d: window widened from %d to %d", i, w, width)
            return a, x0, y0, c
    raise ImplausibleSlope(f"reference {i}: no window gives a slope within {SLOPE_BOUNDS}")


def fit_mapping(pairs, w=DEFAULT_WINDOW) -> ClockMapping:
    """Fit a sliding-window regression mapping from trace-1 to trace-2 time."""
    if w < 1:
        raise ValueError("window parameter w must be >= 1")
    n = len(pairs)
    if n < w + 1 or n < 2:
        raise TooFewReferences(f"{n} reference frames, need at least {max(w + 1, 2)}")
    t1 = [p.t1_us for p in pairs]
    t2 = [p.t2_us for p in pairs]
    segments = []
    for i in range(n):
        a, x0, y0, c = _fit_window(t1, t2, i, w)
        start = -math.inf if i == 0 else t1[i]
        end = math.inf if i == n - 1 else t1[i + 1]
        segments.append(Segment(start, end, a, x0, y0, c, i))
    return ClockMapping(segments)


def apply(mapping: ClockMapping, t1_us: int) -> int:
    return mapping(t1_us)


def average_sync_error(shared, mapping: ClockMapping) -> float:
    """Mean |mapping(t1) - t2| over (t1, t2) pairs of shared frames."""
    total = 0
    n = 0
    for t1, t2 in shared:
        total += abs(mapping(t1) - t2)
        n += 1
    if not n:
        raise EmptySet("no shared frames to measure synchronization error on")
    return total / n
