"""Offline merging of IEEE 802.11 traces captured by unsynchronized monitors."""

from .errors import TooFewReferences, TraceError
from .intersect import ReferencePair, intersect, prune_invalid_references
from .merge import MergeStats, content_identical, merge_files, merge_many
from .pcap_io import FrameRecord, TraceHeader, create_writer, open_trace
from .sync import ClockMapping, average_sync_error, fit_mapping
from .uniques import UniqueFrameDigest, extract_uniques

__version__ = "0.1.0"

__all__ = [
    "ClockMapping",
    "FrameRecord",
    "MergeStats",
    "ReferencePair",
    "TooFewReferences",
    "TraceError",
    "TraceHeader",
    "UniqueFrameDigest",
    "average_sync_error",
    "content_identical",
    "create_writer",
    "extract_uniques",
    "fit_mapping",
    "intersect",
    "merge_files",
    "merge_many",
    "open_trace",
    "prune_invalid_references",
]
