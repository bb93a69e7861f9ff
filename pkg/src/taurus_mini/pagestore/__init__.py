"""Page Store: versioned page service fed by log fragments."""

from .bufferpool import BufferPool
from .intervals import IntervalSet
from .logcache import CONSOLIDATION_POLICIES, LOG_CACHE_CENTRIC, LONGEST_CHAIN_FIRST, LogCache
from .node import (
    BelowRecycleLsn,
    NotCaughtUp,
    PageStoreError,
    PageStoreNode,
    PeerUnavailable,
    RecycleLsnRegression,
    SliceReplica,
    SliceStatus,
    SourceUnavailable,
    UnknownSlice,
    WriteAck,
)

__all__ = [
    "BelowRecycleLsn",
    "BufferPool",
    "CONSOLIDATION_POLICIES",
    "IntervalSet",
    "LOG_CACHE_CENTRIC",
    "LONGEST_CHAIN_FIRST",
    "LogCache",
    "NotCaughtUp",
    "PageStoreError",
    "PageStoreNode",
    "PeerUnavailable",
    "RecycleLsnRegression",
    "SliceReplica",
    "SliceStatus",
    "SourceUnavailable",
    "UnknownSlice",
    "WriteAck",
]
