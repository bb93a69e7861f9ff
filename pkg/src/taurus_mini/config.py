"""Tunable constants and the two scale profiles.

Times are logical milliseconds, sizes are bytes unless the name says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

MINUTE_MS = 60_000.0


@dataclass(frozen=True)
class Config:
    # layout
    page_size: int = 8192
    pages_per_slice: int = 16
    database: int = 0

    # log stores
    plog_size_limit: int = 64 * 1024
    metadata_plog_size_limit: int = 16 * 1024
    fifo_cache_bytes: int = 1 << 20
    append_timeout_ms: float = 500.0

    # page stores
    buffer_pool_pages: int = 256
    buffer_pool_policy: str = "lfu"
    lfu_aging_interval: int = 1024
    log_cache_fragments: int = 64
    consolidation_policy: str = "log_cache_centric"
    consolidation_delay_ms: float = 1.0
    consolidation_batch_pages: int = 64
    dirty_flush_interval_ms: float = 500.0
    throttle_high_water: int = 50_000
    gossip_interval_ms: float = 10_000.0
    gossip_enabled: bool = True
    rebuild_copy_ms: float = 50.0

    # SAL
    slice_buffer_bytes: int = 64 * 1024
    slice_flush_timeout_ms: float = 10.0
    idle_coverage_ms: float = 10.0
    fragment_retry_ms: float = 50.0
    db_buffer_flush_ms: float = 1.0
    db_buffer_max_records: int = 64
    poll_interval_ms: float = 1000.0
    stale_polls: int = 3
    sal_triggers_gossip: bool = True
    checkpoint_every_buffers: int = 16
    throttle_backoff_ms: float = 20.0
    write_retry_ms: float = 100.0
    recycle_interval_ms: float = 1000.0
    recycle_lag_lsns: int = 1000
    truncate_with_recycle: bool = True
    latency_ewma_alpha: float = 0.3

    # read replicas
    replica_pump_ms: float = 2.0
    replica_pool_pages: int = 256

    # network and cluster manager
    latency_ms: float = 1.0
    jitter_ms: float = 0.2
    heartbeat_ms: float = 500.0
    missed_heartbeats: int = 3
    long_term_threshold_ms: float = 5_000.0
    replacement_retry_ms: float = 500.0

    def with_overrides(self, **overrides) -> "Config":
        known = {f.name: f.type for f in fields(self)}
        coerced = {}
        for key, value in overrides.items():
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            current = getattr(self, key)
            if isinstance(value, str) and not isinstance(current, str):
                if isinstance(current, bool):
                    value = value.lower() in ("1", "true", "yes", "on")
                elif isinstance(current, int):
                    value = int(value)
                else:
                    value = float(value)
            coerced[key] = value
        return replace(self, **coerced)


def test_constants() -> Config:
    return Config()


def prod_constants() -> Config:
    return Config(
        pages_per_slice=(10 << 30) // 8192,
        plog_size_limit=64 << 20,
        metadata_plog_size_limit=64 << 20,
        buffer_pool_pages=5 << 20,
        log_cache_fragments=1 << 20,
        gossip_interval_ms=30 * MINUTE_MS,
        long_term_threshold_ms=15 * MINUTE_MS,
        stale_polls=3,
    )


PROFILES = {"test-constants": test_constants, "prod-constants": prod_constants}

# not a pytest test despite the name
test_constants.__test__ = False
