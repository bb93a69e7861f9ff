"""Buffer pool policy comparison on a single Page Store.

Every page gets one full image, is consolidated and flushed, and then a
seeded stream of reads hits the store. Only the read phase is counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .core import FullImage, LogFragment, LogRecord, SliceId
from .pagestore import PageStoreNode

POLICIES = ("lfu", "lru")


@dataclass(frozen=True)
class CacheWorkload:
    pages: int = 512
    pool_pages: int = 32
    reads: int = 20_000
    distribution: str = "zipf"  # or "uniform"
    skew: float = 1.1
    page_size: int = 256


@dataclass(frozen=True)
class HitRate:
    policy: str
    hits: int
    misses: int

    @property
    def rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


def read_sequence(workload: CacheWorkload, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    n = workload.pages
    if workload.distribution == "uniform":
        return rng.integers(0, n, size=workload.reads)
    if workload.distribution != "zipf":
        raise ValueError(f"unknown distribution {workload.distribution!r}")
    weights = 1.0 / np.arange(1, n + 1, dtype=float) ** workload.skew
    # hot pages are scattered over the id space, not packed at the front
    ranks = rng.permutation(n)
    return ranks[rng.choice(n, size=workload.reads, p=weights / weights.sum())]


def run_policy(policy: str, workload: CacheWorkload, seed: int) -> HitRate:
    config = Config(
        page_size=workload.page_size,
        pages_per_slice=max(1, workload.pages),
        buffer_pool_pages=workload.pool_pages,
        buffer_pool_policy=policy,
        log_cache_fragments=max(1, workload.pages),
    )
    node = PageStoreNode("bench", config)
    slice_id = SliceId(config.database, 0)
    node.host_slice(slice_id)
    records = tuple(
        LogRecord(slice_id, page, page + 1, FullImage(bytes([page % 251]) * workload.page_size), True)
        for page in range(workload.pages)
    )
    if records:
        node.write_logs(slice_id, LogFragment(slice_id, 1, records, 0, len(records)))
        while node.consolidate_step():
            pass
        node.flush_dirty_pages()
    lsn = len(records)
    node.pool.hits = node.pool.misses = 0
    for page in read_sequence(workload, seed).tolist():
        node.read_page(slice_id, page, lsn)
    return HitRate(policy, node.pool.hits, node.pool.misses)


def compare(workload: CacheWorkload, seed: int) -> list[HitRate]:
    return [run_policy(p, workload, seed) for p in POLICIES]


def render(results: list[HitRate], workload: CacheWorkload) -> str:
    lines = [
        f"pages={workload.pages} pool={workload.pool_pages} reads={workload.reads} "
        f"distribution={workload.distribution} skew={workload.skew}",
        f"{'policy':<8} {'hits':>8} {'misses':>8} {'hit_rate':>9}",
    ]
    for r in results:
        lines.append(f"{r.policy:<8} {r.hits:>8} {r.misses:>8} {r.rate:>9.4f}")
    return "\n".join(lines)
