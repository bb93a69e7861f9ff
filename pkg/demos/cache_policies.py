"""
Buffer pool hit rates: LFU against LRU
======================================

A skewed read stream favours frequency over recency; a uniform one does not
care. Rates are reported, not asserted.
"""

from taurus_mini.cachebench import CacheWorkload, compare, render

for skew in (0.8, 1.1, 1.4):
    w = CacheWorkload(pages=512, pool_pages=32, reads=20_000, skew=skew)
    print(f"zipf skew {skew}")
    print(render(compare(w, seed=0), w))
    print()

w = CacheWorkload(pages=512, pool_pages=32, reads=20_000, distribution="uniform")
print("uniform")
print(render(compare(w, seed=0), w))
