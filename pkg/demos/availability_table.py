"""
Storage unavailability under independent node failures
======================================================

Closed forms, their lowest-order approximations and a Monte Carlo check,
for three quorum layouts and the log/page split.
"""

from fractions import Fraction

import numpy as np

from taurus_mini import availability as av

# exact values stay rational when x is given as a string
cfg = av.QuorumConfig(6, 4, 3)
print(cfg.label(), "write at x=0.15:", av.p_write_exact(cfg, "0.15"))

# the approximation keeps only the lowest power of x
for x in av.REFERENCE_XS:
    ex = av.p_write_exact(cfg, x)
    ap = av.p_approx_lowest(cfg, x, "quorum-write")
    print(f"x={x}: exact {float(ex):.3e}  approx {float(ap):.3e}  ratio {float(ap / ex):.3f}")

# a log write only needs three live nodes out of a hundred
print("log pool write at x=0.15:", float(av.p_taurus_write_exact("0.15")))
print("log pool write at x=1/2 :", av.p_taurus_write_exact(Fraction(1, 2)))

# the published grid, rounded to one significant digit
print()
print(av.render_table(av.availability_grid()))

# Monte Carlo spread over seeds for one cell
truth = float(av.p_read_exact(cfg, "0.05"))
means = np.array([av.monte_carlo("quorum-read", "0.05", 200_000, s, cfg).mean for s in range(10)])
print()
print(f"read at x=0.05: truth {truth:.3e}, MC mean {means.mean():.3e} +- {means.std(ddof=1):.1e}")

# the writer itself, driven through a pool whose nodes flicker
run = av.simulate_log_writes(5000, x=0.15, nodes=100, seed=1)
print(f"{run.writes} log writes, {run.failed} failed, {run.attempts / run.writes:.3f} attempts per write")
