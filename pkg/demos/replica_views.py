"""
Read replicas and group boundaries
==================================

A replica applies whole record groups and only exposes LSNs that end a
group and that every slice already holds. Each sampled view reads two
pages written by the same group and checks they agree.
"""

import numpy as np

from taurus_mini.simnet.scenario import bundled_scenarios, load_scenario, run_scenario

result = run_scenario(load_scenario(bundled_scenarios()["replica_lag"]), seed=7)
rr = result.cluster.replicas["rr1"]

print("views checked:", next(c.detail for c in result.checks if c.name == "replica_consistency"))
print("visible LSN", rr.state.visible_lsn, "limit", rr.visibility_limit())

# replica lag samples from the metrics stream
lag = np.array([v for _, metric, _, v in result.metrics if metric == "replicaLag"])
print(f"replica lag: mean {lag.mean():.2f} ms, max {lag.max():.2f} ms over {lag.size} samples")

print("PASS" if result.ok else result.first_failure())
