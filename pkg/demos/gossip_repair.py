"""
Repairing a slice replica by gossip
===================================

A record reaches two of three Page Stores. The third learns about the hole
and copies the record from a peer; the trace shows the copy.
"""

from taurus_mini.simnet.scenario import bundled_scenarios, load_scenario, run_scenario

path = bundled_scenarios()["fig5a"]
print(path.read_text())

result = run_scenario(load_scenario(path), seed=7)

# the interesting part of the trace
for line in result.trace:
    kind = line.split()[1]
    if kind in ("drop", "gossip_copy", "gossip", "check"):
        print(line)

# persistent LSNs and gap lists at the end
cluster = result.cluster
for slice_id, nodes in cluster.cm.placement.items():
    for node in nodes:
        status = cluster.page_stores[node].status(slice_id)
        print(node, slice_id, "persistent", status.persistent_lsn, "gaps", list(status.gaps))

print("PASS" if result.ok else result.first_failure())
