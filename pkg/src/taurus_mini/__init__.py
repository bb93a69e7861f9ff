"""Deterministic desk-scale model of a cloud database storage layer that
separates the log (Log Stores) from the pages (Page Stores).

Modules: ``core`` (records, LSNs, ids), ``logstore``, ``pagestore``,
``sal`` (the storage abstraction layer on the master), ``replica``,
``simnet`` (event simulator, cluster manager, scenarios), ``availability``
and ``cli``.
"""

__version__ = "0.1.0"
