"""Request/response contract between actors.

Components talk to other nodes only through an object with
``call(src, dst, method, *args)`` (synchronous request, raises when the
destination cannot answer) and ``send(src, dst, method, *args)`` (one-way
message that may be lost). The simulator's network implements both;
``LocalRpc`` is a direct in-process stand-in for unit tests.
"""

from __future__ import annotations

from typing import Any, Callable


class NodeUnavailable(ConnectionError):
    """The destination is down, partitioned away, or dropped the request."""


class RpcTimeout(TimeoutError):
    """The destination is alive but did not answer within the budget."""


RPC_ERRORS = (NodeUnavailable, RpcTimeout)


class LocalRpc:
    def __init__(self, nodes: dict[str, Any] | None = None, up: Callable[[str], bool] | None = None):
        self.nodes = nodes if nodes is not None else {}
        self.up = up or (lambda node: True)
        self.calls = 0

    def register(self, node_id: str, actor: Any) -> None:
        self.nodes[node_id] = actor

    def call(self, src: str, dst: str, method: str, *args):
        self.calls += 1
        if dst not in self.nodes or not self.up(dst):
            raise NodeUnavailable(dst)
        return getattr(self.nodes[dst], method)(*args)

    def send(self, src: str, dst: str, method: str, *args) -> None:
        try:
            self.call(src, dst, method, *args)
        except NodeUnavailable:
            pass
