"""Storage unavailability under independent node failures.

Closed forms for quorum replication, their lowest-order approximations, the
log-pool write model and a seeded Monte Carlo estimator. Passing ``x`` as a
``Fraction`` (or a decimal string) keeps every closed form exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Union

import numpy as np

Number = Union[float, Fraction]

SCHEMES = ("quorum-write", "quorum-read", "taurus-write", "taurus-read")
REFERENCE_XS = ("0.15", "0.05", "0.01")
LOG_POOL_NODES = 100
LOG_REPLICAS = 3
PAGE_REPLICAS = 3
MC_BLOCK = 1 << 16


@dataclass(frozen=True)
class QuorumConfig:
    n: int
    nw: int
    nr: int

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.nw <= self.n or not 1 <= self.nr <= self.n:
            raise ValueError(f"invalid quorum {self}")

    @property
    def strongly_consistent(self) -> bool:
        return self.nr + self.nw > self.n

    def label(self) -> str:
        return f"N={self.n}, N_W={self.nw}, N_R={self.nr}"


REFERENCE_QUORUMS = (QuorumConfig(6, 4, 3), QuorumConfig(3, 2, 2), QuorumConfig(3, 3, 1))


def as_probability(x: Union[str, Number]) -> Number:
    if isinstance(x, str):
        x = Fraction(x)
    if not 0 <= x <= 1:
        raise ValueError(f"probability {x} outside [0, 1]")
    return x


def _at_least(n: int, k: int, x: Number) -> Number:
    """P(at least k of n independent nodes are down)."""
    return sum(math.comb(n, i) * x**i * (1 - x) ** (n - i) for i in range(max(k, 0), n + 1))


def p_write_exact(cfg: QuorumConfig, x: Union[str, Number]) -> Number:
    x = as_probability(x)
    return _at_least(cfg.n, cfg.n - cfg.nw + 1, x)


def p_read_exact(cfg: QuorumConfig, x: Union[str, Number]) -> Number:
    x = as_probability(x)
    return _at_least(cfg.n, cfg.n - cfg.nr + 1, x)


def p_taurus_write_exact(x: Union[str, Number], pool: int = LOG_POOL_NODES) -> Number:
    """A log write fails only when fewer than three pool nodes are up."""
    x = as_probability(x)
    return _at_least(pool, pool - LOG_REPLICAS + 1, x)


def p_taurus_read_exact(x: Union[str, Number]) -> Number:
    x = as_probability(x)
    return x**PAGE_REPLICAS


def p_approx_lowest(cfg: QuorumConfig | None, x: Union[str, Number], scheme: str) -> Number:
    """Lowest-exponent term of the unavailability sum."""
    x = as_probability(x)
    if scheme == "taurus-write":
        return 0 * x
    if scheme == "taurus-read":
        return x**PAGE_REPLICAS
    if cfg is None:
        raise ValueError(f"{scheme} needs a quorum config")
    if scheme == "quorum-write":
        k = cfg.n - cfg.nw + 1
    elif scheme == "quorum-read":
        k = cfg.n - cfg.nr + 1
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return math.comb(cfg.n, k) * x**k


def exact(cfg: QuorumConfig | None, x: Union[str, Number], scheme: str, pool: int = LOG_POOL_NODES) -> Number:
    if scheme == "quorum-write":
        return p_write_exact(cfg, x)
    if scheme == "quorum-read":
        return p_read_exact(cfg, x)
    if scheme == "taurus-write":
        return p_taurus_write_exact(x, pool)
    if scheme == "taurus-read":
        return p_taurus_read_exact(x)
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class MonteCarloResult:
    failures: int
    trials: int

    @property
    def mean(self) -> float:
        return self.failures / self.trials

    @property
    def stderr(self) -> float:
        p = self.mean
        return math.sqrt(p * (1 - p) / self.trials)

    def within(self, truth: float, sigmas: float = 3.0) -> bool:
        """Two-sided z-test against ``truth`` with the binomial sigma at ``truth``."""
        truth = float(truth)
        sigma = math.sqrt(truth * (1 - truth) / self.trials)
        return abs(self.mean - truth) <= sigmas * sigma


def _failures_in_block(rng: np.random.Generator, size: int, scheme: str, cfg: QuorumConfig | None, x: float, pool: int) -> int:
    # the count of down nodes among n Bernoulli(x) nodes is Binomial(n, x)
    if scheme == "quorum-write":
        down = rng.binomial(cfg.n, x, size)
        return int(np.count_nonzero(down >= cfg.n - cfg.nw + 1))
    if scheme == "quorum-read":
        down = rng.binomial(cfg.n, x, size)
        return int(np.count_nonzero(down >= cfg.n - cfg.nr + 1))
    if scheme == "taurus-write":
        up = rng.binomial(pool, 1.0 - x, size)
        return int(np.count_nonzero(up < LOG_REPLICAS))
    if scheme == "taurus-read":
        down = rng.binomial(PAGE_REPLICAS, x, size)
        return int(np.count_nonzero(down == PAGE_REPLICAS))
    raise ValueError(f"unknown scheme {scheme!r}")


def monte_carlo(
    scheme: str,
    x: Union[str, Number],
    trials: int,
    seed: int,
    cfg: QuorumConfig | None = None,
    pool: int = LOG_POOL_NODES,
    partitions: int = 1,
) -> MonteCarloResult:
    """Estimate unavailability by sampling node states.

    Trials are cut into fixed blocks, each with its own child seed, so the
    estimate does not depend on how blocks are split across ``partitions``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if scheme.startswith("quorum") and cfg is None:
        raise ValueError(f"{scheme} needs a quorum config")
    xf = float(as_probability(x))
    nblocks = -(-trials // MC_BLOCK)
    sizes = [MC_BLOCK] * (nblocks - 1) + [trials - MC_BLOCK * (nblocks - 1)]
    failures = 0
    for part in range(partitions):
        for b in range(part, nblocks, partitions):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
            failures += _failures_in_block(rng, sizes[b], scheme, cfg, xf, pool)
    return MonteCarloResult(failures, trials)


def round_sig1(value: Number) -> tuple[int, int]:
    """Round to one significant digit, halves up; return (digit, exponent)."""
    v = Fraction(value)
    if v < 0:
        raise ValueError("negative probability")
    if v == 0:
        return 0, 0
    e = math.floor(math.log10(float(v)))
    while Fraction(10) ** e > v:
        e -= 1
    while Fraction(10) ** (e + 1) <= v:
        e += 1
    digit = math.floor(v / Fraction(10) ** e + Fraction(1, 2))
    if digit == 10:
        digit, e = 1, e + 1
    return digit, e


def format_sig1(value: Number) -> str:
    digit, e = round_sig1(value)
    if digit == 0:
        return "0"
    return f"{digit}e{e}"


@dataclass(frozen=True)
class TableRow:
    method: str
    cfg: QuorumConfig | None
    write_formula: str
    read_formula: str


def grid_rows() -> list[TableRow]:
    rows = []
    for cfg in REFERENCE_QUORUMS:
        kw, kr = cfg.n - cfg.nw + 1, cfg.n - cfg.nr + 1
        rows.append(TableRow(cfg.label(), cfg, _term(cfg.n, kw), _term(cfg.n, kr)))
    rows.append(TableRow("Taurus", None, "0", "x^3"))
    return rows


def _term(n: int, k: int) -> str:
    c = math.comb(n, k)
    power = "x" if k == 1 else f"x^{k}"
    return power if c == 1 else f"{c}*{power}"


@dataclass(frozen=True)
class TableCell:
    method: str
    x: str
    op: str  # "write" or "read"
    exact: Number
    approx: Number
    mc: MonteCarloResult | None

    @property
    def approx_text(self) -> str:
        return format_sig1(self.approx)


def availability_grid(xs: Iterable[str] = REFERENCE_XS, trials: int = 0, seed: int = 0) -> list[TableCell]:
    cells = []
    for row in grid_rows():
        for xs_ in xs:
            for op in ("write", "read"):
                scheme = ("taurus-" if row.cfg is None else "quorum-") + op
                mc = monte_carlo(scheme, xs_, trials, seed, row.cfg) if trials else None
                cells.append(
                    TableCell(row.method, xs_, op, exact(row.cfg, xs_, scheme), p_approx_lowest(row.cfg, xs_, scheme), mc)
                )
    return cells


def render_table(cells: list[TableCell], xs: Iterable[str] = REFERENCE_XS) -> str:
    xs = list(xs)
    rows = grid_rows()
    header = ["Replication method", "Write", "Read"]
    for x in xs:
        header += [f"x={x} W", f"x={x} R"]
    lines = [header]
    by_key = {(c.method, c.x, c.op): c for c in cells}
    for row in rows:
        line = [row.method, row.write_formula, row.read_formula]
        for x in xs:
            line += [by_key[(row.method, x, "write")].approx_text, by_key[(row.method, x, "read")].approx_text]
        lines.append(line)
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in lines)


def render_detail(cells: list[TableCell]) -> str:
    """One line per cell with exact, approximate and Monte Carlo columns."""
    out = [f"{'method':<26} {'x':>5} {'op':<5} {'exact':>12} {'approx':>12} {'approx1':>7} {'mc':>12} {'mc_se':>10}"]
    for c in cells:
        mc = f"{c.mc.mean:12.4e} {c.mc.stderr:10.2e}" if c.mc else f"{'-':>12} {'-':>10}"
        out.append(f"{c.method:<26} {c.x:>5} {c.op:<5} {float(c.exact):12.4e} {float(c.approx):12.4e} {c.approx_text:>7} {mc}")
    return "\n".join(out)


def render_csv(cells: list[TableCell]) -> str:
    out = ["method,x,op,exact,approx,approx_sig1,mc_mean,mc_stderr,mc_trials"]
    for c in cells:
        mc = f"{c.mc.mean!r},{c.mc.stderr!r},{c.mc.trials}" if c.mc else ",,"
        out.append(f'"{c.method}",{c.x},{c.op},{float(c.exact)!r},{float(c.approx)!r},{c.approx_text},{mc}')
    return "\n".join(out) + "\n"


# write availability of the log pool, exercised through the real writer


@dataclass(frozen=True)
class LogWriteRun:
    writes: int
    failed: int
    attempts: int
    sealed_plogs: int

    @property
    def failure_rate(self) -> float:
        return self.failed / self.writes if self.writes else 0.0


class _FlakyNodes:
    """Node liveness re-drawn from Bernoulli(x) before every append attempt."""

    def __init__(self, names: list[str], x: float, seed: int, block: int = 4096):
        self.index = {n: i for i, n in enumerate(names)}
        self.x = x
        self.block = block
        self.rng = np.random.default_rng(seed)
        self._rows = self.rng.random((block, len(names))) < x
        self._row = 0
        self.down = self._rows[0]

    def resample(self) -> None:
        self._row += 1
        if self._row == self.block:
            self._rows = self.rng.random((self.block, len(self.index))) < self.x
            self._row = 0
        self.down = self._rows[self._row]

    def is_up(self, node: str) -> bool:
        return not self.down[self.index[node]]


def simulate_log_writes(
    writes: int,
    x: float = 0.15,
    nodes: int = LOG_POOL_NODES,
    seed: int = 0,
    payload_bytes: int = 64,
) -> LogWriteRun:
    """Drive ``LogWriter`` over ``nodes`` Log Stores that fail independently.

    Placement and the append each see a fresh liveness draw, so a replica
    chosen as healthy can be down by the time the write arrives. A write
    counts as failed only if the writer gives up, either because fewer than
    three nodes look healthy or because every attempt failed.
    """
    from .logstore import LogStoreClient, LogStoreCluster, LogStoreError, LogStoreNode, LogWriter
    from .rpc import LocalRpc
    from .storage import AppendOnlyFS

    import random

    fs = AppendOnlyFS()
    names = [f"ls{i}" for i in range(1, nodes + 1)]
    ls_nodes = {n: LogStoreNode(n, fs, cache_bytes=0) for n in names}
    flaky = _FlakyNodes(names, x, seed)
    rpc = LocalRpc(dict(ls_nodes), up=flaky.is_up)
    cluster = LogStoreCluster(ls_nodes, rpc=rpc, rng=random.Random(seed), healthy=flaky.is_up, plog_size_limit=1 << 16)

    class _Client(LogStoreClient):
        def create_plog(self, *args, **kwargs):
            flaky.resample()
            return super().create_plog(*args, **kwargs)

        def append(self, plog_id, payload, lsn_range=None):
            flaky.resample()
            return super().append(plog_id, payload, lsn_range)

    client = _Client(cluster, "sal", rpc)
    writer = LogWriter(client)
    payload = bytes(payload_bytes)
    failed = 0
    for lsn in range(1, writes + 1):
        try:
            writer.write(payload, lsn, lsn, max_attempts=nodes)
        except LogStoreError:
            failed += 1
    sealed = sum(p.sealed for p in cluster.plogs.values())
    return LogWriteRun(writes, failed, client.appends, sealed)
