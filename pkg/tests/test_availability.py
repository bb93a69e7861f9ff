import math
from fractions import Fraction
from itertools import product

import pytest
from hypothesis import given
from hypothesis import strategies as st

from taurus_mini.availability import (
    REFERENCE_QUORUMS,
    QuorumConfig,
    exact,
    format_sig1,
    monte_carlo,
    p_approx_lowest,
    p_read_exact,
    p_taurus_read_exact,
    p_taurus_write_exact,
    p_write_exact,
    render_csv,
    render_table,
    round_sig1,
    simulate_log_writes,
    availability_grid,
)


def enumerate_down(n, k, x):
    """Independent oracle: sum over all 2^n up/down states."""
    x = Fraction(x)
    total = Fraction(0)
    for state in product((0, 1), repeat=n):
        d = sum(state)
        if d >= k:
            total += x**d * (1 - x) ** (n - d)
    return total


# frozen from the enumeration oracle above
FROZEN_WRITE = {
    ((6, 4, 3), "0.15"): Fraction(302967, 6400000),  # 0.04733859375
    ((6, 4, 3), "0.05"): Fraction(14271, 6400000),
    ((6, 4, 3), "0.01"): Fraction(1955359, 100000000000),
    ((3, 2, 2), "0.15"): Fraction(243, 4000),
    ((3, 2, 2), "0.05"): Fraction(29, 4000),
    ((3, 2, 2), "0.01"): Fraction(149, 500000),
    ((3, 3, 1), "0.15"): Fraction(3087, 8000),
    ((3, 3, 1), "0.05"): Fraction(1141, 8000),
    ((3, 3, 1), "0.01"): Fraction(29701, 1000000),
}


@pytest.mark.parametrize("key", sorted(FROZEN_WRITE))
def test_quorum_write_matches_frozen_enumeration(key):
    (n, nw, nr), x = key
    assert p_write_exact(QuorumConfig(n, nw, nr), x) == FROZEN_WRITE[key]


def test_six_node_write_example_value():
    assert float(p_write_exact(QuorumConfig(6, 4, 3), "0.15")) == pytest.approx(0.04733859375, abs=1e-12)


configs = st.tuples(st.integers(1, 7), st.data())


@given(st.integers(1, 7), st.data(), st.fractions(0, 1, max_denominator=50))
def test_closed_forms_agree_with_enumeration(n, data, x):
    nw = data.draw(st.integers(1, n))
    nr = data.draw(st.integers(1, n))
    cfg = QuorumConfig(n, nw, nr)
    assert p_write_exact(cfg, x) == enumerate_down(n, n - nw + 1, x)
    assert p_read_exact(cfg, x) == enumerate_down(n, n - nr + 1, x)
    assert p_taurus_read_exact(x) == enumerate_down(3, 3, x)


def test_log_pool_write_needs_only_three_live_nodes():
    # at x = 1/2 the pool fails iff at most two of 100 nodes are up
    assert p_taurus_write_exact(Fraction(1, 2)) == Fraction(1 + 100 + 4950, 2**100)
    assert p_taurus_write_exact("0") == 0
    assert p_taurus_write_exact("1") == 1
    assert p_taurus_write_exact("0.15", pool=3) == enumerate_down(3, 1, "0.15")
    assert float(p_taurus_write_exact("0.15")) < 1e-70


@given(st.fractions(0, 1, max_denominator=100), st.fractions(0, 1, max_denominator=100))
def test_unavailability_grows_with_node_failure_probability(a, b):
    lo, hi = min(a, b), max(a, b)
    for cfg in REFERENCE_QUORUMS:
        assert p_write_exact(cfg, lo) <= p_write_exact(cfg, hi)
        assert p_read_exact(cfg, lo) <= p_read_exact(cfg, hi)
    assert p_taurus_write_exact(lo) <= p_taurus_write_exact(hi)


@given(st.fractions(Fraction(1, 10000), Fraction(15, 100), max_denominator=10000))
def test_lowest_order_term_is_close_for_small_x(x):
    for cfg in REFERENCE_QUORUMS:
        for scheme in ("quorum-write", "quorum-read"):
            ex = exact(cfg, x, scheme)
            ap = p_approx_lowest(cfg, x, scheme)
            assert ap >= ex  # the lowest term over-counts overlapping failures
            assert abs(ap - ex) / ex <= Fraction(1, 2)


def test_strong_consistency_flag():
    assert all(cfg.strongly_consistent for cfg in REFERENCE_QUORUMS)
    assert not QuorumConfig(3, 1, 1).strongly_consistent
    with pytest.raises(ValueError):
        QuorumConfig(3, 4, 1)
    with pytest.raises(ValueError):
        p_write_exact(QuorumConfig(3, 2, 2), "1.5")


def test_approximate_formula_strings():
    table = render_table(availability_grid())
    assert "20*x^3" in table and "15*x^4" in table and "3*x^2" in table
    assert table.splitlines()[-1].split()[:3] == ["Taurus", "0", "x^3"]


@pytest.mark.parametrize(
    "value,expected",
    [
        (Fraction(0), (0, 0)),
        (Fraction(1), (1, 0)),
        (Fraction(15, 1000), (2, -2)),  # halves round up
        (Fraction(149, 1000), (1, -1)),
        (Fraction(95, 100), (1, 0)),  # carries into the next decade
        (Fraction(81, 10**7), (8, -6)),
    ],
)
def test_round_to_one_significant_digit(value, expected):
    assert round_sig1(value) == expected


def test_format_sig1():
    assert format_sig1(Fraction(675, 10**5)) == "7e-3"
    assert format_sig1(0) == "0"


def test_monte_carlo_is_seeded_and_partition_independent():
    cfg = QuorumConfig(3, 2, 2)
    a = monte_carlo("quorum-write", "0.15", 200_000, seed=3, cfg=cfg)
    b = monte_carlo("quorum-write", "0.15", 200_000, seed=3, cfg=cfg, partitions=4)
    assert a == b
    assert a != monte_carlo("quorum-write", "0.15", 200_000, seed=4, cfg=cfg)
    assert a.within(exact(cfg, "0.15", "quorum-write"))
    assert not a.within(0.1)
    with pytest.raises(ValueError):
        monte_carlo("quorum-read", "0.1", 10, seed=0)
    with pytest.raises(ValueError):
        monte_carlo("taurus-read", "0.1", 0, seed=0)


def test_monte_carlo_extremes():
    assert monte_carlo("taurus-read", "0", 1000, 0).failures == 0
    assert monte_carlo("taurus-read", "1", 1000, 0).failures == 1000
    assert monte_carlo("taurus-write", "0.15", 100_000, 0).failures == 0


def test_csv_has_one_row_per_cell():
    cells = availability_grid(["0.1"], trials=1000, seed=1)
    lines = render_csv(cells).splitlines()
    assert len(lines) == 1 + 4 * 2
    assert lines[0].startswith("method,x,op,exact")


def test_log_writer_survives_flaky_pool_but_not_a_tiny_one():
    run = simulate_log_writes(2000, x=0.15, nodes=100, seed=1)
    assert run.failed == 0 and run.attempts >= run.writes
    tiny = simulate_log_writes(500, x=0.5, nodes=6, seed=1)
    assert tiny.failed > 0
    assert simulate_log_writes(200, x=0.0, nodes=3, seed=0).attempts == 200


def test_log_writer_attempts_match_independent_failures():
    # each attempt succeeds iff its three replicas are up: expected tries 1/(1-x)^3
    run = simulate_log_writes(5000, x=0.15, nodes=100, seed=2)
    expected = 1 / (1 - 0.15) ** 3
    assert run.attempts / run.writes == pytest.approx(expected, rel=0.05)
    assert math.isfinite(run.failure_rate)
