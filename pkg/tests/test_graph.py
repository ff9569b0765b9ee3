from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactroute.graph import (DemandMatrix, DisconnectedGraphError, Distribution, Flow, Graph, GraphFormatError,
                                edge_class, flow_balance, format_graph, parse_demands, parse_graph, total_congestion)

from conftest import bottleneck_graph, random_connected


@pytest.mark.parametrize("cap,cls", [(8, 3), (1, 0), (1024, 10)])
def test_edge_class(cap, cls):
    assert edge_class(cap) == cls


def test_edge_class_rejects_non_power():
    with pytest.raises(ValueError):
        edge_class(6)


def test_single_edge_balance():
    g = Graph(2, [(0, 1, 1)])
    f = Flow.from_oriented(g, {(0, 1): 1})
    assert flow_balance(f, 0) == -1 and flow_balance(f, 1) == 1


def test_triangle_circulation_balances_vanish():
    g = Graph(3, [(0, 1, 1), (1, 2, 1), (0, 2, 1)])
    f = Flow.from_oriented(g, {(0, 1): 1, (1, 2): 1, (2, 0): 1})
    assert all(flow_balance(f, v) == 0 for v in range(3))


def test_path_interior_conserves():
    g = Graph(3, [(0, 1, 1), (1, 2, 1)])
    f = Flow.from_oriented(g, {(0, 1): 2, (1, 2): 2})
    assert flow_balance(f, 1) == 0


def test_congestion_examples():
    g = Graph(2, [(0, 1, 1)])
    assert total_congestion([Flow.from_oriented(g, {(0, 1): 3})]) == 3
    f3 = bottleneck_graph()
    split = {(0, 1): 1}
    for m in range(2, 6):
        split[(1, m)] = Fraction(1, 4)
        split[(m, 6)] = Fraction(1, 4)
    assert total_congestion([Flow.from_oriented(f3, split)]) == Fraction(1, 4)
    g2 = Graph(2, [(0, 1, 2)])
    one = Flow.from_oriented(g2, {(0, 1): 1})
    assert total_congestion([one, one]) == 1


def test_graph_rejects_bad_edges():
    with pytest.raises(ValueError):
        Graph(2, [(0, 0, 1)])
    with pytest.raises(ValueError):
        Graph(2, [(0, 1, 1), (1, 0, 2)])
    with pytest.raises(ValueError):
        Graph(2, [(0, 2, 1)])


def test_n_class_matches_max_capacity():
    g = Graph(3, [(0, 1, 1), (1, 2, 16)])
    assert g.W == 16 and g.n_class == 5


def test_parse_graph_reports_line():
    with pytest.raises(GraphFormatError) as exc:
        parse_graph("0 1 1\n# comment\n1 2\n", "g.txt")
    assert "g.txt:3" in str(exc.value)


def test_parse_graph_rounds_capacity_down():
    g = parse_graph("0 1 5\n")
    assert g.capacity(0, 1) == 4


def test_parse_graph_rejects_parallel():
    with pytest.raises(GraphFormatError):
        parse_graph("0 1 1\n1 0 1\n")


def test_format_roundtrip():
    g = bottleneck_graph()
    h = parse_graph(format_graph(g))
    assert [(e.u, e.v, e.capacity) for e in h.edges] == [(e.u, e.v, e.capacity) for e in g.edges]


def test_disconnected_detected():
    g = Graph(4, [(0, 1, 1), (2, 3, 1)])
    assert not g.is_connected()
    with pytest.raises(DisconnectedGraphError):
        g.require_connected()


def test_parse_demands():
    d = parse_demands("0 1 1/2\n0 1 1/2\n", 2)
    assert d[(0, 1)] == 1
    with pytest.raises(GraphFormatError):
        parse_demands("0 5 1\n", 2)
    with pytest.raises(GraphFormatError):
        parse_demands("0 1 -1\n", 2)


def test_distribution_and_demands_scale():
    mu = Distribution({0: 1, 1: 3})
    assert mu.total == 4
    assert mu.normalized()[1] == Fraction(3, 4)
    d = DemandMatrix({(0, 1): 2})
    assert d.scaled(3)[(0, 1)] == 6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12))
def test_random_flow_invariants(seed, n):
    rng = random.Random(seed)
    g = random_connected(rng, n)
    f = Flow(g)
    for _ in range(3 * n):
        e = g.edges[rng.randrange(g.m)]
        f.add(e.u, e.v, Fraction(rng.randint(-5, 5), rng.randint(1, 4)))
    assert f.is_antisymmetric()
    assert sum(f.balances()) == 0
    assert [f.balance(v) for v in range(n)] == f.balances()
    assert (f + (-f)).edge_values() == {}
    assert f.scaled(2).congestion() == 2 * f.congestion()
