from __future__ import annotations

import random

import networkx as nx
from hypothesis import given, settings
from hypothesis import strategies as st

from compactroute.maxflow import INT32_MAX, max_flow


def _nx_value(n, arcs, s, t):
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    for u, v, c in arcs:
        if g.has_edge(u, v):
            g[u][v]["capacity"] += c
        else:
            g.add_edge(u, v, capacity=c)
    return nx.maximum_flow_value(g, s, t)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 10))
def test_value_matches_reference(seed, n):
    rng = random.Random(seed)
    arcs = [(rng.randrange(n), rng.randrange(n), rng.randint(0, 9)) for _ in range(3 * n)]
    arcs = [(u, v, c) for u, v, c in arcs if u != v]
    res = max_flow(n, arcs, 0, n - 1)
    assert res.value == _nx_value(n, arcs, 0, n - 1)
    # conservation at inner nodes and the cut certificate
    for v in range(1, n - 1):
        assert sum(x for (a, b), x in res.flow.items() if b == v) == sum(x for (a, b), x in res.flow.items() if a == v)
    side = res.source_side
    cut = sum(c for u, v, c in arcs if u in side and v not in side)
    if n - 1 not in side:
        assert cut == res.value


def test_large_capacities_use_exact_fallback():
    big = 3 * INT32_MAX
    res = max_flow(3, [(0, 1, big), (1, 2, big + 5)], 0, 2)
    assert res.value == big


def test_empty_network():
    res = max_flow(2, [], 0, 1)
    assert res.value == 0 and res.source_side == {0}
