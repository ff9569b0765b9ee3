from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactroute.oracle import OracleError, dual_bound, opt_congestion, pmcf_congestion, product_demands
from compactroute.graph import Graph

from conftest import A, B, bottleneck_graph, complete, grid, random_connected
from test_flows import lp_congestion

K4_PMCF_DEGREE = 1.5  # recorded from the exact LP


def test_single_edge_forced():
    cert = opt_congestion(Graph(2, [(0, 1, 1)]), {(0, 1): 2})
    assert cert.primal == pytest.approx(2) and cert.gap == pytest.approx(1)


def test_bottleneck_demand_four():
    cert = opt_congestion(bottleneck_graph(), {(A, B): 4})
    assert cert.primal == pytest.approx(1) and cert.dual == pytest.approx(1)


def test_zero_demands():
    cert = opt_congestion(grid(3), {})
    assert cert.primal == 0 and cert.dual == 0


def test_disconnected_demand_rejected():
    with pytest.raises(OracleError):
        opt_congestion(Graph(4, [(0, 1, 1), (2, 3, 1)]), {(0, 3): 1})


def test_pmcf_examples():
    assert pmcf_congestion(Graph(2, [(0, 1, 1)]), [0, 1], {0: 1, 1: 1}).primal == pytest.approx(1)
    assert pmcf_congestion(grid(2), [0], {0: 2}).primal == 0
    k4 = complete(4)
    cert = pmcf_congestion(k4, range(4), {v: k4.degree(v) for v in range(4)})
    assert cert.primal == pytest.approx(K4_PMCF_DEGREE)


def test_product_demands():
    d = product_demands({0: 1, 1: 3})
    assert d[(0, 1)] == pytest.approx(3 / 4) and d[(1, 0)] == pytest.approx(3 / 4)


def test_mwu_within_tolerance():
    g = grid(4)
    rng = np.random.default_rng(3)
    perm = rng.permutation(16)
    d = {(u, int(perm[u])): 1 for u in range(16) if perm[u] != u}
    lp = opt_congestion(g, d)
    mwu = opt_congestion(g, d, eps=0.05, lp_threshold=0)
    assert mwu.method == "mwu"
    assert mwu.dual <= lp.primal * (1 + 1e-6) and mwu.primal >= lp.primal * (1 - 1e-6)
    assert mwu.gap <= 1.05 + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 9))
def test_certificate_brackets_optimum(seed, n):
    rng = random.Random(seed)
    g = random_connected(rng, n)
    d = {}
    for _ in range(n):
        s, t = rng.randrange(n), rng.randrange(n)
        if s != t:
            d[(s, t)] = rng.randint(1, 4)
    cert = opt_congestion(g, d)
    assert cert.dual <= cert.primal * (1 + 1e-9)
    assert cert.gap <= 1.05
    # any length function gives a lower bound
    y = np.array([rng.random() for _ in range(g.m)])
    assert dual_bound(g, d, y) <= cert.primal * (1 + 1e-7)
    # single commodity agrees with the flow LP
    if d:
        (s, t), x = next(iter(sorted(d.items())))
        single = opt_congestion(g, {(s, t): x})
        assert single.primal == pytest.approx(lp_congestion(g, {s: x}, {t: x}), rel=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000), st.floats(0.5, 8))
def test_congestion_scales_linearly(seed, gamma):
    rng = random.Random(seed)
    g = random_connected(rng, 6)
    d = {(0, 5): 2, (3, 1): 1}
    a = opt_congestion(g, d)
    b = opt_congestion(g, {k: x * gamma for k, x in d.items()})
    assert b.primal == pytest.approx(gamma * a.primal, rel=1e-6)
