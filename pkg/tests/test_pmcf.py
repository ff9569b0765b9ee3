from __future__ import annotations

import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactroute.config import Config
from compactroute.decomposition import build_tree, parse_tree
from compactroute.graph import Graph
from compactroute.pmcf import PmcfError, build_mixing_cts, build_pmcf_cts, potential, virtual_split

from conftest import bottleneck_graph, complete, cube, grid, path_graph, random_connected, single_edge


def exact_kernel(p):
    """Rational end-node distribution over all N rounds, from the slot tables alone."""
    n, R = p.n, p.R
    T = [[Fraction(int(i == j)) for j in range(n)] for i in range(n)]
    for r in range(p.N):
        P = [[Fraction(0)] * n for _ in range(n)]
        dest = p.rounds[r].dest
        for x in p.nodes:
            i = p.idx[x]
            if p.c.get(x, 0) == 0:
                P[i][i] = Fraction(1)
                continue
            P[i][i] += Fraction(1, 2)
            for k, w in zip(dest[x].tolist(), p.slot_weights(x, R).tolist()):
                P[i][k] += Fraction(int(w), 2 * R)
        T = [[sum(T[i][k] * P[k][j] for k in range(n)) for j in range(n)] for i in range(n)]
    return T


def mixed_within(p, T, slack):
    """|T[x][y] - cbar(y)| <= slack * cbar(y) in integer arithmetic."""
    cV = p.cV
    for x in p.nodes:
        if not p.c.get(x, 0):
            continue
        for y in p.nodes:
            cy = p.c.get(y, 0)
            t = T[p.idx[x]][p.idx[y]]
            if abs(t * cV - cy) > slack * cy:
                return False
    return True


def test_virtual_split_balanced():
    slots = {0: 4, 1: 4, 2: 8}
    mu1, mu2 = virtual_split([2, 0, 1], slots)
    assert sum(mu1.values()) == sum(mu2.values()) == 8
    assert mu1 == {2: 8} and mu2 == {0: 4, 1: 4}
    a, b = virtual_split([5, 7], {5: 1, 7: 1})
    assert a == {5: 1} and b == {7: 1}


def test_single_edge_enumeration_matches_kernel():
    p = build_pmcf_cts(single_edge(), [0, 1], {0: 1, 1: 1})
    assert p.N == 1
    ends = {0: 0, 1: 0}
    for value in range(2 * p.R):
        end, _ = p.replay(0, (value,))
        ends[end] += 1
    T = exact_kernel(p)
    assert Fraction(ends[1], 2 * p.R) == T[0][1]
    assert np.allclose(p.kernel()[0][0], [float(x) for x in T[0]])


def test_all_stay_never_moves():
    p = build_pmcf_cts(grid(3), range(9), {v: 1 for v in range(9)})
    for x in p.nodes:
        end, edges = p.replay(x, tuple(0 for _ in range(p.N)))
        assert end == x and edges == []


def test_replay_validates_input():
    p = build_pmcf_cts(single_edge(), [0, 1], {0: 1, 1: 1})
    with pytest.raises(PmcfError):
        p.replay(0, ())
    with pytest.raises(PmcfError):
        p.replay(0, (2 * p.R,))


def test_zero_weight_node_holds_no_slots():
    p = build_pmcf_cts(path_graph(3), range(3), {0: 1, 2: 1})
    assert p.slots(1) == 0 and p.decode(1, 2 * p.R - 1) is None
    assert p.replay(1, tuple(2 * p.R - 1 for _ in range(p.N)))[0] == 1


def test_rejects_bad_weights():
    with pytest.raises(PmcfError):
        build_pmcf_cts(single_edge(), [0, 1], {0: 0, 1: 0})
    with pytest.raises(PmcfError):
        build_pmcf_cts(single_edge(), [0, 1], {0: Fraction(1, 2), 1: 1})


def test_monte_carlo_matches_exact_on_k4():
    k4 = complete(4)
    c = {v: k4.degree(v) for v in range(4)}
    p = build_pmcf_cts(k4, range(4), c)
    rng = random.Random(1)
    trials = 100_000
    counts = np.zeros(4)
    for _ in range(trials):
        counts[p.idx[p.replay(0, p.sample_pid(rng))[0]]] += 1
    emp = counts / trials
    T, _ = p.kernel()
    sigma = np.sqrt(T[0] * (1 - T[0]) / trials)
    assert np.all(np.abs(emp - T[0]) <= 3 * sigma + 1e-12)
    cbar = p.target()
    assert np.all(np.abs(emp - cbar) <= 0.5 * cbar + 3 * sigma)


def test_conditioned_sampling_hits_target():
    g = grid(3)
    p = build_pmcf_cts(g, range(9), {v: g.degree(v) for v in range(9)})
    rng = random.Random(0)
    for x in (0, 4, 8):
        for w in (0, 2, 7):
            for _ in range(20):
                assert p.replay(x, p.sample_pid_to(rng, x, w))[0] == w


def test_conditioned_sampling_is_uniform():
    p = build_pmcf_cts(single_edge(), [0, 1], {0: 1, 1: 1})
    rng = random.Random(2)
    ids = [v for v in range(2 * p.R) if p.replay(0, (v,))[0] == 1]
    seen = {}
    for _ in range(4000):
        pid = p.sample_pid_to(rng, 0, 1)
        seen[pid] = seen.get(pid, 0) + 1
    assert set(seen) == {(v,) for v in ids}
    expect = 4000 / len(ids)
    assert max(seen.values()) < 2 * expect and min(seen.values()) > expect / 2


def test_rounds_keep_uniform_fixed_and_potential_monotone():
    g = grid(3)
    c = {v: g.degree(v) for v in range(9)}
    p = build_pmcf_cts(g, range(9), c)
    slots = np.array([p.slots(v) for v in p.nodes], dtype=float)
    uniform = np.tile(p.target(), (p.n, 1))
    D = np.eye(p.n)
    for r in range(p.N):
        P = p.round_matrix(r)
        assert np.allclose(uniform @ P, uniform, atol=1e-9)
        assert potential(uniform @ P, slots) <= 1e-12
        nxt = D @ P
        assert potential(nxt, slots) <= potential(D, slots) * (1 + 1e-9) + 1e-12
        D = nxt


def test_round_loads_match_replay():
    g = bottleneck_graph()
    p = build_pmcf_cts(g, range(7), {v: 1 for v in range(7)})
    T, L = p.kernel()
    x = 0
    total = np.zeros(g.m)
    count = 0
    R = p.R
    for value in range(2 * R):
        i = p.decode(x, value)
        if i is None:
            count += 1
            continue
        _, path = p.slot_path(0, x, i)
        for e in path:
            total[e] += 1
        count += 1
    assert np.allclose(total / count, p.round_loads(0)[p.idx[x]])


@pytest.mark.parametrize("name,graph,c", [
    ("edge", single_edge(), {0: 1, 1: 1}),
    ("path", path_graph(4), {0: 1, 1: 2, 2: 2, 3: 1}),
    ("square", cube(2), {v: 2 for v in range(4)}),
    ("k4", complete(4), {v: 3 for v in range(4)}),
    ("ladder", Graph(6, [(0, 1, 1), (1, 2, 1), (3, 4, 1), (4, 5, 1), (0, 3, 1), (1, 4, 1), (2, 5, 1)]),
     {v: 2 for v in range(6)}),
])
def test_exact_mixing_small(name, graph, c):
    p = build_pmcf_cts(graph, range(graph.n), c)
    T = exact_kernel(p)
    assert mixed_within(p, T, Fraction(2, p.n))


def test_mixing_cts_on_bottleneck():
    f3 = bottleneck_graph()
    text = "0 r -1 : 0 1 2 3 4 5 6\n" + "".join(f"1 n{v} r : {v}\n" for v in range(7))
    tree = parse_tree(text, f3)
    mix = build_mixing_cts(f3, tree, tree.root)
    assert all(ts is None for ts in mix.stage1.values())
    p = mix.pmcf
    w = tree.weights(tree.root).w
    assert p.c == w
    T, _ = p.kernel()
    cbar = p.target()
    assert np.all(np.abs(T - cbar) <= cbar / p.n + 1e-9)


def test_mixing_stage_one_routes_children():
    g = grid(4)
    tree = build_tree(g)
    mix = build_mixing_cts(g, tree, tree.root)
    cw = tree.weights(tree.root)
    for info in cw.children:
        ts = mix.stage1[info.cluster]
        if ts is None:
            continue
        child_w = tree.weights(info.cluster).w
        # totals are rescaled to a common integer, proportions are kept
        arrivals = {v: sum(hi - lo + 1 for lo, hi in r) for v, r in ts.arrivals.items()}
        scale = Fraction(sum(arrivals.values()), sum(info.out.values()))
        assert {v: Fraction(x) / scale for v, x in arrivals.items()} == {v: x for v, x in info.out.items()}
        assert set(ts.mu) <= set(child_w)


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 6))
def test_random_small_clusters_mix_exactly(seed, n):
    rng = random.Random(seed)
    g = random_connected(rng, n, max_class=2)
    budget = rng.randint(n, 12)
    c = {v: 1 for v in range(n)}
    for _ in range(budget - n):
        v = rng.randrange(n)
        c[v] += 1
    p = build_pmcf_cts(g, range(n), c, Config(), seed=seed)
    assert mixed_within(p, exact_kernel(p), Fraction(2, n))
