from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compactroute.decomposition import (TreeError, border_weights, build_tree, child_range_from_counts, format_tree,
                                        parse_tree)
from compactroute.graph import Graph, GraphFormatError

from conftest import A, C, bottleneck_graph, grid, path_graph, random_connected, single_edge

F1_TREE = "0 r -1 : 0 1\n1 x r : 0\n1 y r : 1\n"


def check_laminar(tree):
    g = tree.graph
    root = tree.clusters[tree.root]
    assert sorted(root.nodes) == list(range(g.n))
    leaves = sorted(c.nodes for c in tree.clusters if c.is_leaf)
    assert leaves == [(v,) for v in range(g.n)]
    for c in tree.clusters:
        if not c.is_leaf:
            parts = sorted(v for ch in c.children for v in tree.clusters[ch].nodes)
            assert parts == sorted(c.nodes)
            assert g.is_connected(c.nodes)
    for v in range(g.n):
        path = tree.path(v)
        assert [tree.clusters[c].depth for c in path] == list(range(len(path)))
        assert all(v in tree.clusters[c].nodes for c in path)


def test_single_edge_tree():
    tree = build_tree(single_edge())
    assert tree.height == 1
    assert sorted(tree.clusters[ch].nodes for ch in tree.clusters[tree.root].children) == [(0,), (1,)]


def test_path_tree():
    tree = build_tree(path_graph())
    check_laminar(tree)
    assert tree.height <= 3


def test_grid_tree_height():
    tree = build_tree(grid(4))
    check_laminar(tree)
    assert tree.height <= math.log(16, 1.5) + 1


def test_import_matches_build():
    g = single_edge()
    a, b = build_tree(g), parse_tree(F1_TREE, g)
    assert [sorted(c.nodes) for c in a.clusters] == [sorted(c.nodes) for c in b.clusters]
    assert a.clusters[0].C == pytest.approx(b.clusters[0].C)


def test_overlapping_children_rejected():
    text = "0 r -1 : 0 1 2\n1 x r : 0 1\n1 y r : 1 2\n2 a x : 0\n2 b x : 1\n2 c y : 1\n2 d y : 2\n"
    with pytest.raises(TreeError) as exc:
        parse_tree(text, path_graph(3), "t.txt")
    assert "t.txt:1" in str(exc.value)


def test_missing_leaf_rejected():
    with pytest.raises(TreeError):
        parse_tree("0 r -1 : 0 1\n1 x r : 0\n", single_edge())


def test_tree_file_syntax_errors():
    with pytest.raises(GraphFormatError) as exc:
        parse_tree("0 r -1 : 0 1\n1 x r 0\n", single_edge(), "t.txt")
    assert "t.txt:2" in str(exc.value)
    with pytest.raises(GraphFormatError):
        parse_tree("0 r -1 : 0 7\n", single_edge())


def test_disconnected_cluster_rejected():
    g = path_graph(3)
    text = "0 r -1 : 0 1 2\n1 x r : 0 2\n1 y r : 1\n2 a x : 0\n2 b x : 2\n"
    with pytest.raises(TreeError):
        parse_tree(text, g)


def test_format_roundtrip():
    g = grid(3)
    tree = build_tree(g, measure=False)
    again = parse_tree(format_tree(tree), g, measure=False)
    assert [c.nodes for c in again.clusters] == [c.nodes for c in tree.clusters]


def test_border_weight_examples():
    assert border_weights(single_edge(), [0])[0] == {0: 1}
    f3 = bottleneck_graph()
    assert border_weights(f3, [A])[0] == {A: 4}
    out, by_class = border_weights(f3, [A, C])
    assert out == {C: 4} and by_class.get(2, {}) == {} and by_class[0] == {C: 4}


def test_cluster_weights_on_bottleneck():
    f3 = bottleneck_graph()
    text = "0 r -1 : 0 1 2 3 4 5 6\n" + "".join(f"1 n{v} r : {v}\n" for v in range(7))
    tree = parse_tree(text, f3)
    cw = tree.weights(tree.root)
    # w_S sums the border weights of the singleton children, i.e. weighted degrees
    assert cw.w == {v: sum(f3.edges[e].capacity for _, e in f3.adj[v]) for v in range(7)}
    for info in cw.children:
        l = info.cls
        mass = info.class_total(l)
        assert mass * f3.n_class >= info.total
        assert mass / 2 ** l <= info.norm <= 2 * mass / 2 ** l
        assert info.norm & (info.norm - 1) == 0


def test_child_ranges_tile_each_class():
    tree = build_tree(grid(4), measure=False)
    for c in tree.clusters:
        if c.is_leaf:
            continue
        cw = tree.weights(c.id)
        spans: dict[int, list[tuple[int, int]]] = {}
        for info in cw.children:
            l, first, size = cw.child_range(info.index)
            assert l == info.cls and size == info.norm
            spans.setdefault(l, []).append((first, size))
        for l, sp in spans.items():
            sp.sort()
            pos = 0
            for first, size in sp:
                assert first == pos
                pos += size
    with pytest.raises(IndexError):
        child_range_from_counts({0: 1}, {(0, 1): 1}, 1)


def test_measured_congestion_positive():
    tree = build_tree(grid(3))
    for c in tree.clusters:
        if not c.is_leaf:
            assert c.C > 0 and c.C_dual <= c.C * (1 + 1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 16))
def test_random_trees_are_laminar(seed, n):
    g = random_connected(random.Random(seed), n)
    check_laminar(build_tree(g, measure=False))
