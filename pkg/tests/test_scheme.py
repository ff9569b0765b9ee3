from __future__ import annotations

import copy
import math
import random

import pytest

from compactroute.bits import clog2
from compactroute.flows import flow_ts
from compactroute.runtime import (DOWN, FlowFrame, Header, NodeTable, RoutingFault, Stage, Top, initial_header,
                                  step)
from compactroute.scheme import (BundleFormatError, SchemeError, assign_labels, build_scheme, decode_label,
                                 forward, label_bits, label_bound, load_bundle, packet_rng, route, route_arc,
                                 route_label, save_bundle)

from conftest import A, B, C, bottleneck_graph, path_graph


def test_single_edge_labels(f1_bundle):
    assert f1_bundle.labels == {0: (0,), 1: (1,)}
    assert [label_bits(f1_bundle.tree, v) for v in (0, 1)] == [1, 1]
    assert len(f1_bundle.mixing) == len(f1_bundle.unmixing) == 1


@pytest.mark.parametrize("name", ["f1_bundle", "f2_bundle", "f3_bundle", "q3_bundle", "f5_bundle"])
def test_labels_bijective_and_bounded(name, request):
    b = request.getfixturevalue(name)
    tree = b.tree
    labels = assign_labels(tree)
    assert len(set(labels.values())) == b.graph.n
    for v, lab in labels.items():
        assert decode_label(tree, lab) == v
        # per-level recomputation from the tree structure
        want = sum(max(1, clog2(len(tree.clusters[c].children))) for c in tree.path(v)[:-1])
        assert label_bits(tree, v) == want <= label_bound(tree)


def test_step_single_edge(f1_bundle):
    b = f1_bundle
    header = initial_header(b.tables[0], b.labels[1])
    port, header = step(b.tables[0], header, random.Random(0))
    assert b.graph.adj[0][port][0] == 1
    # the random walk stages may bounce over the only edge; it must settle at 1
    rng, x = random.Random(0), 1
    while port is not None:
        port, header = step(b.tables[x], header, rng)
        if port is not None:
            x = b.graph.adj[x][port][0]
    assert x == 1 and len(header.stack) == 1


def test_step_terminal_header(f1_bundle):
    header = initial_header(f1_bundle.tables[1], f1_bundle.labels[1])
    assert step(f1_bundle.tables[1], header, random.Random(0))[0] is None


def test_step_flow_token_follows_interval():
    g = path_graph()
    ts = flow_ts(g, {0: 1}, {3: 1})
    tables = [NodeTable(v, g.degree(v), (), ()) for v in range(g.n)]
    for v, rec in ts.records.items():
        tables[v].flows[0] = rec
    token = ts.records[0].offset + 1
    header = Header([Top((), 0, DOWN, 0), FlowFrame(0, token)])
    port, _ = step(tables[0], header, random.Random(0))
    assert g.adj[0][port][0] == 1
    end, edges, _, _ = forward(tables, g, 0, Header([Top((), 0, DOWN, 0), FlowFrame(0, token)]),
                               random.Random(0), 100)
    assert end == 3 and edges == [0, 1, 2]


def test_malformed_headers_fault(f2_bundle):
    t = f2_bundle.tables[0]
    with pytest.raises(RoutingFault):
        step(t, Header([]), random.Random(0))
    with pytest.raises(RoutingFault):
        step(t, Header([Stage(False, 0)]), random.Random(0))
    with pytest.raises(RoutingFault):
        step(t, Header([Top((0,), 0, DOWN, 0), object()]), random.Random(0))
    with pytest.raises(RoutingFault):
        # a depth the node does not belong to
        step(t, Header([Top((0,), 0, DOWN, 0), Stage(True, 50)]), random.Random(0))


class TamperTables:
    """Only hands out the table of the node the packet currently sits at."""

    def __init__(self, tables, graph):
        self.tables, self.graph = tables, graph
        self.at = None

    def __getitem__(self, x):
        if self.at is not None and x != self.at:
            raise AssertionError(f"read table {x} while at {self.at}")
        return self.tables[x]


def test_step_reads_only_local_state(f3_bundle):
    b = f3_bundle
    for trial in range(50):
        rng = packet_rng(1, (A, B), trial)
        header = initial_header(b.tables[A], b.labels[B])
        x = A
        while True:
            snapshot = copy.deepcopy(header)
            state = rng.getstate()
            port, header = step(b.tables[x], header, rng)
            # same table, header and random stream give the same decision
            replay = random.Random()
            replay.setstate(state)
            port2, _ = step(copy.deepcopy(b.tables[x]), snapshot, replay)
            assert port == port2
            if port is None:
                break
            x = b.graph.adj[x][port][0]
        assert x == B
    guard = TamperTables(b.tables, b.graph)
    guard.at = A
    with pytest.raises(AssertionError):
        forward(guard, b.graph, B, initial_header(b.tables[B], b.labels[A]), random.Random(0), b.step_bound)


def test_route_same_node_is_empty(f2_bundle):
    r = route(f2_bundle, 2, 2)
    assert r.end == 2 and r.edges == []


def test_route_single_edge(f1_bundle):
    r = route(f1_bundle, 0, 1)
    assert r.end == 1 and r.edges == [0]


def test_bottleneck_paths_cross_both_cuts(f3_bundle):
    g = f3_bundle.graph
    heavy = g.edge_index(A, C)
    for t in range(300):
        r = route(f3_bundle, A, B, seed=3, trial=t)
        assert r.end == B
        assert r.edges.count(heavy) >= 1
        # at least one unit 2-path c - m - b is used to reach b
        assert any(g.edges[e].capacity == 1 and B in (g.edges[e].u, g.edges[e].v) for e in r.edges)


def test_path_graph_delivery(f2_bundle):
    for t in range(1000):
        r = route(f2_bundle, 0, 3, trial=t)
        assert r.end == 3 and r.max_header_bits <= f2_bundle.header_budget


def test_route_is_replayable(f3_bundle):
    a = route(f3_bundle, 2, 5, seed=9, trial=4)
    b = route(f3_bundle, 2, 5, seed=9, trial=4)
    assert a.edges == b.edges


def test_route_label_validation(f2_bundle):
    lab = f2_bundle.labels[3]
    assert route_label(f2_bundle, 0, lab).end == 3
    with pytest.raises(SchemeError):
        route_label(f2_bundle, 0, (7,))
    with pytest.raises(SchemeError):
        route_label(f2_bundle, 0, lab[:-1])
    with pytest.raises(SchemeError):
        route(f2_bundle, 0, 9)


@pytest.mark.parametrize("name", ["f2_bundle", "f3_bundle", "f5_bundle"])
def test_auxiliary_arcs_deliver(name, request):
    b = request.getfixturevalue(name)
    checked = 0
    for cid, un in sorted(b.unmixing.items()):
        for arc in un.arc_list:
            for t in range(1000 if checked < 40 else 50):
                r = route_arc(b, cid, arc, seed=0, trial=t)
                assert r.end == arc[1]
            checked += 1
    assert checked > 0


def test_bundle_roundtrip(tmp_path, f3_bundle):
    p = tmp_path / "b.bin"
    save_bundle(f3_bundle, p)
    back = load_bundle(p)
    assert back.labels == f3_bundle.labels and back.bits == f3_bundle.bits
    assert route(back, A, B, trial=2).edges == route(f3_bundle, A, B, trial=2).edges
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope" + p.read_bytes())
    with pytest.raises(BundleFormatError):
        load_bundle(bad)


def test_rejects_tiny_or_disconnected():
    from compactroute.graph import DisconnectedGraphError, Graph
    with pytest.raises(SchemeError):
        build_scheme(Graph(1, []))
    with pytest.raises(DisconnectedGraphError):
        build_scheme(Graph(4, [(0, 1, 1), (2, 3, 1)]))


def test_bits_account_for_labels(f5_bundle):
    b = f5_bundle
    for v, bits in enumerate(b.bits):
        assert bits > label_bits(b.tree, v)
    assert b.report["header_budget"] == b.header_budget
    assert all(math.isfinite(x) for x in b.bits)
