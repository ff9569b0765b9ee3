"""Single-commodity flows and the deterministic schemes built from them.

``min_congestion_flow`` solves the single-commodity problem exactly by
iterating on cut ratios.  ``integralize_acyclic`` turns a fractional flow
between integral distributions into an integral acyclic one, and
``build_flow_ts`` pushes numbered tokens through it in topological order,
recording for each used out-edge the interval of token ids it carries.  At run
time a node only has to find the interval containing the packet's token.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .bits import width
from .graph import Distribution, Flow, Graph, topological_order
from .maxflow import max_flow

logger = logging.getLogger(__name__)

Ranges = list[tuple[int, int]]


class FlowError(ValueError):
    pass


def _as_fraction_map(mu: Mapping[int, object]) -> dict[int, Fraction]:
    return {int(v): Fraction(x) for v, x in mu.items() if Fraction(x) != 0}


def _cluster_edges(graph: Graph, nodes: Iterable[int] | None) -> list[int]:
    if nodes is None:
        return list(range(graph.m))
    return graph.induced_edges(nodes)


def min_congestion_flow(graph: Graph, mu_in: Mapping[int, object], mu_out: Mapping[int, object],
                        nodes: Iterable[int] | None = None) -> Flow:
    """Exact minimum-congestion flow with ``bal = mu_out - mu_in`` inside ``nodes``.

    The optimum equals the largest ratio D(X)/w(delta X) over cuts X, where D(X)
    is the net supply of X.  Starting from singleton cuts, each infeasible
    max-flow check exposes a cut with a strictly larger ratio.
    """
    pool = set(range(graph.n)) if nodes is None else set(nodes)
    a, b = _as_fraction_map(mu_in), _as_fraction_map(mu_out)
    if sum(a.values(), Fraction(0)) != sum(b.values(), Fraction(0)):
        raise FlowError("input and output totals differ")
    if any(v not in pool for v in list(a) + list(b)):
        raise FlowError("distribution supported outside the cluster")
    excess = {v: a.get(v, 0) - b.get(v, 0) for v in set(a) | set(b)}
    excess = {v: x for v, x in excess.items() if x}
    if not excess:
        return Flow(graph)
    edges = _cluster_edges(graph, pool)
    scale = math.lcm(*(x.denominator for x in excess.values()))
    B = {v: int(x * scale) for v, x in excess.items()}
    supply = sum(x for x in B.values() if x > 0)
    deg_cap: dict[int, int] = {}
    for e in edges:
        ed = graph.edges[e]
        deg_cap[ed.u] = deg_cap.get(ed.u, 0) + ed.capacity
        deg_cap[ed.v] = deg_cap.get(ed.v, 0) + ed.capacity
    theta = Fraction(0)
    for v, x in B.items():
        if deg_cap.get(v, 0) == 0:
            raise FlowError(f"node {v} carries excess but has no edge in the cluster")
        theta = max(theta, Fraction(abs(x), deg_cap[v]))
    n = graph.n
    s, t = n, n + 1
    for _ in range(10_000):
        p, q = theta.numerator, theta.denominator
        arcs = []
        for e in edges:
            ed = graph.edges[e]
            arcs.append((ed.u, ed.v, p * ed.capacity))
            arcs.append((ed.v, ed.u, p * ed.capacity))
        for v, x in B.items():
            if x > 0:
                arcs.append((s, v, x * q))
            else:
                arcs.append((v, t, -x * q))
        res = max_flow(n + 2, arcs, s, t)
        if res.value == supply * q:
            f = Flow(graph)
            for (u, v), x in res.flow.items():
                if u < n and v < n:
                    f.add(u, v, Fraction(x, q * scale))
            return f
        side = res.source_side - {s}
        if not side or side >= pool:
            raise FlowError("infeasible: cluster is disconnected for these distributions")
        d = sum(B.get(v, 0) for v in side)
        cut = sum(graph.edges[e].capacity for e in edges
                  if (graph.edges[e].u in side) != (graph.edges[e].v in side))
        if cut == 0:
            raise FlowError("infeasible: cluster is disconnected for these distributions")
        new = Fraction(d, cut)
        if new <= theta:
            raise FlowError("cut iteration failed to make progress")
        theta = new
    raise FlowError("cut iteration did not converge")


@dataclass
class IntegralAcyclicFlow:
    flow: Flow
    order: list[int]

    def arcs(self) -> dict[tuple[int, int], int]:
        return {k: int(x) for k, x in self.flow.positive_arcs().items()}


def _cancel_cycles(arcs: dict[tuple[int, int], int]) -> dict[tuple[int, int], int]:
    arcs = {k: x for k, x in arcs.items() if x > 0}
    while True:
        succ: dict[int, list[int]] = {}
        for u, v in arcs:
            succ.setdefault(u, []).append(v)
        cycle = _find_cycle(succ)
        if cycle is None:
            return arcs
        pairs = list(zip(cycle, cycle[1:] + cycle[:1]))
        m = min(arcs[p] for p in pairs)
        for p in pairs:
            arcs[p] -= m
            if arcs[p] == 0:
                del arcs[p]


def _find_cycle(succ: dict[int, list[int]]) -> list[int] | None:
    state: dict[int, int] = {}
    for root in list(succ):
        if state.get(root):
            continue
        stack = [(root, iter(succ.get(root, ())))]
        path = [root]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                path.pop()
                continue
            st = state.get(nxt, 0)
            if st == 1:
                return path[path.index(nxt):]
            if st == 0:
                state[nxt] = 1
                stack.append((nxt, iter(succ.get(nxt, ()))))
                path.append(nxt)
    return None


def integralize_acyclic(f: Flow, mu: Mapping[int, object], mu_out: Mapping[int, object]) -> IntegralAcyclicFlow:
    """Integral acyclic flow with the same balances and congestion <= ceil(cong f).

    The max-flow network keeps only the edges that ``f`` uses, scaled by
    F = ceil(cong f), so the result stays inside the cluster ``f`` lives in.
    """
    g = f.graph
    mu_i, mo_i = {}, {}
    for src, dst in ((mu, mu_i), (mu_out, mo_i)):
        for v, x in src.items():
            x = Fraction(x)
            if x.denominator != 1:
                raise FlowError("distributions must be integral")
            if x:
                dst[int(v)] = int(x)
    bal = f.balances()
    for v in range(g.n):
        if bal[v] != mo_i.get(v, 0) - mu_i.get(v, 0):
            raise FlowError(f"flow balance at {v} does not match mu_out - mu")
    F = max(1, math.ceil(f.congestion()))
    n = g.n
    s, t = n, n + 1
    arcs = []
    for e in f.support():
        ed = g.edges[e]
        arcs.append((ed.u, ed.v, F * ed.capacity))
        arcs.append((ed.v, ed.u, F * ed.capacity))
    for v, x in mu_i.items():
        arcs.append((s, v, x))
    for v, x in mo_i.items():
        arcs.append((v, t, x))
    res = max_flow(n + 2, arcs, s, t)
    total = sum(mu_i.values())
    if res.value != total:
        raise FlowError(f"integral flow value {res.value} != {total}")
    inner = {(u, v): x for (u, v), x in res.flow.items() if u < n and v < n}
    inner = _cancel_cycles(inner)
    out = Flow(g)
    succ: dict[int, list[int]] = {}
    for (u, v), x in inner.items():
        out.add(u, v, x)
        succ.setdefault(u, []).append(v)
    order = topological_order(n, succ)
    assert order is not None
    return IntegralAcyclicFlow(out, order)


def negate(iflow: IntegralAcyclicFlow) -> IntegralAcyclicFlow:
    return IntegralAcyclicFlow(-iflow.flow, list(reversed(iflow.order)))


@dataclass(frozen=True)
class FlowRecord:
    """Per-node table of a deterministic flow scheme."""

    offset: int
    count: int
    intervals: tuple[tuple[int, int, int], ...]  # (port, lo, hi), consulted in order

    def next_port(self, token: int) -> int | None:
        for port, lo, hi in self.intervals:
            if lo <= token <= hi:
                return port
        return None

    def bits(self, token_bits: int, port_bits: int) -> int:
        return 2 * token_bits + len(self.intervals) * (port_bits + 2 * token_bits)


def _take(ranges: Ranges, k: int) -> tuple[Ranges, Ranges]:
    """Split sorted disjoint ranges into the first ``k`` ids and the rest."""
    head: Ranges = []
    rest = list(ranges)
    while k > 0:
        lo, hi = rest.pop(0)
        size = hi - lo + 1
        if size <= k:
            head.append((lo, hi))
            k -= size
        else:
            head.append((lo, lo + k - 1))
            rest.insert(0, (lo + k, hi))
            k = 0
    return head, rest


def _normalize(ranges: Ranges) -> Ranges:
    out: Ranges = []
    for lo, hi in sorted(ranges):
        if out and lo <= out[-1][1] + 1:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def _count(ranges: Ranges) -> int:
    return sum(hi - lo + 1 for lo, hi in ranges)


@dataclass
class DeterministicTS:
    """Deterministic scheme from an integral acyclic flow.

    Path id ``p`` at node ``v`` (1 <= p <= N_v) is token ``offset(v) + p``.
    """

    graph: Graph
    records: dict[int, FlowRecord]
    mu: dict[int, int]
    mu_out: dict[int, int]
    iflow: IntegralAcyclicFlow
    total: int
    arrivals: dict[int, Ranges] = field(default_factory=dict)
    congestion: Fraction = Fraction(0)  # per unit of routed demand, see route_similar

    def count(self, v: int) -> int:
        r = self.records.get(v)
        return r.count if r else 0

    def token(self, v: int, pid: int) -> int:
        rec = self.records[v]
        if not 1 <= pid <= rec.count:
            raise ValueError(f"path id {pid} invalid at node {v}")
        return rec.offset + pid

    def run(self, v: int, pid: int) -> tuple[int, list[int]]:
        """Replay one path id from the tables; returns (end node, edge indices)."""
        tok = self.token(v, pid)
        return self.run_token(v, tok)

    def run_token(self, v: int, tok: int) -> tuple[int, list[int]]:
        edges = []
        u = v
        for _ in range(self.graph.n + 1):
            rec = self.records.get(u)
            port = rec.next_port(tok) if rec else None
            if port is None:
                return u, edges
            nxt, e = self.graph.adj[u][port]
            edges.append(e)
            u = nxt
        raise FlowError("token revisited a node; flow is not acyclic")

    def trace(self, v: int, pids: tuple[int, int] | None = None) -> tuple[dict[int, int], dict[int, int]]:
        """All path ids of ``v`` at once: (end node -> count, edge -> traversals).

        ``pids`` restricts the run to the path ids ``lo..hi``.
        """
        ends: dict[int, int] = {}
        loads: dict[int, int] = {}
        for u, ranges, l in self._propagate(v, pids):
            if ranges is not None:
                ends[u] = ends.get(u, 0) + _count(ranges)
            else:
                for e, x in l.items():
                    loads[e] = loads.get(e, 0) + x
        return ends, loads

    def end_ranges(self, v: int) -> list[tuple[int, int, int]]:
        """(first token, last token, end node) triples covering all tokens of ``v``."""
        out = []
        for u, ranges, _ in self._propagate(v, None):
            if ranges is not None:
                out.extend((a, b, u) for a, b in ranges)
        return sorted(out)

    def _propagate(self, v: int, pids):
        rec = self.records.get(v)
        if not rec or rec.count == 0:
            return
        lo, hi = pids if pids is not None else (1, rec.count)
        if lo > hi:
            return
        frontier = {v: [(rec.offset + lo, rec.offset + hi)]}
        while frontier:
            nxt: dict[int, Ranges] = {}
            for u, ranges in frontier.items():
                r = self.records.get(u)
                left = ranges
                for port, lo, hi in (r.intervals if r else ()):
                    moved, keep = [], []
                    for a, b in left:
                        x, y = max(a, lo), min(b, hi)
                        if x <= y:
                            moved.append((x, y))
                            if a < x:
                                keep.append((a, x - 1))
                            if y < b:
                                keep.append((y + 1, b))
                        else:
                            keep.append((a, b))
                    left = keep
                    if moved:
                        w, e = self.graph.adj[u][port]
                        yield u, None, {e: _count(moved)}
                        nxt.setdefault(w, []).extend(moved)
                if left:
                    yield u, left, None
            frontier = nxt

    def bits(self, v: int, token_bits: int | None = None) -> int:
        rec = self.records.get(v)
        if rec is None:
            return 0
        tb = token_bits or width(self.total)
        return rec.bits(tb, width(max(self.graph.degree(v) - 1, 0)))


def build_flow_ts(iflow: IntegralAcyclicFlow, mu: Mapping[int, object], mu_out: Mapping[int, object]) -> DeterministicTS:
    """Token pushing in topological order; records the interval used per out-edge."""
    g = iflow.flow.graph
    mu_i = {int(v): int(x) for v, x in mu.items() if x}
    mo_i = {int(v): int(x) for v, x in mu_out.items() if x}
    offsets = {}
    acc = 0
    tokens: dict[int, Ranges] = {}
    for v in range(g.n):
        offsets[v] = acc
        k = mu_i.get(v, 0)
        if k:
            tokens[v] = [(acc + 1, acc + k)]
        acc += k
    arcs = iflow.arcs()
    intervals: dict[int, list[tuple[int, int, int]]] = {}
    arrivals: dict[int, Ranges] = {}
    for u in iflow.order:
        ranges = _normalize(tokens.pop(u, []))
        for port, (nbr, _) in enumerate(g.adj[u]):
            x = arcs.get((u, nbr), 0)
            if x <= 0:
                continue
            sent, ranges = _take(ranges, x)
            intervals.setdefault(u, []).append((port, sent[0][0], sent[-1][1]))
            tokens.setdefault(nbr, []).extend(sent)
        if _count(ranges) != mo_i.get(u, 0):
            raise FlowError(f"token count at {u} does not match mu_out")
        if ranges:
            arrivals[u] = ranges
    records = {}
    for v in set(mu_i) | set(intervals):
        records[v] = FlowRecord(offsets[v], mu_i.get(v, 0), tuple(intervals.get(v, ())))
    return DeterministicTS(g, records, mu_i, mo_i, iflow, acc, arrivals)


def reverse_ts(ts: DeterministicTS) -> DeterministicTS:
    """Scheme for the reversed flow, routing mu_out back to mu."""
    return build_flow_ts(negate(ts.iflow), ts.mu_out, ts.mu)


def flow_ts(graph: Graph, mu: Mapping[int, object], mu_out: Mapping[int, object],
            nodes: Iterable[int] | None = None) -> DeterministicTS:
    f = min_congestion_flow(graph, mu, mu_out, nodes)
    ts = build_flow_ts(integralize_acyclic(f, mu, mu_out), mu, mu_out)
    ts.congestion = f.congestion()
    return ts


def reduce_pair(mu_in: Mapping[int, object], mu_out: Mapping[int, object]) -> tuple[dict[int, int], dict[int, int]]:
    """Smallest integral rescaling of both distributions to a common total."""
    a = {int(v): Fraction(x) for v, x in mu_in.items() if x}
    b = {int(v): Fraction(x) for v, x in mu_out.items() if x}
    ta, tb = sum(a.values(), Fraction(0)), sum(b.values(), Fraction(0))
    if ta == 0 or tb == 0:
        raise FlowError("cannot route an empty distribution")
    # x * tb and y * ta have equal totals; clear denominators then common factors
    a2 = {v: x * tb for v, x in a.items()}
    b2 = {v: y * ta for v, y in b.items()}
    den = math.lcm(*(x.denominator for x in list(a2.values()) + list(b2.values())))
    ai = {v: int(x * den) for v, x in a2.items()}
    bi = {v: int(y * den) for v, y in b2.items()}
    g = math.gcd(*ai.values(), *bi.values())
    return {v: x // g for v, x in ai.items()}, {v: y // g for v, y in bi.items()}


def route_similar(graph: Graph, mu_in: Mapping[int, object], mu_out: Mapping[int, object],
                  nodes: Iterable[int] | None = None, c: Mapping[int, object] | None = None,
                  C: float | None = None) -> DeterministicTS:
    """Deterministic scheme routing ``mu_in`` to ``mu_out`` (totals may differ).

    Both distributions are rescaled to the smallest integral vectors with a
    common total T.  ``ts.congestion`` reports the congestion for demand
    M = min(mu_in(V), mu_out(V)), i.e. the flow congestion times M/T.
    """
    if c is not None:
        for mu in (mu_in, mu_out):
            for v, x in mu.items():
                if Fraction(x) > Fraction(c.get(v, 0)):
                    raise FlowError(f"distribution exceeds the weight function at node {v}")
    a, b = reduce_pair(mu_in, mu_out)
    f = min_congestion_flow(graph, a, b, nodes)
    ts = build_flow_ts(integralize_acyclic(f, a, b), a, b)
    T = sum(a.values())
    M = min(sum(Fraction(x) for x in mu_in.values()), sum(Fraction(x) for x in mu_out.values()))
    ts.congestion = f.congestion() * M / T
    if C is not None and ts.congestion > 2 * Fraction(C) * (1 + Fraction(1, 10**6)):
        raise FlowError(f"routing congestion {float(ts.congestion):.4g} exceeds 2C = {2 * C:.4g}")
    return ts


def enumerate_ts(ts: DeterministicTS) -> tuple[dict[int, int], dict[int, int]]:
    """Run every path id from every node; returns (arrivals, edge loads)."""
    ends: dict[int, int] = {}
    loads: dict[int, int] = {}
    for v in ts.mu:
        e, l = ts.trace(v)
        for k, x in e.items():
            ends[k] = ends.get(k, 0) + x
        for k, x in l.items():
            loads[k] = loads.get(k, 0) + x
    return ends, loads


__all__ = [
    "Distribution", "DeterministicTS", "FlowError", "FlowRecord", "IntegralAcyclicFlow",
    "build_flow_ts", "enumerate_ts", "flow_ts", "integralize_acyclic", "min_congestion_flow",
    "negate", "reduce_pair", "reverse_ts", "route_similar",
]
