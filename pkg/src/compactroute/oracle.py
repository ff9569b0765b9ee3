"""Optimal concurrent multicommodity flow congestion with a dual certificate.

Small instances are solved as an edge-formulation LP (commodities aggregated
by source).  Larger ones use a multiplicative-weights max-concurrent-flow
scheme.  Either way the lower bound is recomputed independently of the solver:
for any nonnegative edge lengths y, sum_d d(s,t) dist_y(s,t) / sum_e y_e w_e is
at most the optimal congestion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog
from scipy.sparse.csgraph import dijkstra

from .graph import DemandMatrix, Graph

logger = logging.getLogger(__name__)


class OracleError(ValueError):
    pass


@dataclass
class CongestionCertificate:
    primal: float
    dual: float
    per_edge_loads: list[float] = field(default_factory=list)
    method: str = "lp"

    @property
    def gap(self) -> float:
        if self.primal == 0:
            return 1.0
        return float(self.primal / self.dual) if self.dual > 0 else math.inf

    def scaled(self, gamma: float) -> "CongestionCertificate":
        return CongestionCertificate(self.primal * gamma, self.dual * gamma,
                                     [x * gamma for x in self.per_edge_loads], self.method)

    def to_json(self) -> dict:
        return {"primal": self.primal, "dual": self.dual, "gap": self.gap,
                "per_edge_loads": list(self.per_edge_loads)}


def _by_source(d: Mapping[tuple[int, int], object]) -> dict[int, dict[int, float]]:
    out: dict[int, dict[int, float]] = {}
    for (s, t), x in d.items():
        x = float(x)
        if x > 0 and s != t:
            out.setdefault(s, {})
            out[s][t] = out[s].get(t, 0.0) + x
    return out


def _csr(graph: Graph, lengths: np.ndarray):
    rows, cols, vals = [], [], []
    for i, e in enumerate(graph.edges):
        rows += [e.u, e.v]
        cols += [e.v, e.u]
        vals += [lengths[i], lengths[i]]
    return sp.csr_matrix((vals, (rows, cols)), shape=(graph.n, graph.n))


def dual_bound(graph: Graph, demands: Mapping[tuple[int, int], object], y: np.ndarray) -> float:
    """Lower bound on optimal congestion from edge lengths ``y >= 0``."""
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    vol = float(sum(y[i] * e.capacity for i, e in enumerate(graph.edges)))
    if vol <= 0:
        return 0.0
    by_src = _by_source(demands)
    if not by_src:
        return 0.0
    # tiny floor keeps zero-length edges in the sparse structure
    dist = dijkstra(_csr(graph, np.maximum(y, 1e-300)), indices=sorted(by_src))
    total = 0.0
    for row, s in enumerate(sorted(by_src)):
        for t, x in by_src[s].items():
            total += x * float(dist[row, t])
    return total / vol


def _check_connected(graph: Graph, by_src: dict[int, dict[int, float]]) -> None:
    comp = {}
    for k, c in enumerate(graph.components()):
        for v in c:
            comp[v] = k
    for s, ts in by_src.items():
        for t in ts:
            if comp[s] != comp[t]:
                raise OracleError(f"demand between disconnected nodes {s} and {t}")


def _lp(graph: Graph, by_src: dict[int, dict[int, float]]) -> CongestionCertificate:
    m, n = graph.m, graph.n
    sources = sorted(by_src)
    k = len(sources)
    narc = 2 * m
    nvar = k * narc + 1
    theta = nvar - 1
    # arc 2i: u->v, arc 2i+1: v->u
    eq_rows, eq_cols, eq_vals, b_eq = [], [], [], []
    row = 0
    for j, s in enumerate(sources):
        base = j * narc
        demand = by_src[s]
        rhs = np.zeros(n)
        for t, x in demand.items():
            rhs[t] += x
            rhs[s] -= x
        for i, e in enumerate(graph.edges):
            # inflow - outflow = rhs
            for arc, head, tail in ((2 * i, e.v, e.u), (2 * i + 1, e.u, e.v)):
                eq_rows += [row + head, row + tail]
                eq_cols += [base + arc, base + arc]
                eq_vals += [1.0, -1.0]
        b_eq.extend(rhs.tolist())
        row += n
    A_eq = sp.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(row, nvar))
    ub_rows, ub_cols, ub_vals = [], [], []
    for i, e in enumerate(graph.edges):
        for j in range(k):
            ub_rows += [i, i]
            ub_cols += [j * narc + 2 * i, j * narc + 2 * i + 1]
            ub_vals += [1.0, 1.0]
        ub_rows.append(i)
        ub_cols.append(theta)
        ub_vals.append(-float(e.capacity))
    A_ub = sp.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(m, nvar))
    cost = np.zeros(nvar)
    cost[theta] = 1.0
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(m), A_eq=A_eq, b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        raise OracleError(f"LP solver failed: {res.message}")
    x = res.x
    loads = []
    for i, e in enumerate(graph.edges):
        load = 0.0
        for j in range(k):
            a, b = x[j * narc + 2 * i], x[j * narc + 2 * i + 1]
            load += abs(float(a) - float(b))
        loads.append(load)
    primal = float(max((l / e.capacity for l, e in zip(loads, graph.edges)), default=0.0))
    y = -np.asarray(res.ineqlin.marginals, dtype=float)
    demands = {(s, t): x for s, ts in by_src.items() for t, x in ts.items()}
    dual = dual_bound(graph, demands, y)
    # the LP optimum itself is valid to solver precision; never report dual > primal
    dual = min(dual, primal)
    return CongestionCertificate(primal, dual, loads, "lp")


def _mwu(graph: Graph, by_src: dict[int, dict[int, float]], eps: float,
         max_phases: int = 20000) -> CongestionCertificate:
    """Garg-Koenemann style max concurrent flow with running dual bound."""
    m = graph.m
    caps = np.array([e.capacity for e in graph.edges], dtype=float)
    demands = {(s, t): x for s, ts in by_src.items() for t, x in ts.items()}
    step = eps / 3
    delta = (m / (1 - step)) ** (-1 / step)
    length = delta / caps
    flow = np.zeros(m)
    phases = 0
    best_dual = 0.0
    eidx = {}
    for i, e in enumerate(graph.edges):
        eidx[(e.u, e.v)] = i
        eidx[(e.v, e.u)] = i
    sources = sorted(by_src)
    primal = math.inf
    while phases < max_phases:
        for s in sources:
            remaining = dict(by_src[s])
            while remaining:
                dist, pred = dijkstra(_csr(graph, length), indices=s, return_predecessors=True)
                paths = {}
                for t in remaining:
                    p = []
                    v = t
                    while v != s:
                        u = int(pred[v])
                        p.append(eidx[(u, v)])
                        v = u
                    paths[t] = p
                # route along a shortest-path tree, limited by the tightest capacity
                use = np.zeros(m)
                for t, p in paths.items():
                    for i in p:
                        use[i] += remaining[t]
                scale = min(1.0, float(np.min(np.where(use > 0, caps / np.maximum(use, 1e-300), np.inf))))
                for t in list(remaining):
                    amt = remaining[t] * scale
                    for i in paths[t]:
                        flow[i] += amt
                        length[i] *= 1 + step * amt / caps[i]
                    remaining[t] -= amt
                    if remaining[t] <= 1e-12 * by_src[s][t]:
                        del remaining[t]
        phases += 1
        primal = float(np.max(flow / caps)) / phases
        best_dual = max(best_dual, dual_bound(graph, demands, length))
        if best_dual > 0 and primal / best_dual <= 1 + eps:
            break
    loads = (flow / phases).tolist()
    return CongestionCertificate(primal, min(best_dual, primal), loads, "mwu")


def opt_congestion(graph: Graph, demands: Mapping[tuple[int, int], object], eps: float = 0.05,
                   lp_threshold: int = 200_000) -> CongestionCertificate:
    """Optimal congestion for ``demands``; LP when n*|pairs| <= lp_threshold."""
    by_src = _by_source(demands)
    if not by_src:
        return CongestionCertificate(0.0, 0.0, [0.0] * graph.m, "trivial")
    _check_connected(graph, by_src)
    pairs = sum(len(v) for v in by_src.values())
    if graph.n * pairs <= lp_threshold:
        return _lp(graph, by_src)
    return _mwu(graph, by_src, eps)


def subgraph(graph: Graph, nodes: Iterable[int]) -> tuple[Graph, list[int], list[int]]:
    """Induced subgraph with nodes relabeled 0..k-1; returns (G[S], node map, edge map)."""
    nodes = sorted(nodes)
    idx = {v: i for i, v in enumerate(nodes)}
    emap = graph.induced_edges(nodes)
    sub = Graph(len(nodes), [(idx[graph.edges[e].u], idx[graph.edges[e].v], graph.edges[e].capacity)
                             for e in emap])
    return sub, nodes, emap


def product_demands(c: Mapping[int, object]) -> DemandMatrix:
    total = sum(Fraction(x) for x in c.values())
    if total == 0:
        return DemandMatrix()
    return DemandMatrix({(u, v): Fraction(cu) * Fraction(cv) / total
                         for u, cu in c.items() for v, cv in c.items() if u != v})


def pmcf_congestion(graph: Graph, nodes: Iterable[int], c: Mapping[int, object], eps: float = 0.05,
                    lp_threshold: int = 200_000) -> CongestionCertificate:
    """Congestion of the product multicommodity flow c(u)c(v)/c(S) inside G[S]."""
    nodes = sorted(nodes)
    if len(nodes) <= 1 or sum(Fraction(x) for x in c.values()) == 0:
        return CongestionCertificate(0.0, 0.0, [0.0] * graph.m, "trivial")
    sub, order, emap = subgraph(graph, nodes)
    idx = {v: i for i, v in enumerate(order)}
    d = product_demands({idx[v]: x for v, x in c.items() if v in idx and x})
    cert = opt_congestion(sub, d, eps, lp_threshold)
    loads = [0.0] * graph.m
    for i, e in enumerate(emap):
        loads[e] = cert.per_edge_loads[i]
    return CongestionCertificate(cert.primal, cert.dual, loads, cert.method)
