"""Integer max-flow on a node-indexed arc list.

Thin wrapper over scipy's Dinic implementation.  scipy stores capacities as
32-bit integers and silently truncates larger values, so instances that do not
fit fall back to networkx, which works with Python integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import maximum_flow

INT32_MAX = 2**31 - 1


@dataclass
class MaxFlowResult:
    value: int
    flow: dict[tuple[int, int], int]  # net flow on each arc that carries some
    source_side: set[int]             # nodes reachable from s in the residual graph


def max_flow(n: int, arcs: list[tuple[int, int, int]], s: int, t: int) -> MaxFlowResult:
    """Maximum s-t flow; ``arcs`` are directed ``(u, v, capacity)`` triples."""
    cap: dict[tuple[int, int], int] = {}
    for u, v, c in arcs:
        if c < 0:
            raise ValueError("negative capacity")
        if c and u != v:
            cap[(u, v)] = cap.get((u, v), 0) + int(c)
    if cap and max(cap.values()) > INT32_MAX:
        return _max_flow_nx(n, cap, s, t)
    if not cap:
        return MaxFlowResult(0, {}, {s})
    rows = np.fromiter((u for u, _ in cap), dtype=np.int64, count=len(cap))
    cols = np.fromiter((v for _, v in cap), dtype=np.int64, count=len(cap))
    vals = np.fromiter(cap.values(), dtype=np.int32, count=len(cap))
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    res = maximum_flow(mat, s, t, method="dinic")
    coo = res.flow.tocoo()
    net: dict[tuple[int, int], int] = {}
    for u, v, x in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
        if x > 0:
            net[(u, v)] = int(x)
    return MaxFlowResult(int(res.flow_value), net, _reachable(n, cap, net, s))


def _reachable(n, cap, net, s) -> set[int]:
    succ: dict[int, list[int]] = {}
    for (u, v), c in cap.items():
        succ.setdefault(u, []).append(v)
        succ.setdefault(v, []).append(u)
    seen = {s}
    stack = [s]
    while stack:
        u = stack.pop()
        for v in succ.get(u, ()):
            if v in seen:
                continue
            residual = cap.get((u, v), 0) - net.get((u, v), 0) + net.get((v, u), 0)
            if residual > 0:
                seen.add(v)
                stack.append(v)
    return seen


def _max_flow_nx(n, cap, s, t) -> MaxFlowResult:
    import networkx as nx

    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    for (u, v), c in cap.items():
        g.add_edge(u, v, capacity=c)
    value, fd = nx.maximum_flow(g, s, t)
    net: dict[tuple[int, int], int] = {}
    for u, out in fd.items():
        for v, x in out.items():
            y = x - fd.get(v, {}).get(u, 0)
            if y > 0:
                net[(u, v)] = int(y)
    return MaxFlowResult(int(value), net, _reachable(n, cap, net, s))
