"""Graphs, flows, distributions and demands.

Capacities are powers of two; an edge of capacity ``2**l`` belongs to class
``l``.  Flows are stored as one signed rational per undirected edge, oriented
from the lower to the higher endpoint, which makes antisymmetry structural.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

Number = int | Fraction


class GraphFormatError(ValueError):
    """Input file could not be parsed; carries file/line context."""

    def __init__(self, source: str, lineno: int, message: str):
        super().__init__(f"{source}:{lineno}: {message}")
        self.source = source
        self.lineno = lineno


class DisconnectedGraphError(ValueError):
    pass


def is_power_of_two(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def edge_class(capacity: int) -> int:
    """Class ``l`` of an edge with capacity ``2**l``."""
    if not isinstance(capacity, int) or not is_power_of_two(capacity):
        raise ValueError(f"capacity {capacity!r} is not a power of two >= 1")
    return capacity.bit_length() - 1


def round_down_pow2(x: float) -> int:
    if x < 1:
        raise ValueError(f"capacity {x!r} is below 1")
    return 1 << (int(x).bit_length() - 1)


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    capacity: int

    @property
    def cls(self) -> int:
        return self.capacity.bit_length() - 1

    def other(self, x: int) -> int:
        return self.v if x == self.u else self.u


class Graph:
    """Simple undirected graph with power-of-two capacities.

    ``adj[v]`` lists ``(neighbor, edge_index)`` pairs; the position in that list
    is the port number used by routing tables.
    """

    def __init__(self, n: int, edges: Iterable[tuple[int, int, int]]):
        self.n = int(n)
        self.edges: list[Edge] = []
        self.adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n)]
        self._index: dict[tuple[int, int], int] = {}
        for u, v, cap in edges:
            self._add(int(u), int(v), int(cap))
        self.W = max((e.capacity for e in self.edges), default=1)
        self.n_class = 1 + edge_class(self.W)

    def _add(self, u: int, v: int, cap: int) -> None:
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise ValueError(f"edge ({u},{v}) has an endpoint outside 0..{self.n - 1}")
        if u == v:
            raise ValueError(f"self-loop at {u}")
        a, b = min(u, v), max(u, v)
        if (a, b) in self._index:
            raise ValueError(f"parallel edge ({a},{b})")
        edge_class(cap)
        idx = len(self.edges)
        self.edges.append(Edge(a, b, cap))
        self._index[(a, b)] = idx
        self.adj[a].append((b, idx))
        self.adj[b].append((a, idx))

    @property
    def m(self) -> int:
        return len(self.edges)

    def edge_index(self, u: int, v: int) -> int:
        return self._index[(min(u, v), max(u, v))]

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self._index

    def capacity(self, u: int, v: int) -> int:
        return self.edges[self.edge_index(u, v)].capacity

    def degree(self, v: int) -> int:
        return len(self.adj[v])

    def port(self, v: int, neighbor: int) -> int:
        for p, (x, _) in enumerate(self.adj[v]):
            if x == neighbor:
                return p
        raise KeyError(f"{neighbor} is not adjacent to {v}")

    def neighbors(self, v: int) -> list[int]:
        return [x for x, _ in self.adj[v]]

    def components(self, nodes: Iterable[int] | None = None) -> list[list[int]]:
        """Connected components of the subgraph induced by ``nodes``."""
        pool = set(range(self.n) if nodes is None else nodes)
        seen: set[int] = set()
        comps = []
        for s in sorted(pool):
            if s in seen:
                continue
            comp = [s]
            seen.add(s)
            queue = deque([s])
            while queue:
                x = queue.popleft()
                for y, _ in self.adj[x]:
                    if y in pool and y not in seen:
                        seen.add(y)
                        comp.append(y)
                        queue.append(y)
            comps.append(sorted(comp))
        return comps

    def is_connected(self, nodes: Iterable[int] | None = None) -> bool:
        return len(self.components(nodes)) <= 1

    def require_connected(self) -> None:
        if not self.is_connected():
            raise DisconnectedGraphError("graph not connected")

    def induced_edges(self, nodes: Iterable[int]) -> list[int]:
        s = set(nodes)
        return [i for i, e in enumerate(self.edges) if e.u in s and e.v in s]

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.m}, W={self.W})"


class Flow:
    """Single-commodity flow; ``value(u, v) == -value(v, u)`` by construction."""

    def __init__(self, graph: Graph, values: Mapping[int, Number] | None = None):
        self.graph = graph
        self._f: dict[int, Fraction] = {}
        for e, x in (values or {}).items():
            if x:
                self._f[e] = Fraction(x)

    @classmethod
    def from_oriented(cls, graph: Graph, oriented: Mapping[tuple[int, int], Number]) -> "Flow":
        f = cls(graph)
        for (u, v), x in oriented.items():
            f.add(u, v, x)
        return f

    def value(self, u: int, v: int) -> Fraction:
        e = self.graph.edge_index(u, v)
        x = self._f.get(e, Fraction(0))
        return x if u < v else -x

    def add(self, u: int, v: int, x: Number) -> None:
        e = self.graph.edge_index(u, v)
        y = self._f.get(e, Fraction(0)) + (Fraction(x) if u < v else -Fraction(x))
        if y:
            self._f[e] = y
        else:
            self._f.pop(e, None)

    def edge_values(self) -> dict[int, Fraction]:
        """Signed value per edge index, oriented ``edges[e].u -> edges[e].v``."""
        return dict(self._f)

    def oriented(self) -> dict[tuple[int, int], Fraction]:
        out = {}
        for e, x in self._f.items():
            ed = self.graph.edges[e]
            out[(ed.u, ed.v)] = x
            out[(ed.v, ed.u)] = -x
        return out

    def positive_arcs(self) -> dict[tuple[int, int], Fraction]:
        out = {}
        for e, x in self._f.items():
            ed = self.graph.edges[e]
            if x > 0:
                out[(ed.u, ed.v)] = x
            elif x < 0:
                out[(ed.v, ed.u)] = -x
        return out

    def balance(self, v: int) -> Fraction:
        return sum((self.value(u, v) for u, _ in self.graph.adj[v]), Fraction(0))

    def balances(self) -> list[Fraction]:
        bal = [Fraction(0)] * self.graph.n
        for e, x in self._f.items():
            ed = self.graph.edges[e]
            bal[ed.v] += x
            bal[ed.u] -= x
        return bal

    def congestion(self) -> Fraction:
        return total_congestion([self])

    def scaled(self, gamma: Number) -> "Flow":
        g = Fraction(gamma)
        return Flow(self.graph, {e: x * g for e, x in self._f.items()})

    def is_antisymmetric(self) -> bool:
        o = self.oriented()
        return all(o[(v, u)] == -x for (u, v), x in o.items())

    def is_integral(self) -> bool:
        return all(x.denominator == 1 for x in self._f.values())

    def is_acyclic(self) -> bool:
        arcs = self.positive_arcs()
        succ: dict[int, list[int]] = {}
        for u, v in arcs:
            succ.setdefault(u, []).append(v)
        return topological_order(self.graph.n, succ) is not None

    def support(self) -> set[int]:
        return set(self._f)

    def __add__(self, other: "Flow") -> "Flow":
        f = Flow(self.graph, self._f)
        for e, x in other._f.items():
            y = f._f.get(e, Fraction(0)) + x
            if y:
                f._f[e] = y
            else:
                f._f.pop(e, None)
        return f

    def __neg__(self) -> "Flow":
        return self.scaled(-1)


def topological_order(n: int, succ: Mapping[int, list[int]]) -> list[int] | None:
    """Kahn's algorithm; None when the arcs contain a cycle."""
    indeg = [0] * n
    for u, vs in succ.items():
        for v in vs:
            indeg[v] += 1
    queue = deque(v for v in range(n) if indeg[v] == 0)
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in succ.get(u, ()):
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
    return order if len(order) == n else None


def flow_balance(f: Flow, v: int) -> Fraction:
    return f.balance(v)


def total_congestion(flows: Iterable[Flow]) -> Fraction:
    """max over edges of the summed absolute flow divided by capacity."""
    flows = list(flows)
    if not flows:
        return Fraction(0)
    g = flows[0].graph
    load: dict[int, Fraction] = {}
    for f in flows:
        for e, x in f._f.items():
            load[e] = load.get(e, Fraction(0)) + abs(x)
    return max((x / g.edges[e].capacity for e, x in load.items()), default=Fraction(0))


class Distribution(dict):
    """Sparse non-negative node weights."""

    def __init__(self, weights: Mapping[int, Number] | None = None):
        super().__init__()
        for v, x in (weights or {}).items():
            x = Fraction(x)
            if x < 0:
                raise ValueError(f"negative weight {x} at node {v}")
            if x:
                self[int(v)] = x

    @classmethod
    def unit(cls, v: int) -> "Distribution":
        return cls({v: 1})

    @property
    def total(self) -> Fraction:
        return sum(self.values(), Fraction(0))

    def normalized(self) -> "Distribution":
        t = self.total
        if t == 0:
            return Distribution()
        return Distribution({v: x / t for v, x in self.items()})

    def scaled(self, gamma: Number) -> "Distribution":
        return Distribution({v: x * Fraction(gamma) for v, x in self.items()})

    def is_integral(self) -> bool:
        return all(Fraction(x).denominator == 1 for x in self.values())

    def dominated_by(self, c: Mapping[int, Number]) -> bool:
        return all(x <= Fraction(c.get(v, 0)) for v, x in self.items())

    def __sub__(self, other):  # signed difference as a plain dict
        keys = set(self) | set(other)
        return {v: Fraction(self.get(v, 0)) - Fraction(other.get(v, 0)) for v in keys}


class DemandMatrix(dict):
    """Sparse map (source, target) -> non-negative demand."""

    def __init__(self, demands: Mapping[tuple[int, int], Number] | None = None, n: int | None = None):
        super().__init__()
        for (s, t), x in (demands or {}).items():
            x = Fraction(x)
            if x < 0:
                raise ValueError(f"negative demand {x} for ({s},{t})")
            if n is not None and not (0 <= s < n and 0 <= t < n):
                raise ValueError(f"demand ({s},{t}) references an unknown node")
            if x and s != t:
                self[(int(s), int(t))] = self.get((int(s), int(t)), Fraction(0)) + x

    def scaled(self, gamma: Number) -> "DemandMatrix":
        return DemandMatrix({k: x * Fraction(gamma) for k, x in self.items()})

    @property
    def total(self) -> Fraction:
        return sum(self.values(), Fraction(0))


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_graph(text: str, source: str = "<graph>", n: int | None = None) -> Graph:
    """Parse ``u v capacity`` lines.  Non-power-of-two capacities are rounded down."""
    triples = []
    for lineno, line in _data_lines(text):
        parts = line.split()
        if len(parts) != 3:
            raise GraphFormatError(source, lineno, "expected 'u v capacity'")
        try:
            u, v = int(parts[0]), int(parts[1])
            cap = float(parts[2])
        except ValueError as exc:
            raise GraphFormatError(source, lineno, str(exc)) from None
        if u < 0 or v < 0:
            raise GraphFormatError(source, lineno, "node ids must be non-negative")
        if u == v:
            raise GraphFormatError(source, lineno, f"self-loop at {u}")
        if not cap >= 1:
            raise GraphFormatError(source, lineno, f"capacity {parts[2]} must be >= 1")
        c = round_down_pow2(cap)
        if c != cap:
            logger.warning("%s:%d: capacity %s rounded down to %d", source, lineno, parts[2], c)
        triples.append((lineno, u, v, c))
    size = n if n is not None else (max((max(u, v) for _, u, v, _ in triples), default=-1) + 1)
    seen = set()
    for lineno, u, v, _ in triples:
        key = (min(u, v), max(u, v))
        if key in seen:
            raise GraphFormatError(source, lineno, f"parallel edge {key}")
        seen.add(key)
    return Graph(size, [(u, v, c) for _, u, v, c in triples])


def load_graph(path: str | Path) -> Graph:
    return parse_graph(Path(path).read_text(), str(path))


def parse_demands(text: str, n: int, source: str = "<demands>") -> DemandMatrix:
    d: dict[tuple[int, int], Fraction] = {}
    for lineno, line in _data_lines(text):
        parts = line.split()
        if len(parts) != 3:
            raise GraphFormatError(source, lineno, "expected 'u v amount'")
        try:
            u, v = int(parts[0]), int(parts[1])
            x = Fraction(parts[2])
        except ValueError as exc:
            raise GraphFormatError(source, lineno, str(exc)) from None
        if not (0 <= u < n and 0 <= v < n):
            raise GraphFormatError(source, lineno, f"node out of range 0..{n - 1}")
        if x < 0:
            raise GraphFormatError(source, lineno, "negative demand")
        d[(u, v)] = d.get((u, v), Fraction(0)) + x
    return DemandMatrix(d, n=n)


def load_demands(path: str | Path, n: int) -> DemandMatrix:
    return parse_demands(Path(path).read_text(), n, str(path))


def format_graph(g: Graph) -> str:
    return "".join(f"{e.u} {e.v} {e.capacity}\n" for e in g.edges)
