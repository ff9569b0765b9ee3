"""Laminar decomposition trees and the per-cluster weight functions.

For a cluster S, ``out_S(v)`` is the capacity of edges from v to nodes outside
S, and ``w_S`` sums the border weights of S's children.  Children are numbered
by (class, size key) so that a child index alone determines the child's class
and its hypercube range once the per-class counts are known.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.linalg

from .graph import DisconnectedGraphError, Graph, GraphFormatError
from .oracle import pmcf_congestion

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 10
SWEEP_VECTORS = 3


class TreeError(ValueError):
    pass


@dataclass
class Cluster:
    id: int
    nodes: tuple[int, ...]
    parent: int | None
    depth: int
    children: list[int] = field(default_factory=list)  # in index order once numbered
    C: float = 0.0
    C_dual: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ChildInfo:
    cluster: int
    index: int
    out: dict[int, int]
    out_by_class: dict[int, dict[int, int]]
    cls: int        # L(S_i)
    norm: int       # ||S_i||

    @property
    def total(self) -> int:
        return sum(self.out.values())

    def class_total(self, l: int) -> int:
        return sum(self.out_by_class.get(l, {}).values())


@dataclass
class ClusterWeights:
    cluster: int
    out: dict[int, int]
    w: dict[int, int]
    children: list[ChildInfo]                 # in index order
    maj: dict[int, dict[int, int]]            # class -> maj^{(l)}_S
    class_counts: dict[int, int]              # class -> number of children
    norm_counts: dict[tuple[int, int], int]   # (class, norm) -> number of children

    def child_range(self, index: int) -> tuple[int, int, int]:
        """(class, first hypercube id, size) of child ``index`` from the counts alone."""
        return child_range_from_counts(self.class_counts, self.norm_counts, index)


def child_range_from_counts(class_counts: dict[int, int], norm_counts: dict[tuple[int, int], int],
                            index: int) -> tuple[int, int, int]:
    pos = 0
    for l in sorted(class_counts):
        k = class_counts[l]
        if index < pos + k:
            offset = 0
            j = index - pos
            for (cl, norm) in sorted(norm_counts):
                if cl != l:
                    continue
                cnt = norm_counts[(cl, norm)]
                if j < cnt:
                    return l, offset + j * norm, norm
                offset += cnt * norm
                j -= cnt
            break
        pos += k
    raise IndexError(f"child index {index} out of range")


def border_weights(graph: Graph, nodes) -> tuple[dict[int, int], dict[int, dict[int, int]]]:
    """out_S and its per-class split out^{(l)}_S."""
    s = set(nodes)
    out: dict[int, int] = {}
    by_class: dict[int, dict[int, int]] = {}
    for v in s:
        for u, e in graph.adj[v]:
            if u not in s:
                cap = graph.edges[e].capacity
                l = graph.edges[e].cls
                out[v] = out.get(v, 0) + cap
                by_class.setdefault(l, {})
                by_class[l][v] = by_class[l].get(v, 0) + cap
    return out, by_class


def pow2_ceil(x: Fraction) -> int:
    p = 1
    while p < x:
        p *= 2
    return p


class DecompositionTree:
    def __init__(self, graph: Graph, clusters: list[Cluster]):
        self.graph = graph
        self.clusters = clusters
        self.root = 0
        self.leaf_of = [-1] * graph.n
        for c in clusters:
            if c.is_leaf:
                if len(c.nodes) != 1:
                    raise TreeError(f"cluster {c.id}: leaf is not a singleton")
                self.leaf_of[c.nodes[0]] = c.id
        missing = [v for v in range(graph.n) if self.leaf_of[v] < 0]
        if missing:
            raise TreeError(f"missing singleton leaves for nodes {missing}")
        self._weights: dict[int, ClusterWeights] = {}
        for c in clusters:
            if not c.is_leaf:
                self._number_children(c)

    @property
    def height(self) -> int:
        return max(c.depth for c in self.clusters)

    @property
    def degree(self) -> int:
        return max(len(c.children) for c in self.clusters)

    def path(self, v: int) -> list[int]:
        """Cluster ids from the root down to the leaf of ``v``."""
        out = []
        c = self.leaf_of[v]
        while c is not None:
            out.append(c)
            c = self.clusters[c].parent
        return out[::-1]

    def labels(self, v: int) -> list[int]:
        """Child indices along the root-to-leaf path of ``v``."""
        p = self.path(v)
        return [self.clusters[a].children.index(b) for a, b in zip(p, p[1:])]

    def weights(self, cid: int) -> ClusterWeights:
        return self._weights[cid]

    def _number_children(self, c: Cluster) -> None:
        out, _ = border_weights(self.graph, c.nodes)
        infos = []
        for ch in c.children:
            o, ob = border_weights(self.graph, self.clusters[ch].nodes)
            if not o:
                raise TreeError(f"cluster {ch} has no border edges")
            # argmax of class weight, ties toward the larger class
            cls = max(ob, key=lambda l: (sum(ob[l].values()), l))
            norm = pow2_ceil(Fraction(sum(ob[cls].values()), 2 ** cls))
            infos.append(ChildInfo(ch, -1, o, ob, cls, norm))
        infos.sort(key=lambda i: (i.cls, i.norm, min(self.clusters[i.cluster].nodes)))
        for k, info in enumerate(infos):
            info.index = k
        c.children = [i.cluster for i in infos]
        w: dict[int, int] = {}
        maj: dict[int, dict[int, int]] = {}
        class_counts: dict[int, int] = {}
        norm_counts: dict[tuple[int, int], int] = {}
        for info in infos:
            for v, x in info.out.items():
                w[v] = w.get(v, 0) + x
            for v, x in info.out_by_class.get(info.cls, {}).items():
                maj.setdefault(info.cls, {})
                maj[info.cls][v] = maj[info.cls].get(v, 0) + x
            class_counts[info.cls] = class_counts.get(info.cls, 0) + 1
            key = (info.cls, info.norm)
            norm_counts[key] = norm_counts.get(key, 0) + 1
        self._weights[c.id] = ClusterWeights(c.id, out, w, infos, maj, class_counts, norm_counts)

    def measure(self, eps: float = 0.05, lp_threshold: int = 200_000) -> None:
        """Measure the product-flow congestion C_S of every internal cluster."""
        for c in self.clusters:
            if c.is_leaf:
                continue
            cert = pmcf_congestion(self.graph, c.nodes, self.weights(c.id).w, eps, lp_threshold)
            c.C, c.C_dual = cert.primal, cert.dual

    def validate(self) -> None:
        root = self.clusters[self.root]
        if sorted(root.nodes) != list(range(self.graph.n)):
            raise TreeError("root does not contain every node exactly once")
        for c in self.clusters:
            if c.is_leaf:
                continue
            parts = [v for ch in c.children for v in self.clusters[ch].nodes]
            if sorted(parts) != sorted(c.nodes):
                raise TreeError(f"children of cluster {c.id} do not partition it")
            if len(c.nodes) > 1 and not self.graph.is_connected(c.nodes):
                raise TreeError(f"cluster {c.id} does not induce a connected subgraph")

    def summary(self) -> dict:
        return {
            "height": self.height,
            "degT": self.degree,
            "clusters": [
                {"id": c.id, "depth": c.depth, "size": len(c.nodes), "C": c.C, "C_dual": c.C_dual}
                for c in self.clusters if not c.is_leaf
            ],
        }


def _ratio(graph: Graph, nodes: list[int], side: set[int]) -> tuple[int, Fraction]:
    cut = 0
    for v in side:
        for u, e in graph.adj[v]:
            if u in nodes and u not in side:
                cut += graph.edges[e].capacity
    k = len(side)
    return cut, Fraction(cut, k * (len(nodes) - k))


def _bisect(graph: Graph, nodes: list[int]) -> set[int]:
    """Balanced split minimising cut / (|X| |S - X|)."""
    size = len(nodes)
    cap = math.ceil(2 * size / 3)
    pool = set(nodes)
    best, best_key = None, None
    if size <= EXHAUSTIVE_LIMIT:
        first, rest = nodes[0], nodes[1:]
        for r in range(0, size - 1):
            for combo in itertools.combinations(rest, r):
                side = {first, *combo}
                if max(len(side), size - len(side)) > cap:
                    continue
                _, ratio = _ratio(graph, pool, side)
                key = (ratio, sorted(side))
                if best_key is None or key < best_key:
                    best, best_key = side, key
        return best
    idx = {v: i for i, v in enumerate(nodes)}
    lap = np.zeros((size, size))
    for e in graph.induced_edges(nodes):
        ed = graph.edges[e]
        i, j = idx[ed.u], idx[ed.v]
        lap[i, j] -= ed.capacity
        lap[j, i] -= ed.capacity
        lap[i, i] += ed.capacity
        lap[j, j] += ed.capacity
    _, vecs = scipy.linalg.eigh(lap)
    # the second eigenvalue is often degenerate (grids, tori): sweep a few vectors
    for j in range(1, min(SWEEP_VECTORS + 1, size)):
        vec = vecs[:, j]
        order = sorted(nodes, key=lambda v: (round(float(vec[idx[v]]), 12), v))
        for k in range(1, size):
            if max(k, size - k) > cap:
                continue
            side = set(order[:k])
            _, ratio = _ratio(graph, pool, side)
            key = (ratio, j, k)
            if best_key is None or key < best_key:
                best, best_key = side, key
    return _refine(graph, nodes, best, cap)


def _refine(graph: Graph, nodes: list[int], side: set[int], cap: int) -> set[int]:
    """Greedy single moves and swaps while the ratio strictly improves."""
    pool = set(nodes)
    size = len(nodes)
    _, best = _ratio(graph, pool, side)
    improved = True
    while improved:
        improved = False
        candidates = [side ^ {v} for v in nodes]
        candidates += [(side - {a}) | {b} for a in sorted(side) for b in nodes if b not in side]
        for cand in candidates:
            k = len(cand)
            if k == 0 or k == size or max(k, size - k) > cap:
                continue
            _, r = _ratio(graph, pool, cand)
            if r < best:
                side, best, improved = cand, r, True
                break
    return side


def build_tree(graph: Graph, measure: bool = True, eps: float = 0.05,
               lp_threshold: int = 200_000) -> DecompositionTree:
    """Recursive balanced bisection; children are the connected pieces of each side."""
    if graph.n == 0:
        raise TreeError("empty graph")
    if not graph.is_connected():
        raise DisconnectedGraphError("graph not connected")
    clusters: list[Cluster] = [Cluster(0, tuple(range(graph.n)), None, 0)]
    queue = [0]
    while queue:
        cid = queue.pop(0)
        c = clusters[cid]
        if len(c.nodes) == 1:
            continue
        nodes = list(c.nodes)
        side = _bisect(graph, nodes)
        parts = graph.components(side) + graph.components(set(nodes) - side)
        for part in sorted(parts):
            child = Cluster(len(clusters), tuple(part), cid, c.depth + 1)
            clusters.append(child)
            c.children.append(child.id)
            queue.append(child.id)
    tree = DecompositionTree(graph, clusters)
    tree.validate()
    if measure:
        tree.measure(eps, lp_threshold)
    return tree


def parse_tree(text: str, graph: Graph, source: str = "<tree>", measure: bool = True,
               eps: float = 0.05, lp_threshold: int = 200_000) -> DecompositionTree:
    """Lines ``level cluster_id parent_id : v1 v2 ...``; the root has parent -1."""
    raw: dict[str, tuple[int, str, list[int], int]] = {}
    order: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise GraphFormatError(source, lineno, "expected 'level id parent : nodes'")
        head, tail = line.split(":", 1)
        parts = head.split()
        if len(parts) != 3:
            raise GraphFormatError(source, lineno, "expected 'level id parent'")
        try:
            level = int(parts[0])
            members = [int(x) for x in tail.split()]
        except ValueError as exc:
            raise GraphFormatError(source, lineno, str(exc)) from None
        cid, parent = parts[1], parts[2]
        if cid in raw:
            raise GraphFormatError(source, lineno, f"duplicate cluster id {cid}")
        if not members:
            raise GraphFormatError(source, lineno, f"cluster {cid} is empty")
        if any(not 0 <= v < graph.n for v in members):
            raise GraphFormatError(source, lineno, f"cluster {cid} names an unknown node")
        raw[cid] = (level, parent, members, lineno)
        order.append(cid)
    roots = [k for k in order if raw[k][1] in ("-1", "-")]
    if len(roots) != 1:
        raise TreeError(f"{source}:1: tree file must contain exactly one root (parent -1)")
    ids = {roots[0]: 0}
    clusters = [Cluster(0, tuple(sorted(raw[roots[0]][2])), None, 0)]
    pending = [roots[0]]
    kids: dict[str, list[str]] = {}
    for k in order:
        p = raw[k][1]
        if k != roots[0]:
            if p not in raw:
                raise TreeError(f"{source}:{raw[k][3]}: cluster {k} has unknown parent {p}")
            kids.setdefault(p, []).append(k)
    while pending:
        k = pending.pop(0)
        c = clusters[ids[k]]
        for ch in kids.get(k, []):
            level, _, members, lineno = raw[ch]
            if level != c.depth + 1:
                raise TreeError(f"{source}:{lineno}: cluster {ch} has level {level}, expected {c.depth + 1}")
            ids[ch] = len(clusters)
            clusters.append(Cluster(ids[ch], tuple(sorted(members)), c.id, c.depth + 1))
            c.children.append(ids[ch])
            pending.append(ch)
    if len(ids) != len(raw):
        bad = min(raw[k][3] for k in raw if k not in ids)
        raise TreeError(f"{source}:{bad}: cluster unreachable from the root")
    for c in clusters:
        if c.children:
            parts = [v for ch in c.children for v in clusters[ch].nodes]
            if sorted(parts) != list(c.nodes):
                name = _name(ids, c.id)
                raise TreeError(f"{source}:{raw[name][3]}: children of cluster {name} overlap or do not cover it")
        elif len(c.nodes) != 1:
            name = _name(ids, c.id)
            raise TreeError(f"{source}:{raw[name][3]}: cluster {name} has no children but is not a singleton leaf")
    tree = DecompositionTree(graph, clusters)
    tree.validate()
    if measure:
        tree.measure(eps, lp_threshold)
    return tree


def _name(ids: dict[str, int], cid: int) -> str:
    for k, v in ids.items():
        if v == cid:
            return k
    return str(cid)


def import_tree(path: str | Path, graph: Graph, **kw) -> DecompositionTree:
    return parse_tree(Path(path).read_text(), graph, str(path), **kw)


def format_tree(tree: DecompositionTree) -> str:
    lines = []
    for c in sorted(tree.clusters, key=lambda c: (c.depth, c.id)):
        parent = -1 if c.parent is None else c.parent
        lines.append(f"{c.depth} {c.id} {parent} : " + " ".join(map(str, c.nodes)))
    return "\n".join(lines) + "\n"
