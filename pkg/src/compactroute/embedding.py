"""Path systems, randomized rounding and the general graph embedding.

An auxiliary graph G' (parallel arcs allowed) asks for d(u, v) units from u to
v for every arc.  Path systems come from two concatenated product-walk paths
(u -> w -> v), restricted to the plurality path class.  Arcs whose demand
exceeds 2^l for their class l are split: their paths are cut after the first
class-l edge, the prefixes form a single-commodity flow that carries tokens to
helper nodes and back, and the continuation of every token is stored at the
helper it passed.  The packet picks that continuation up on the way
(anticipative routing).  What is left is routed along one sampled path per arc.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .bits import width
from .flows import DeterministicTS, build_flow_ts, integralize_acyclic, reverse_ts
from .graph import Flow, Graph
from .pmcf import PmcfCts
from .records import ArcRecord, HelperEntry, NullArc, PathArc, Registry, SplitArc, arc_bits

logger = logging.getLogger(__name__)

NO_CLASS = math.inf  # class of the empty path


class EmbeddingError(ValueError):
    pass


class RoundingError(EmbeddingError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class SampledPath:
    mid: int
    pid1: tuple[int, ...]
    pid2: tuple[int, ...]
    edges: tuple[int, ...]
    nodes: tuple[int, ...]
    cls: float


@dataclass
class PathSystem:
    u: int
    v: int
    cls: float
    paths: list[SampledPath]
    share: float      # fraction of raw samples with the plurality class
    samples: int


def path_class(graph: Graph, edges) -> float:
    return min((graph.edges[e].cls for e in edges), default=NO_CLASS)


def walk_nodes(graph: Graph, start: int, edges) -> tuple[int, ...]:
    nodes = [start]
    for e in edges:
        nodes.append(graph.edges[e].other(nodes[-1]))
    return tuple(nodes)


def sample_path_system(pmcf: PmcfCts, u: int, v: int, samples: int, rng: random.Random) -> PathSystem:
    """Sample concatenated paths u -> w -> v and keep the plurality class."""
    graph = pmcf.graph
    if u == v:
        return PathSystem(u, v, NO_CLASS, [SampledPath(u, (), (), (), (u,), NO_CLASS)], 1.0, 1)
    T, _ = pmcf.kernel()
    iu, iv = pmcf.idx[u], pmcf.idx[v]
    weights = T[iu] * T[:, iv]
    if weights.sum() <= 0:
        raise EmbeddingError(f"no product-walk path from {u} to {v}")
    cum = np.cumsum(weights)
    raw: list[SampledPath] = []
    for _ in range(samples):
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        k = min(k, len(cum) - 1)
        while weights[k] <= 0:
            k -= 1
        w = pmcf.nodes[k]
        pid1 = pmcf.sample_pid_to(rng, u, w)
        pid2 = pmcf.sample_pid_to(rng, w, v)
        end1, e1 = pmcf.replay(u, pid1)
        end2, e2 = pmcf.replay(w, pid2)
        assert end1 == w and end2 == v
        edges = tuple(e1) + tuple(e2)
        raw.append(SampledPath(w, pid1, pid2, edges, walk_nodes(graph, u, edges), path_class(graph, edges)))
    counts: dict[float, int] = {}
    for p in raw:
        counts[p.cls] = counts.get(p.cls, 0) + 1
    # plurality, ties toward the larger class
    cls = max(counts, key=lambda l: (counts[l], l))
    kept = [p for p in raw if p.cls == cls]
    return PathSystem(u, v, cls, kept, counts[cls] / samples, samples)


def sample_budget(n_class: int, n: int, factor: float) -> int:
    return max(1, math.ceil(factor * n_class * math.log(n + 4)))


# -- randomized rounding ------------------------------------------------------

def _loads(graph: Graph, chosen: list[list[SampledPath]], demands) -> np.ndarray:
    load = np.zeros(graph.m)
    for paths, d in zip(chosen, demands):
        if not paths:
            continue
        share = float(d) / len(paths)
        for p in paths:
            for e in p.edges:
                load[e] += share
    return load


def system_congestion(graph: Graph, systems: list[PathSystem], demands) -> float:
    """Congestion when every demand is spread evenly over its whole path system."""
    load = _loads(graph, [s.paths for s in systems], demands)
    caps = np.array([e.capacity for e in graph.edges], dtype=float)
    return float(np.max(load / caps)) if graph.m else 0.0


def rounding_count(system: PathSystem, d) -> int:
    if system.cls == NO_CLASS:
        return 1
    return max(1, math.ceil(Fraction(d) / 2 ** int(system.cls)))


@dataclass
class RoundingResult:
    chosen: list[list[SampledPath]]
    congestion: float
    bound: float
    attempts: int


def round_paths(graph: Graph, systems: list[PathSystem], demands, rng: random.Random,
                retries: int = 100) -> RoundingResult:
    """Keep ceil(d_i / 2^l_i) paths per system with congestion <= 2*cong + 6 ln m."""
    if len(systems) != len(demands):
        raise ValueError("one demand per path system")
    for s, d in zip(systems, demands):
        if not s.paths:
            raise EmbeddingError(f"empty path system {s.u}->{s.v}")
        if Fraction(d) <= 0:
            raise EmbeddingError("rounding needs positive demands")
    base = system_congestion(graph, systems, demands)
    bound = 2 * base + 6 * math.log(max(graph.m, 2))
    caps = np.array([e.capacity for e in graph.edges], dtype=float)
    counts = [rounding_count(s, d) for s, d in zip(systems, demands)]
    best = None
    for attempt in range(1, retries + 1):
        chosen = [[s.paths[rng.randrange(len(s.paths))] for _ in range(k)] for s, k in zip(systems, counts)]
        cong = float(np.max(_loads(graph, chosen, demands) / caps)) if graph.m else 0.0
        if best is None or cong < best.congestion:
            best = RoundingResult(chosen, cong, bound, attempt)
        if cong <= bound:
            return RoundingResult(chosen, cong, bound, attempt)
    raise RoundingError(f"rounding exceeded {bound:.3g} in {retries} attempts", best)


# -- general graph embedding --------------------------------------------------

@dataclass
class Arc:
    u: int
    v: int
    d: Fraction
    store: int
    origin: int | None          # index of the initial arc, None for arcs made by splitting
    record: ArcRecord | None = None
    split: dict | None = None   # filled for arcs split at their class


@dataclass
class Embedding:
    """Result of embedding an auxiliary graph into a cluster."""

    pmcf_id: int
    arcs: list[Arc]
    initial: list[ArcRecord]            # record per initial arc, stored at its tail
    helpers: dict[int, dict[tuple[int, int], HelperEntry]]  # node -> (fwd id, token) -> entry
    flow_ids: list[int]
    systems: dict[tuple[int, int], PathSystem]
    rounds: int
    capacity_scale: float
    congestion: float = 0.0
    storage: dict[int, int] = field(default_factory=dict)


def check_demands(arcs, c: dict[int, object], scale: float = 1.0) -> float:
    """Largest ratio of per-node in/out arc demand to c; raise above ``scale``."""
    out: dict[int, Fraction] = {}
    inn: dict[int, Fraction] = {}
    for u, v, d in arcs:
        out[u] = out.get(u, 0) + Fraction(d)
        inn[v] = inn.get(v, 0) + Fraction(d)
    worst = 0.0
    for tot in (out, inn):
        for x, t in tot.items():
            cx = Fraction(c.get(x, 0))
            if t > 0 and cx == 0:
                raise EmbeddingError(f"arc demand at node {x} which has zero weight")
            if t > 0:
                worst = max(worst, float(t / cx))
    if worst > scale * (1 + 1e-9):
        raise EmbeddingError(f"arc demand {worst:.3g} times the node weight exceeds the allowed {scale:.3g}")
    return worst


def _totals(arcs: list[Arc]) -> tuple[dict[int, Fraction], dict[int, Fraction]]:
    out: dict[int, Fraction] = {}
    inn: dict[int, Fraction] = {}
    for a in arcs:
        if a.d:
            out[a.u] = out.get(a.u, 0) + a.d
            inn[a.v] = inn.get(a.v, 0) + a.d
    return out, inn


def _prefix(graph: Graph, p: SampledPath, cls: int) -> tuple[list[int], int]:
    for i, e in enumerate(p.edges):
        if graph.edges[e].cls == cls:
            return list(p.edges[:i + 1]), p.nodes[i + 1]
    raise EmbeddingError("path has no edge of its class")


def embed_graph(graph: Graph, pmcf: PmcfCts, pmcf_id: int, arcs: list[tuple[int, int, object]],
                c: dict[int, object], registry: Registry, rng: random.Random, samples: int,
                retries: int = 100, capacity_scale: float = 1.0) -> Embedding:
    """Routing records delivering every arc's demand from its tail to its head."""
    members = set(pmcf.nodes)
    for u, v, d in arcs:
        if u not in members or v not in members:
            raise EmbeddingError(f"arc ({u},{v}) leaves the cluster")
    check_demands(arcs, c, capacity_scale)
    state = [Arc(u, v, Fraction(d), u, i) for i, (u, v, d) in enumerate(arcs)]
    systems: dict[tuple[int, int], PathSystem] = {}

    def system(u: int, v: int) -> PathSystem:
        if (u, v) not in systems:
            systems[(u, v)] = sample_path_system(pmcf, u, v, samples, rng)
        return systems[(u, v)]

    helpers: dict[int, dict[tuple[int, int], HelperEntry]] = {}
    pending_helpers: list[tuple[int, tuple[int, int], int, int, int]] = []
    flow_ids: list[int] = []
    loads = np.zeros(graph.m)
    top = graph.n_class - 1
    rounds = 0
    for l in range(top, -1, -1):
        large = [i for i, a in enumerate(state)
                 if a.u != a.v and a.d > 2 ** l and system(a.u, a.v).cls == l]
        if not large:
            continue
        rounds += 1
        if rounds > graph.n_class:
            raise EmbeddingError("large-arc elimination did not terminate")
        before = _totals(state)
        unit = 2 ** l
        counts = {i: int(state[i].d // unit) for i in large}
        res = round_paths(graph, [system(state[i].u, state[i].v) for i in large],
                          [counts[i] * unit for i in large], rng, retries)
        flow = Flow(graph)
        mu: dict[int, int] = {}
        mu_out: dict[int, int] = {}
        for i, paths in zip(large, res.chosen):
            for p in paths:
                edges, z = _prefix(graph, p, l)
                x = state[i].u
                for e in edges:
                    y = graph.edges[e].other(x)
                    flow.add(x, y, 1)
                    x = y
                mu[state[i].u] = mu.get(state[i].u, 0) + 1
                mu_out[z] = mu_out.get(z, 0) + 1
        fwd = build_flow_ts(integralize_acyclic(flow, mu, mu_out), mu, mu_out)
        rev = reverse_ts(fwd)
        fwd_id, rev_id = registry.add_flow(fwd), registry.add_flow(rev)
        flow_ids += [fwd_id, rev_id]
        _, fl = _ts_loads(fwd)
        loads += fl * unit
        _, rl = _ts_loads(rev)
        loads += rl * unit
        # token ranges per arc at its source, in arc order
        nxt: dict[int, int] = {}
        token_arc: dict[int, int] = {}
        for i in large:
            a = state[i]
            lo = nxt.get(a.u, 0) + 1
            hi = lo + counts[i] - 1
            nxt[a.u] = hi
            a.split = {"cls": l, "lo": lo, "hi": hi, "fwd": fwd_id,
                       "large": Fraction(counts[i] * unit), "residual": a.d - counts[i] * unit}
            off = fwd.records[a.u].offset
            for t in range(lo, hi + 1):
                token_arc[off + t] = i
        arrivals: dict[int, list[int]] = {}
        for u in sorted(mu):
            for pid in range(1, mu[u] + 1):
                end, _ = fwd.run(u, pid)
                arrivals.setdefault(end, []).append(fwd.records[u].offset + pid)
        new_arcs = []
        for z in sorted(arrivals):
            for k, tok in enumerate(sorted(arrivals[z]), start=1):
                u2, _ = rev.run(z, k)
                target = state[token_arc[tok]].v
                new = Arc(u2, target, Fraction(unit), z, None)
                new_arcs.append(new)
                pending_helpers.append((z, (fwd_id, tok), rev_id, k, len(state) + len(new_arcs) - 1))
        for i in large:
            state[i].d = state[i].split["residual"]
        state.extend(new_arcs)
        if _totals(state) != before:
            raise EmbeddingError("splitting changed per-node arc totals")

    # part (c): one path per remaining arc
    rest = [i for i, a in enumerate(state) if a.d > 0 and a.u != a.v]
    paths: dict[int, SampledPath] = {}
    if rest:
        res = round_paths(graph, [system(state[i].u, state[i].v) for i in rest],
                          [state[i].d for i in rest], rng, retries)
        for i, chosen in zip(rest, res.chosen):
            paths[i] = chosen[0]
            for e in chosen[0].edges:
                loads[e] += float(state[i].d)
    for i, a in enumerate(state):
        p = paths.get(i)
        path = PathArc(pmcf_id, p.pid1, p.pid2) if p is not None else None
        if a.split is not None:
            s = a.split
            a.record = SplitArc(s["cls"], s["residual"], s["large"], path, s["lo"], s["hi"], s["fwd"])
        elif path is not None:
            a.record = path
        else:
            a.record = NullArc()
    for z, key, rev_id, k, idx in pending_helpers:
        helpers.setdefault(z, {})[key] = HelperEntry(rev_id, k, state[idx].record)
    caps = np.array([e.capacity for e in graph.edges], dtype=float)
    emb = Embedding(pmcf_id, state, [state[i].record for i in range(len(arcs))], helpers, flow_ids,
                    systems, rounds, capacity_scale,
                    float(np.max(loads / caps)) if graph.m else 0.0)
    return emb


def _ts_loads(ts: DeterministicTS) -> tuple[dict[int, int], np.ndarray]:
    out = np.zeros(ts.graph.m)
    ends: dict[int, int] = {}
    for v in ts.records:
        e, l = ts.trace(v)
        for x, k in e.items():
            ends[x] = ends.get(x, 0) + k
        for i, k in l.items():
            out[i] += k
    return ends, out


def storage_bits(emb: Embedding, registry: Registry, graph: Graph) -> dict[int, int]:
    """Bits each node stores for this embedding (arc records, helpers, flow records)."""
    pid_bits = {i: p.pid_bits() for i, p in enumerate(registry.pmcfs)}
    ts_bits = width(max(len(registry.flows), 1))
    bits: dict[int, int] = {}
    for a, rec in zip(emb.arcs, emb.initial):
        bits[a.u] = bits.get(a.u, 0) + arc_bits(rec, pid_bits, ts_bits)
    for z, entries in emb.helpers.items():
        for (fid, tok), h in entries.items():
            bits[z] = bits.get(z, 0) + 2 * ts_bits + width(tok) + width(h.pid) + arc_bits(h.then, pid_bits, ts_bits)
    for fid in emb.flow_ids:
        ts = registry.flows[fid]
        for v in ts.records:
            bits[v] = bits.get(v, 0) + ts.bits(v)
    return bits


def storage_budget(graph: Graph, v: int, C: float, c2: float) -> float:
    n = max(graph.n, 2)
    logn = math.ceil(math.log2(n))
    lognw = math.log2(n * graph.W)
    return c2 * (graph.degree(v) + 1) * max(C, 1.0) * logn ** 2 * graph.n_class * lognw ** 3


def audit_storage(emb: Embedding, registry: Registry, graph: Graph, C: float, c2: float) -> dict[int, int]:
    bits = storage_bits(emb, registry, graph)
    for v, b in bits.items():
        budget = storage_budget(graph, v, C, c2)
        if b > budget:
            raise EmbeddingError(f"node {v} stores {b} bits for the embedding, budget {budget:.0f}")
    emb.storage = bits
    return bits
