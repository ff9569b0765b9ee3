"""Load accounting for routing schemes: exact kernels and Monte-Carlo forwarding.

Monte-Carlo mode forwards packets with ``runtime.step`` only.  Exact mode
composes, for every stage a packet passes, a transition kernel T (node to node)
and a load kernel L (node to expected edge traversals); the per-pair expected
load is accumulated as p @ L while p moves to p @ T.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .flows import DeterministicTS, enumerate_ts
from .graph import Graph
from .hypercube import phase_loads
from .records import NullArc, PathArc, SplitArc
from .runtime import RoutingFault
from .scheme import SchemeBundle, compactness, label_bits, route

logger = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass
class LoadReport:
    per_edge: list[tuple[int, int, float]]
    congestion: float
    delivery: dict[tuple[int, int], float]
    trials: int
    seed: int
    mode: str
    mass_in: float = 0.0
    mass_out: float = 0.0
    max_header_bits: int = 0
    exact_loads: list[Fraction] | None = None
    stderr: list[float] | None = None
    exact_congestion: Fraction | None = None

    def to_json(self) -> dict:
        return {
            "per_edge": [[u, v, x] for u, v, x in self.per_edge],
            "congestion": self.congestion,
            "delivery": [[u, v, x] for (u, v), x in sorted(self.delivery.items())],
            "trials": self.trials,
            "seed": self.seed,
            "mode": self.mode,
            "mass_in": self.mass_in,
            "mass_out": self.mass_out,
            "max_header_bits": self.max_header_bits,
        }


def _congestion(graph: Graph, loads) -> float:
    return max((float(x) / e.capacity for x, e in zip(loads, graph.edges)), default=0.0)


def _per_edge(graph: Graph, loads) -> list[tuple[int, int, float]]:
    return [(e.u, e.v, float(x)) for e, x in zip(graph.edges, loads)]


# -- exact kernels ------------------------------------------------------------

class KernelCache:
    """Stage kernels of one bundle, computed on demand."""

    def __init__(self, bundle: SchemeBundle):
        self.b = bundle
        self.n, self.m = bundle.graph.n, bundle.graph.m
        self._ts: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._pmcf: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._cube: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self._arc: dict[tuple[int, int], tuple[int, np.ndarray]] = {}

    def ts(self, ts: DeterministicTS) -> tuple[np.ndarray, np.ndarray]:
        key = id(ts)
        if key not in self._ts:
            T = np.zeros((self.n, self.n))
            L = np.zeros((self.n, self.m))
            for x in ts.records:
                cnt = ts.count(x)
                if not cnt:
                    continue
                ends, loads = ts.trace(x)
                for y, k in ends.items():
                    T[x, y] += k / cnt
                for e, k in loads.items():
                    L[x, e] += k / cnt
            self._ts[key] = (T, L)
        return self._ts[key]

    def pmcf(self, p) -> tuple[np.ndarray, np.ndarray]:
        key = id(p)
        if key not in self._pmcf:
            Tl, Ll = p.kernel()
            T = np.zeros((self.n, self.n))
            L = np.zeros((self.n, self.m))
            idx = np.array(p.nodes)
            T[np.ix_(idx, idx)] = Tl
            L[idx] = Ll
            self._pmcf[key] = (T, L)
        return self._pmcf[key]

    def arc(self, rec, start: int) -> tuple[int, np.ndarray]:
        """(end node, expected edge traversals) of one packet executing ``rec`` at ``start``."""
        key = (id(rec), start)
        hit = self._arc.get(key)
        if hit is not None:
            return hit
        load = np.zeros(self.m)
        if isinstance(rec, NullArc):
            end = start
        elif isinstance(rec, PathArc):
            p = self.b.registry.pmcfs[rec.pmcf]
            mid, e1 = p.replay(start, rec.pid1)
            end, e2 = p.replay(mid, rec.pid2)
            for e in e1 + e2:
                load[e] += 1
        elif isinstance(rec, SplitArc):
            total = rec.residual + rec.large
            end = None
            if rec.path is not None and rec.residual > 0:
                end, pl = self.arc(rec.path, start)
                load += float(rec.residual / total) * pl
            fwd = self.b.registry.flows[rec.fwd]
            share = float(rec.large / total) / (rec.hi - rec.lo + 1)
            for pid in range(rec.lo, rec.hi + 1):
                z, e1 = fwd.run(start, pid)
                tok = fwd.records[start].offset + pid
                entry = self.b.tables[z].helpers[(rec.fwd, tok)]
                rev = self.b.registry.flows[entry.rev]
                u2, e2 = rev.run(z, entry.pid)
                end2, tail = self.arc(entry.then, u2)
                if end is not None and end2 != end:
                    raise SimulationError("split arc delivers to different nodes")
                end = end2
                for e in e1 + e2:
                    load[e] += share
                load += share * tail
        else:
            raise SimulationError(f"unknown arc record {rec!r}")
        self._arc[key] = (end, load)
        return end, load

    def cube(self, cid: int, target: int) -> tuple[np.ndarray, np.ndarray]:
        key = (cid, target)
        if key in self._cube:
            return self._cube[key]
        b = self.b
        cw = b.tree.weights(cid)
        un = b.unmixing[cid]
        cls, first, size = cw.child_range(target)
        spec = un.cubes[cls]
        T = np.zeros((self.n, self.n))
        L = np.zeros((self.n, self.m))
        dest = np.zeros(self.n)
        for y in range(first, first + size):
            dest[spec.owner[y]] += 1 / size
        tgt = np.zeros(spec.size)
        tgt[first:first + size] = 1 / size
        # expected arc usage per directed cube edge, folded onto edge loads
        arc_load: dict[tuple[int, int], np.ndarray] = {}
        for (u, w) in un.arc_list:
            rec = b.tables[u].arcs[(cid, un.arc_index[(u, w)])]
            end, load = self.arc(rec, u)
            if end != w:
                raise SimulationError(f"arc ({u},{w}) of cluster {cid} ends at {end}")
            arc_load[(u, w)] = load
        owner = spec.owner
        for x, own in spec.ids.items():
            start = np.zeros(spec.size)
            start[own] = 1 / len(own)
            loads = phase_loads(spec.dim, start, tgt)
            for bit in range(spec.dim):
                nb = np.arange(spec.size) ^ (1 << bit)
                for a in np.nonzero((owner != owner[nb]) & (loads[:, bit] > 0))[0].tolist():
                    L[x] += loads[a, bit] * arc_load[(int(owner[a]), int(owner[nb[a]]))]
            T[x] = dest
        self._cube[key] = (T, L)
        return T, L

    def stages(self, u: int, v: int):
        """Kernels a packet from u to v passes, in order."""
        b = self.b
        tree = b.tree
        pu, pv = tree.path(u), tree.path(v)
        lu, lv = b.labels[u], b.labels[v]
        k = 0
        while k < len(lu) and k < len(lv) and lu[k] == lv[k]:
            k += 1
        out = []
        if u == v:
            return out
        for d in range(len(lu) - 1, k - 1, -1):
            cid, child = pu[d], pu[d + 1]
            mix = b.mixing[cid]
            if mix.stage1.get(child) is not None:
                out.append(self.ts(mix.stage1[child]))
            out.append(self.pmcf(mix.pmcf))
        for d in range(k, len(lv)):
            cid, t = pv[d], lv[d]
            un = b.unmixing[cid]
            cls = tree.weights(cid).child_range(t)[0]
            out.append(self.ts(un.stage1[cls]))
            out.append(self.cube(cid, t))
            for st in (un.stage3, un.stage4):
                if st.get(t) is not None:
                    out.append(self.ts(st[t]))
        return out

    def pair(self, u: int, v: int) -> tuple[np.ndarray, np.ndarray]:
        """(end distribution, expected edge loads) of one unit packet u -> v."""
        p = np.zeros(self.n)
        p[u] = 1.0
        load = np.zeros(self.m)
        for T, L in self.stages(u, v):
            load += p @ L
            p = p @ T
        return p, load


def exact_pair_loads(bundle: SchemeBundle, pairs, cache: KernelCache | None = None):
    cache = cache or KernelCache(bundle)
    return {pr: cache.pair(*pr) for pr in pairs}


# -- simulation ---------------------------------------------------------------

def simulate(bundle: SchemeBundle, demands: Mapping[tuple[int, int], object], mode: str = "monte-carlo",
             trials: int = 1000, seed: int = 0, cache: KernelCache | None = None) -> LoadReport:
    graph = bundle.graph
    pairs = sorted((u, v) for (u, v), d in demands.items() if Fraction(d) > 0)
    mass_in = float(sum(Fraction(demands[p]) for p in pairs))
    if mode == "exact":
        cache = cache or KernelCache(bundle)
        loads = [Fraction(0)] * graph.m
        delivery = {}
        mass_out = Fraction(0)
        for u, v in pairs:
            d = Fraction(demands[(u, v)])
            p, load = cache.pair(u, v)
            delivery[(u, v)] = float(p[v])
            mass_out += d * Fraction(float(p[v]))
            for e, x in enumerate(load.tolist()):
                if x:
                    loads[e] += d * Fraction(x)
        cong = max((x / e.capacity for x, e in zip(loads, graph.edges)), default=Fraction(0))
        rep = LoadReport(_per_edge(graph, loads), float(cong), delivery, 0, seed, "exact",
                         mass_in, float(mass_out), bundle.header_budget, exact_loads=loads,
                         exact_congestion=cong)
        return rep
    if mode != "monte-carlo":
        raise ValueError(f"unknown mode {mode!r}")
    if trials < 1:
        raise ValueError("trials must be positive")
    loads = np.zeros(graph.m)
    sq = np.zeros(graph.m)
    delivery = {}
    peak = 0
    mass_out = 0.0
    for u, v in pairs:
        d = float(Fraction(demands[(u, v)]))
        counts = np.zeros(graph.m)
        pair_sq = np.zeros(graph.m)
        hits = 0
        for t in range(trials):
            r = route(bundle, u, v, seed, t)
            peak = max(peak, r.max_header_bits)
            hits += r.end == v
            c = np.bincount(np.asarray(r.edges, dtype=np.int64), minlength=graph.m) if r.edges else 0
            counts += c
            pair_sq += np.asarray(c) ** 2
        mean = counts / trials
        loads += d * mean
        # variance of the per-pair mean, scaled by demand
        sq += d * d * np.maximum(pair_sq / trials - mean ** 2, 0) / trials
        delivery[(u, v)] = hits / trials
        mass_out += d * hits / trials
    rep = LoadReport(_per_edge(graph, loads), _congestion(graph, loads), delivery, trials, seed,
                     "monte-carlo", mass_in, mass_out, peak)
    rep.stderr = np.sqrt(sq).tolist()
    return rep


def simulate_ts(ts: DeterministicTS, mode: str = "exact", trials: int = 1000, seed: int = 0) -> LoadReport:
    """Route mu(v) packets from every node of a flow scheme."""
    graph = ts.graph
    if mode == "exact":
        arrivals, loads = enumerate_ts(ts)
        vec = [Fraction(loads.get(e, 0)) for e in range(graph.m)]
        delivery = {(v, v): float(x) for v, x in arrivals.items()}
        return LoadReport(_per_edge(graph, vec), _congestion(graph, vec), delivery, 0, seed, "exact",
                          float(sum(ts.mu.values())), float(sum(arrivals.values())), exact_loads=vec)
    rng = np.random.default_rng(seed)
    loads = np.zeros(graph.m)
    arrived: dict[int, float] = {}
    for v in sorted(ts.mu):
        cnt = ts.count(v)
        for _ in range(trials):
            end, edges = ts.run(v, int(rng.integers(1, cnt + 1)))
            for e in edges:
                loads[e] += cnt / trials
            arrived[end] = arrived.get(end, 0.0) + cnt / trials
    return LoadReport(_per_edge(graph, loads), _congestion(graph, loads), {(v, v): x for v, x in arrived.items()},
                      trials, seed, "monte-carlo", float(sum(ts.mu.values())), float(sum(arrived.values())))


def measure(bundle: SchemeBundle, report: LoadReport | None = None) -> dict:
    ratios = compactness(bundle)
    return {
        "bits_per_node": list(bundle.bits),
        "max_header_bits": report.max_header_bits if report else bundle.header_budget,
        "header_budget": bundle.header_budget,
        "label_bits": [label_bits(bundle.tree, v) for v in range(bundle.graph.n)],
        "compactness": ratios,
        "max_compactness": max(ratios),
    }


def all_pairs(n: int) -> list[tuple[int, int]]:
    return [(u, v) for u in range(n) for v in range(n) if u != v]


def permutation_demands(n: int, seed: int) -> dict[tuple[int, int], Fraction]:
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return {(u, int(perm[u])): Fraction(1) for u in range(n) if perm[u] != u}
