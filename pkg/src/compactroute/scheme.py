"""Assembly of the oblivious routing scheme: labels, per-cluster schemes, node tables.

A packet from u to v first climbs the decomposition tree: at every cluster on
the way up to the lowest common cluster it is mixed (its distribution moves
from w_{S_i} toward w_S).  It then descends along v's label, unmixing at every
level toward the child named by the next label entry, until it sits at v.
"""

from __future__ import annotations

import logging
import math
import pickle
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bits import clog2, width
from .config import Config
from .decomposition import DecompositionTree, build_tree
from .graph import Graph
from .hypercube import UnmixingCts, build_unmixing_cts
from .pmcf import MixingCts, build_mixing_cts
from .records import Registry, arc_bits
from .runtime import (DOWN, ArcFrame, ClusterRecord, CubeNodeRecord, Header, HeaderFormat, NodeTable,
                      PmcfNodeRecord, RoutingFault, Top, initial_header, step)

logger = logging.getLogger(__name__)

BUNDLE_MAGIC = b"CRBUNDLE"
BUNDLE_VERSION = 1


class SchemeError(RuntimeError):
    def __init__(self, message: str, cluster: int | None = None):
        super().__init__(message if cluster is None else f"cluster {cluster}: {message}")
        self.cluster = cluster


class BundleFormatError(ValueError):
    pass


# -- labels -------------------------------------------------------------------

def level_bits(tree: DecompositionTree, cid: int) -> int:
    """Bits for one child index of cluster ``cid``."""
    return max(1, clog2(len(tree.clusters[cid].children)))


def assign_labels(tree: DecompositionTree) -> dict[int, tuple[int, ...]]:
    return {v: tuple(tree.labels(v)) for v in range(tree.graph.n)}


def label_bits(tree: DecompositionTree, v: int) -> int:
    return sum(level_bits(tree, c) for c in tree.path(v)[:-1])


def label_bound(tree: DecompositionTree) -> int:
    return tree.height * max(1, clog2(tree.degree))


def decode_label(tree: DecompositionTree, label) -> int:
    """Leaf node named by ``label``; raises on malformed labels."""
    c = tree.clusters[tree.root]
    for k in label:
        if not 0 <= k < len(c.children):
            raise SchemeError(f"label entry {k} out of range")
        c = tree.clusters[c.children[k]]
    if not c.is_leaf:
        raise SchemeError("label stops above a leaf")
    return c.nodes[0]


# -- bundle -------------------------------------------------------------------

@dataclass
class SchemeBundle:
    graph: Graph
    tree: DecompositionTree
    config: Config
    labels: dict[int, tuple[int, ...]]
    tables: list[NodeTable]
    fmt: HeaderFormat
    header_budget: int
    step_bound: int
    registry: Registry
    mixing: dict[int, MixingCts]
    unmixing: dict[int, UnmixingCts]
    bits: list[int] = field(default_factory=list)
    report: dict = field(default_factory=dict)


def build_scheme(graph: Graph, tree: DecompositionTree | None = None, config: Config | None = None) -> SchemeBundle:
    config = config or Config()
    graph.require_connected()
    if graph.n < 2:
        raise SchemeError("need at least two nodes")
    if tree is None:
        tree = build_tree(graph, measure=True, eps=config.epsilon, lp_threshold=config.lp_threshold)
    registry = Registry()
    mixing: dict[int, MixingCts] = {}
    unmixing: dict[int, UnmixingCts] = {}
    pmcf_ids: dict[int, int] = {}
    mix_ids: dict[int, dict[int, int]] = {}
    un_ids: dict[int, dict] = {}
    for c in tree.clusters:
        if c.is_leaf:
            continue
        rng = random.Random(config.seed * 7_919 + c.id)
        try:
            mix = build_mixing_cts(graph, tree, c.id, config, seed=config.seed * 1_000_003 + c.id)
            pid = registry.add_pmcf(mix.pmcf)
            un = build_unmixing_cts(graph, tree, c.id, mix.pmcf, pid, registry, config, rng)
        except (ValueError, ArithmeticError) as exc:
            raise SchemeError(str(exc), c.id) from exc
        mixing[c.id], unmixing[c.id], pmcf_ids[c.id] = mix, un, pid
        mix_ids[c.id] = {ch: registry.add_flow(ts) for ch, ts in mix.stage1.items() if ts is not None}
        un_ids[c.id] = {
            "stage1": {l: registry.add_flow(ts) for l, ts in un.stage1.items()},
            "stage3": {i: registry.add_flow(ts) for i, ts in un.stage3.items() if ts is not None},
            "stage4": {i: registry.add_flow(ts) for i, ts in un.stage4.items() if ts is not None},
        }
    labels = assign_labels(tree)
    tables = _tables(graph, tree, labels, registry, mixing, unmixing, pmcf_ids, mix_ids, un_ids)
    fmt = _header_format(graph, tree, registry, unmixing)
    budget = _header_budget(fmt, registry, unmixing)
    bundle = SchemeBundle(graph, tree, config, labels, tables, fmt, budget,
                          graph.n * (budget + 1) * config.step_factor, registry, mixing, unmixing)
    bundle.bits = [table_bits(bundle, t) for t in tables]
    bundle.report = build_report(bundle)
    return bundle


def _tables(graph, tree, labels, registry, mixing, unmixing, pmcf_ids, mix_ids, un_ids) -> list[NodeTable]:
    tables = []
    for v in range(graph.n):
        path = tree.path(v)
        recs = []
        for depth, cid in enumerate(path[:-1]):
            cw = tree.weights(cid)
            child = labels[v][depth]
            child_cid = path[depth + 1]
            un = unmixing[cid]
            cubes = {}
            for l, spec in un.cubes.items():
                own = spec.ids.get(v)
                if not own:
                    continue
                hops = {}
                for a in own:
                    for b in range(spec.dim):
                        g = un.hop_arc.get((l, a, b))
                        if g is not None:
                            hops[(a, b)] = un.arc_index[un.arc_list[g]]
                cubes[l] = CubeNodeRecord(spec.dim, tuple(own), hops)
            recs.append(ClusterRecord(
                cid, depth, child,
                tuple(sorted(cw.class_counts.items())), tuple(sorted(cw.norm_counts.items())),
                mix_ids[cid].get(child_cid), pmcf_ids[cid], dict(un_ids[cid]["stage1"]), cubes,
                un_ids[cid]["stage3"].get(child), un_ids[cid]["stage4"].get(child)))
        tables.append(NodeTable(v, graph.degree(v), labels[v], tuple(recs)))
    for fid, ts in enumerate(registry.flows):
        for v, rec in ts.records.items():
            tables[v].flows[fid] = rec
    for pid, p in enumerate(registry.pmcfs):
        for v in p.nodes:
            tables[v].pmcf[pid] = PmcfNodeRecord(p.N, p.R, p.slots(v),
                                                 tuple(rd.mu1.get(v, 0) for rd in p.rounds), p.ts_base)
    for cid, un in unmixing.items():
        if un.embedding is None:
            continue
        for (u, w), rec in zip(un.arc_list, un.embedding.initial):
            tables[u].arcs[(cid, un.arc_index[(u, w)])] = rec
        for z, entries in un.embedding.helpers.items():
            tables[z].helpers.update(entries)
    return tables


def _pid_bits(registry: Registry) -> dict[int, int]:
    return {i: p.pid_bits() for i, p in enumerate(registry.pmcfs)}


def _header_format(graph, tree, registry, unmixing) -> HeaderFormat:
    ts_bits = width(max(len(registry.flows), 1))
    token_bits = width(max((ts.total for ts in registry.flows), default=1) + 1)
    dims = [s.dim for un in unmixing.values() for s in un.cubes.values()]
    pid_bits = _pid_bits(registry)
    payload = 0
    for un in unmixing.values():
        if un.embedding is None:
            continue
        for a in un.embedding.arcs:
            payload = max(payload, arc_bits(a.record, pid_bits, ts_bits))
    return HeaderFormat(label_bits=label_bound(tree), depth_bits=width(tree.height),
                        ts_bits=ts_bits, token_bits=token_bits, pid_bits=pid_bits,
                        pmcf_bits=width(max(len(registry.pmcfs), 1)),
                        cube_bits=max(dims, default=1) + width(graph.n_class),
                        arc_payload_bits=payload)


def _header_budget(fmt: HeaderFormat, registry: Registry, unmixing) -> int:
    """Largest header the frame structure allows (stack layout is bounded)."""
    frame = 3
    pmcf = fmt.pmcf_bits + max(fmt.pid_bits.values(), default=0) + 16
    flow = fmt.ts_bits + fmt.token_bits
    top = fmt.label_bits + 2 * fmt.depth_bits + 1
    stage = 1 + fmt.depth_bits + 3
    cube = 4 * fmt.cube_bits + 1
    arc_leg = max(2 * (pmcf + frame), fmt.arc_payload_bits + frame, flow + frame) + flow + frame
    mix_leg = pmcf + flow + 2 * frame
    return 3 + top + frame + stage + frame + max(mix_leg, cube + frame + arc_leg)


def table_bits(bundle: SchemeBundle, t: NodeTable) -> int:
    fmt = bundle.fmt
    ts_bits = fmt.ts_bits
    total = sum(level_bits(bundle.tree, c) for c in bundle.tree.path(t.node)[:-1])
    port_bits = width(max(t.degree - 1, 0))
    for rec in t.clusters:
        total += width(bundle.tree.degree) + 3 * ts_bits + fmt.pmcf_bits
        total += (len(rec.class_counts) + len(rec.norm_counts)) * 2 * width(bundle.tree.degree) + 16
        total += len(rec.unmix1) * ts_bits
        arcs_here = max(1, sum(1 for k in t.arcs if k[0] == rec.cid))
        for cube in rec.cubes.values():
            total += cube.bits(width(arcs_here))
    for fid, rec in t.flows.items():
        total += ts_bits + rec.bits(fmt.token_bits, port_bits)
    for pid, rec in t.pmcf.items():
        total += fmt.pmcf_bits + rec.bits(ts_bits)
    for key, rec in t.arcs.items():
        total += width(key[1]) + arc_bits(rec, fmt.pid_bits, ts_bits)
    for (fwd, tok), h in t.helpers.items():
        total += ts_bits + fmt.token_bits + ts_bits + width(h.pid) + arc_bits(h.then, fmt.pid_bits, ts_bits)
    return total


def compactness(bundle: SchemeBundle) -> list[float]:
    g = bundle.graph
    denom = math.log2(max(g.n * g.W, 2)) ** 3
    return [b / ((g.degree(v) + 1) * denom) for v, b in enumerate(bundle.bits)]


def build_report(bundle: SchemeBundle) -> dict:
    tree = bundle.tree
    return {
        "n": bundle.graph.n,
        "m": bundle.graph.m,
        "W": bundle.graph.W,
        "tree": tree.summary(),
        "clusters": [
            {"id": cid, "C": tree.clusters[cid].C, "rounds": mix.pmcf.N,
             "pmcf_approx": mix.pmcf.approximation(), "pmcf_congestion": mix.pmcf.congestion(),
             "arcs": len(un.arc_list), "capacity_scale": un.capacity_scale,
             "embedding_congestion": un.embedding.congestion if un.embedding else 0.0}
            for cid, mix in sorted(bundle.mixing.items()) for un in [bundle.unmixing[cid]]
        ],
        "bits_per_node": list(bundle.bits),
        "header_budget": bundle.header_budget,
        "label_bits": [label_bits(tree, v) for v in range(bundle.graph.n)],
        "config": bundle.config.as_dict(),
    }


def info(bundle: SchemeBundle, max_header_bits: int | None = None) -> dict:
    return {
        "n": bundle.graph.n,
        "m": bundle.graph.m,
        "W": bundle.graph.W,
        "height": bundle.tree.height,
        "degT": bundle.tree.degree,
        "bits_per_node": list(bundle.bits),
        "max_header_bits": bundle.header_budget if max_header_bits is None else max_header_bits,
        "header_budget": bundle.header_budget,
        "label_bits": max(label_bits(bundle.tree, v) for v in range(bundle.graph.n)),
        "compactness": max(compactness(bundle)),
    }


# -- forwarding ---------------------------------------------------------------

@dataclass
class RouteResult:
    source: int
    target: int
    end: int
    edges: list[int]
    max_header_bits: int
    steps: int


def packet_rng(seed: int, pair: tuple[int, int], trial: int) -> random.Random:
    """Independent stream per packet so results do not depend on execution order."""
    ss = np.random.SeedSequence([seed, pair[0], pair[1], trial])
    return random.Random(int(ss.generate_state(1, dtype=np.uint64)[0]))


def forward(tables, graph: Graph, u: int, header: Header, rng: random.Random, bound: int,
            fmt: HeaderFormat | None = None):
    """Drive ``step`` hop by hop; returns (end node, edges, max header bits, steps)."""
    x = u
    edges = []
    peak = fmt.bits(header) if fmt else 0
    for steps in range(bound + 1):
        port, header = step(tables[x], header, rng)
        if fmt is not None:
            peak = max(peak, fmt.bits(header))
        if port is None:
            return x, edges, peak, steps
        if not 0 <= port < len(graph.adj[x]):
            raise RoutingFault(f"port {port} is not incident to node {x}")
        x, e = graph.adj[x][port]
        edges.append(e)
    raise RoutingFault(f"packet from {u} exceeded the step bound {bound}; last node {x}, "
                       f"last edges {edges[-10:]}")


def route(bundle: SchemeBundle, u: int, v: int, seed: int = 0, trial: int = 0,
          track_header: bool = True) -> RouteResult:
    if not (0 <= u < bundle.graph.n and 0 <= v < bundle.graph.n):
        raise SchemeError("node out of range")
    rng = packet_rng(seed, (u, v), trial)
    header = initial_header(bundle.tables[u], bundle.labels[v])
    end, edges, peak, steps = forward(bundle.tables, bundle.graph, u, header, rng, bundle.step_bound,
                                      bundle.fmt if track_header else None)
    return RouteResult(u, v, end, edges, peak, steps)


def route_label(bundle: SchemeBundle, u: int, label, seed: int = 0) -> RouteResult:
    """Route to a raw label (validated first)."""
    v = decode_label(bundle.tree, label)
    return route(bundle, u, v, seed)


def route_arc(bundle: SchemeBundle, cid: int, arc: tuple[int, int], seed: int = 0, trial: int = 0) -> RouteResult:
    """Forward one packet along an auxiliary arc of cluster ``cid``.

    The packet starts at the tail with only the arc record in its header and a
    routing frame that is already finished, so the step function faults unless
    the record brings the packet exactly to the head.
    """
    u, v = arc
    un = bundle.unmixing[cid]
    key = (cid, un.arc_index[(u, v)])
    rec = bundle.tables[u].arcs[key]
    label = bundle.labels[v]
    header = Header([Top(label, len(label), DOWN, len(label)), ArcFrame(rec)])
    rng = packet_rng(seed, (u, v), trial)
    end, edges, peak, steps = forward(bundle.tables, bundle.graph, u, header, rng, bundle.step_bound, bundle.fmt)
    return RouteResult(u, v, end, edges, peak, steps)


# -- serialization --------------------------------------------------------------

def save_bundle(bundle: SchemeBundle, path: str | Path) -> None:
    data = pickle.dumps(bundle, protocol=pickle.HIGHEST_PROTOCOL)
    Path(path).write_bytes(BUNDLE_MAGIC + BUNDLE_VERSION.to_bytes(2, "big") + data)


def load_bundle(path: str | Path) -> SchemeBundle:
    raw = Path(path).read_bytes()
    if not raw.startswith(BUNDLE_MAGIC):
        raise BundleFormatError(f"{path}: not a routing bundle")
    version = int.from_bytes(raw[len(BUNDLE_MAGIC):len(BUNDLE_MAGIC) + 2], "big")
    if version != BUNDLE_VERSION:
        raise BundleFormatError(f"{path}: unsupported bundle version {version}")
    bundle = pickle.loads(raw[len(BUNDLE_MAGIC) + 2:])
    if not isinstance(bundle, SchemeBundle):
        raise BundleFormatError(f"{path}: unexpected payload")
    return bundle
