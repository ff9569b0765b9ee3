"""Per-class hypercube over a cluster's children and the unmixing scheme.

Every class-l child S_i owns a contiguous range of ||S_i|| cube ids, handed to
its nodes in proportion to out^{(l)}_{S_i} / 2^l.  Unused ids up to the next
power of two are spread over all class-l nodes.  Packets cross the cube by
bit-fixing in ascending bit order, first to a uniformly random intermediate id
and then to a uniformly random id of the target child.  A cube edge between ids
of the same node is free; any other cube edge is an arc of the auxiliary graph
that the general embedding realises.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import Config
from .decomposition import ClusterWeights, DecompositionTree
from .embedding import Embedding, audit_storage, check_demands, embed_graph, sample_budget
from .flows import DeterministicTS, route_similar
from .graph import Graph
from .pmcf import PmcfCts
from .records import Registry

logger = logging.getLogger(__name__)


class CubeError(ValueError):
    pass


def cube_dimension(total: int) -> int:
    """Smallest d with 2^d >= total."""
    d = 0
    while (1 << d) < total:
        d += 1
    return d


def bit_fixing(x: int, y: int, dim: int) -> list[tuple[int, int]]:
    """(id, bit) hops taken from x to y, fixing bits in ascending order."""
    hops = []
    cur = x
    for b in range(dim):
        if (cur ^ y) >> b & 1:
            hops.append((cur, b))
            cur ^= 1 << b
    return hops


@dataclass
class CubeSpec:
    cls: int
    dim: int
    ranges: dict[int, tuple[int, int]]  # child index -> (first id, size)
    owner: np.ndarray                   # id -> node
    ids: dict[int, list[int]]           # node -> owned ids (sorted)
    base: dict[int, int]                # node -> out^{(l)}_{S_i}(v) / 2^l

    @property
    def size(self) -> int:
        return 1 << self.dim


def build_cube_spec(cw: ClusterWeights, tree: DecompositionTree, l: int) -> CubeSpec:
    children = [c for c in cw.children if c.cls == l]
    total = sum(c.norm for c in children)
    dim = cube_dimension(total)
    owner = np.full(1 << dim, -1, dtype=np.int64)
    base: dict[int, int] = {}
    ranges: dict[int, tuple[int, int]] = {}
    for info in children:
        cl, first, size = cw.child_range(info.index)
        assert cl == l
        ranges[info.index] = (first, size)
        k = {v: x >> l for v, x in sorted(info.out_by_class[l].items())}
        base.update(k)
        nxt = first
        for v, kv in k.items():
            owner[nxt:nxt + kv] = v
            nxt += kv
        # surplus inside the range: at most k_v more per node
        left = first + size - nxt
        for v, kv in k.items():
            take = min(kv, left)
            owner[nxt:nxt + take] = v
            nxt += take
            left -= take
        if left:
            raise CubeError(f"child {info.index} cannot absorb its surplus ids")
    # ids beyond the last range: at most 2 k_v more per node
    nxt = total
    left = (1 << dim) - total
    for v, kv in sorted(base.items()):
        take = min(2 * kv, left)
        owner[nxt:nxt + take] = v
        nxt += take
        left -= take
    if left:
        raise CubeError("cannot place the global surplus ids")
    ids: dict[int, list[int]] = {}
    for x, v in enumerate(owner.tolist()):
        ids.setdefault(v, []).append(x)
    return CubeSpec(l, dim, ranges, owner, ids, base)


def phase_loads(dim: int, start: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Expected load on each directed cube edge (id, bit) for a two-phase route.

    ``start`` is mass per id; phase one goes to a uniform intermediate id, phase
    two from there to ids drawn from ``target`` (a distribution, scaled by the
    total start mass).
    """
    size = 1 << dim
    total = float(start.sum())
    ids = np.arange(size)
    out = np.zeros((size, max(dim, 1)))
    for b in range(dim):
        # phase 1: sources sharing bits >= b with the current id
        groups = np.bincount(ids >> b, weights=start, minlength=size >> b)
        out[:, b] += groups[ids >> b] * 2.0 ** (-b - 1)
        # phase 2: targets sharing bits < b and differing in bit b
        mask = (1 << (b + 1)) - 1
        key = ids & mask
        q = np.bincount(key, weights=target, minlength=1 << (b + 1))
        want = (ids & ((1 << b) - 1)) | ((~ids >> b & 1) << b)
        out[:, b] += total * q[want] * 2.0 ** b / size
    return out[:, :dim] if dim else np.zeros((size, 0))


def valiant_loads(dim: int, demands) -> np.ndarray:
    """Expected undirected load on cube edge (id, bit), id < id ^ bit, for two-phase bit-fixing.

    ``demands`` maps (x, y) id pairs to amounts; every source goes through a
    uniform intermediate id.  Rows for ids with the bit set are left zero.
    """
    size = 1 << dim
    by_src: dict[int, np.ndarray] = {}
    for (x, y), d in demands.items():
        if not (0 <= x < size and 0 <= y < size):
            raise CubeError(f"pair ({x},{y}) outside the {dim}-cube")
        if float(d) > 0:
            by_src.setdefault(x, np.zeros(size))[y] += float(d)
    directed = np.zeros((size, dim))
    for x, tgt in by_src.items():
        start = np.zeros(size)
        start[x] = tgt.sum()
        directed += phase_loads(dim, start, tgt / tgt.sum())
    ids = np.arange(size)
    out = np.zeros((size, dim))
    for b in range(dim):
        low = (ids >> b & 1) == 0
        out[low, b] = directed[low, b] + directed[ids[low] ^ (1 << b), b]
    return out


def cube_product_demands(dim: int) -> dict[tuple[int, int], float]:
    """Product flow with unit weight per cube id: 2^-dim between every ordered pair."""
    size = 1 << dim
    return {(x, y): 1.0 / size for x in range(size) for y in range(size) if x != y}


@dataclass
class UnmixingCts:
    """(1) w_S -> maj^{(l)}, (2) hypercube, (3) out^{(l)}_{S_i} -> out_{S_i}, (4) out_{S_i} -> w_{S_i}."""

    cluster: int
    stage1: dict[int, DeterministicTS]            # class -> scheme on S
    cubes: dict[int, CubeSpec]                    # class -> cube
    arc_list: list[tuple[int, int]]               # global arc number -> (tail, head)
    arc_index: dict[tuple[int, int], int]         # (tail, head) -> index among the tail's arcs
    hop_arc: dict[tuple[int, int, int], int]      # (class, id, bit) -> global arc number
    embedding: Embedding | None
    stage3: dict[int, DeterministicTS | None]     # child index -> scheme on S_i
    stage4: dict[int, DeterministicTS | None]     # child index -> scheme on S_i
    arc_demand: dict[tuple[int, int], Fraction] = field(default_factory=dict)
    capacity_scale: float = 1.0


def cube_arc_demands(cw: ClusterWeights, cubes: dict[int, CubeSpec]) -> dict[tuple[int, int], float]:
    """Aggregate expected cube-edge loads (in mass) onto node pairs."""
    demand: dict[tuple[int, int], float] = {}
    for l, spec in cubes.items():
        children = [c for c in cw.children if c.cls == l]
        mass = float(sum(c.total for c in children))
        maj = cw.maj.get(l, {})
        maj_total = float(sum(maj.values()))
        start = np.zeros(spec.size)
        for v, x in maj.items():
            own = spec.ids[v]
            start[own] += mass * x / maj_total / len(own)
        target = np.zeros(spec.size)
        for c in children:
            first, size = spec.ranges[c.index]
            target[first:first + size] = c.total / size / mass
        loads = phase_loads(spec.dim, start, target)
        owner = spec.owner
        for b in range(spec.dim):
            nb = np.arange(spec.size) ^ (1 << b)
            for a in np.nonzero(owner != owner[nb])[0].tolist():
                key = (int(owner[a]), int(owner[nb[a]]))
                demand[key] = demand.get(key, 0.0) + float(loads[a, b])
    return demand


def build_unmixing_cts(graph: Graph, tree: DecompositionTree, cid: int, pmcf: PmcfCts, pmcf_id: int,
                       registry: Registry, config: Config, rng: random.Random) -> UnmixingCts:
    cluster = tree.clusters[cid]
    cw = tree.weights(cid)
    C = cluster.C or None
    classes = sorted(cw.maj)
    stage1 = {l: route_similar(graph, cw.w, cw.maj[l], cluster.nodes, c=cw.w, C=C) for l in classes}
    cubes = {l: build_cube_spec(cw, tree, l) for l in classes}
    demand = cube_arc_demands(cw, cubes)
    arc_list = sorted(k for k, x in demand.items() if x > 0)
    arc_global = {k: i for i, k in enumerate(arc_list)}
    arc_index: dict[tuple[int, int], int] = {}
    per_tail: dict[int, int] = {}
    for u, v in arc_list:
        arc_index[(u, v)] = per_tail.get(u, 0)
        per_tail[u] = per_tail.get(u, 0) + 1
    hop_arc: dict[tuple[int, int, int], int] = {}
    for l, spec in cubes.items():
        owner = spec.owner
        for b in range(spec.dim):
            for a in range(spec.size):
                u, v = int(owner[a]), int(owner[a ^ (1 << b)])
                if u != v:
                    hop_arc[(l, a, b)] = arc_global[(u, v)]
    arcs = [(u, v, Fraction(demand[(u, v)])) for u, v in arc_list]
    emb = None
    scale = 1.0
    if arcs:
        scale = max(1.0, check_demands(arcs, cw.w, math.inf))
        samples = sample_budget(graph.n_class, len(cluster.nodes), config.sample_factor)
        emb = embed_graph(graph, pmcf, pmcf_id, arcs, cw.w, registry, rng, samples,
                          config.rounding_retries, capacity_scale=scale)
        audit_storage(emb, registry, graph, max(cluster.C, 1.0), config.c2)
    stage3: dict[int, DeterministicTS | None] = {}
    stage4: dict[int, DeterministicTS | None] = {}
    for info in cw.children:
        child = tree.clusters[info.cluster]
        if child.is_leaf:
            stage3[info.index] = stage4[info.index] = None
            continue
        stage3[info.index] = route_similar(graph, info.out_by_class[info.cls], info.out, child.nodes,
                                           c=info.out)
        w_child = tree.weights(info.cluster).w
        stage4[info.index] = route_similar(graph, info.out, w_child, child.nodes, c=w_child,
                                           C=child.C or None)
    return UnmixingCts(cid, stage1, cubes, arc_list, arc_index, hop_arc, emb, stage3, stage4,
                       {k: Fraction(x) for k, x in demand.items()}, scale)
