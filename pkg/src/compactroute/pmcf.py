"""Product-flow routing by a cut-matching random walk, and the mixing scheme.

Every node x of a cluster owns 2n*c(x) virtual nodes.  In each round a cut
player splits the virtual nodes in half; a single-commodity flow from one half
to the other (and its reverse) realises a bijection between the halves.  A
packet walks for N rounds: each round it either stays or, with probability 1/2,
picks one of its node's virtual slots and follows the corresponding token of
the round's flow scheme.  The random choices are packed into a path id of N
values in [0, 2R): values >= R mean "move" with slot index (value - R + 1) mod
2n*c(x).
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .config import Config
from .flows import DeterministicTS, build_flow_ts, integralize_acyclic, min_congestion_flow, reverse_ts, route_similar
from .graph import Graph

logger = logging.getLogger(__name__)


class PmcfError(ValueError):
    pass


@dataclass
class PmcfRound:
    mu1: dict[int, int]
    mu2: dict[int, int]
    ts1: DeterministicTS
    ts2: DeterministicTS
    dest: dict[int, np.ndarray]  # node -> end node (local index) of every slot

    def slot(self, x: int, i: int) -> tuple[DeterministicTS, int, int]:
        """(scheme, index 0/1, path id) used by slot ``i`` at node ``x``."""
        m1 = self.mu1.get(x, 0)
        if i < m1:
            return self.ts1, 0, i + 1
        return self.ts2, 1, i - m1 + 1


def virtual_split(order: list[int], slots: dict[int, int]) -> tuple[dict[int, int], dict[int, int]]:
    """Fill the first half of the virtual nodes following ``order``."""
    half = sum(slots.values()) // 2
    mu1, mu2 = {}, {}
    left = half
    for x in order:
        take = min(slots[x], left)
        left -= take
        if take:
            mu1[x] = take
        if slots[x] - take:
            mu2[x] = slots[x] - take
    return mu1, mu2


class PmcfCts:
    """Deterministic product-flow scheme on cluster ``nodes`` with weights ``c``."""

    def __init__(self, graph: Graph, nodes: list[int], c: dict[int, int], rounds: list[PmcfRound]):
        self.graph = graph
        self.nodes = sorted(nodes)
        self.idx = {v: i for i, v in enumerate(self.nodes)}
        self.c = c
        self.n = len(self.nodes)
        self.cV = sum(c.values())
        self.rounds = rounds
        self._path_cache: dict[tuple[int, int, int], tuple[int, tuple[int, ...]]] = {}
        self._beta: dict[int, list[np.ndarray]] = {}
        self._kernel = None
        self.ts_base: int | None = None  # set when registered

    # -- layout -------------------------------------------------------------
    @property
    def N(self) -> int:
        return len(self.rounds)

    @property
    def R(self) -> int:
        return 2 * self.n * self.n * self.cV * self.N

    @property
    def virtual(self) -> int:
        return 2 * self.n * self.cV

    def slots(self, x: int) -> int:
        return 2 * self.n * self.c.get(x, 0)

    def pid_bits(self) -> int:
        return self.N * (1 + max(1, math.ceil(math.log2(self.R))))

    def slot_weights(self, x: int, R: int | None = None) -> np.ndarray:
        """Number of i' in [1, R] with i' mod s == i, for every slot i."""
        R = self.R if R is None else R
        s = self.slots(x)
        q, rem = divmod(R, s)
        w = np.full(s, q, dtype=np.int64)
        w[1:rem + 1] += 1
        return w

    def decode(self, x: int, value: int) -> int | None:
        """Slot chosen by one round value at node ``x``; None means stay."""
        s = self.slots(x)
        if value < self.R or s == 0:
            return None
        return (value - self.R + 1) % s

    # -- exact kernels --------------------------------------------------------
    def round_matrix(self, r: int, R: int | None = None) -> np.ndarray:
        k = self.n
        P = np.zeros((k, k))
        R = self.R if R is None else R
        for x, d in self.rounds[r].dest.items():
            i = self.idx[x]
            w = self.slot_weights(x, R).astype(float)
            P[i] += 0.5 * np.bincount(d, weights=w, minlength=k) / R
            P[i, i] += 0.5
        for x in self.nodes:
            if self.c.get(x, 0) == 0:
                P[self.idx[x], self.idx[x]] = 1.0
        return P

    def round_loads(self, r: int) -> np.ndarray:
        """Expected edge traversals of one round per start node (rows local)."""
        L = np.zeros((self.n, self.graph.m))
        R = self.R
        rd = self.rounds[r]
        for x in rd.dest:
            s = self.slots(x)
            q, rem = divmod(R, s)
            m1 = rd.mu1.get(x, 0)
            row = L[self.idx[x]]
            parts = [(rd.ts1, 1, m1, q), (rd.ts2, 1, s - m1, q)]
            # slots 1..rem carry one extra value each
            if rem:
                a, b = 1, rem
                if a <= m1 - 1:
                    parts.append((rd.ts1, a + 1, min(b, m1 - 1) + 1, 1))
                if b >= m1:
                    lo = max(a, m1)
                    parts.append((rd.ts2, lo - m1 + 1, b - m1 + 1, 1))
            for ts, lo, hi, weight in parts:
                if hi < lo or weight == 0:
                    continue
                _, loads = ts.trace(x, (lo, hi))
                for e, cnt in loads.items():
                    row[e] += 0.5 * weight * cnt / R
        return L

    def kernel(self) -> tuple[np.ndarray, np.ndarray]:
        """(T, L): end-node distribution and expected edge loads per start node."""
        if self._kernel is None:
            T = np.eye(self.n)
            L = np.zeros((self.n, self.graph.m))
            for r in range(self.N):
                L += T @ self.round_loads(r)
                T = T @ self.round_matrix(r)
            self._kernel = (T, L)
        return self._kernel

    def target(self) -> np.ndarray:
        return np.array([self.c.get(v, 0) for v in self.nodes], dtype=float) / self.cV

    def approximation(self) -> float:
        T, _ = self.kernel()
        cbar = self.target()
        worst = 1.0
        for v in self.nodes:
            if self.c.get(v, 0) == 0:
                continue
            row = T[self.idx[v]]
            ratio = row[cbar > 0] / cbar[cbar > 0]
            worst = max(worst, float(ratio.max()), float(1 / max(ratio.min(), 1e-300)))
        return worst

    def congestion(self) -> float:
        """Congestion when every node v injects c(v) packets."""
        _, L = self.kernel()
        weights = np.array([self.c.get(v, 0) for v in self.nodes], dtype=float)
        load = weights @ L
        caps = np.array([e.capacity for e in self.graph.edges], dtype=float)
        return float(np.max(load / caps)) if self.graph.m else 0.0

    # -- replay and sampling --------------------------------------------------
    def slot_path(self, r: int, x: int, i: int) -> tuple[int, tuple[int, ...]]:
        key = (r, x, i)
        hit = self._path_cache.get(key)
        if hit is None:
            ts, _, pid = self.rounds[r].slot(x, i)
            end, edges = ts.run(x, pid)
            hit = (end, tuple(edges))
            self._path_cache[key] = hit
        return hit

    def replay(self, x: int, pid: tuple[int, ...]) -> tuple[int, list[int]]:
        """Deterministic path of path id ``pid`` from ``x``: (end node, edges)."""
        if len(pid) != self.N:
            raise PmcfError("path id has the wrong number of rounds")
        edges: list[int] = []
        for r, value in enumerate(pid):
            if not 0 <= value < 2 * self.R:
                raise PmcfError("path id value out of range")
            i = self.decode(x, value)
            if i is None:
                continue
            x, path = self.slot_path(r, x, i)
            edges.extend(path)
        return x, edges

    def sample_pid(self, rng: random.Random) -> tuple[int, ...]:
        top = 2 * self.R
        return tuple(rng.randrange(top) for _ in range(self.N))

    def _backward(self, w: int) -> list[np.ndarray]:
        if w not in self._beta:
            beta = [None] * (self.N + 1)
            b = np.zeros(self.n)
            b[self.idx[w]] = 1.0
            beta[self.N] = b
            for r in range(self.N - 1, -1, -1):
                b = self.round_matrix(r) @ b
                beta[r] = b
            self._beta[w] = beta
        return self._beta[w]

    def sample_pid_to(self, rng: random.Random, x: int, w: int) -> tuple[int, ...]:
        """Uniform path id among those from ``x`` that end at ``w``."""
        beta = self._backward(w)
        if beta[0][self.idx[x]] <= 0:
            raise PmcfError(f"no path id leads from {x} to {w}")
        R = self.R
        pid = []
        cur = x
        for r in range(self.N):
            nxt = beta[r + 1]
            stay = R * nxt[self.idx[cur]]
            d = self.rounds[r].dest.get(cur)
            if d is None:
                pid.append(rng.randrange(R))
                continue
            sw = self.slot_weights(cur, R)
            wts = sw * nxt[d]
            total = stay + float(wts.sum())
            u = rng.random() * total
            if u < stay:
                pid.append(rng.randrange(R))
                continue
            cum = np.cumsum(wts)
            i = int(np.searchsorted(cum, u - stay, side="right"))
            i = min(i, len(cum) - 1)
            while wts[i] == 0:
                i -= 1
            s = self.slots(cur)
            j = rng.randrange(int(sw[i]))
            ip = i + j * s if i >= 1 else s * (j + 1)
            pid.append(R + ip - 1)
            cur = self.nodes[int(d[i])]
        if cur != w:
            raise PmcfError("conditioned walk missed its target")
        return tuple(pid)


def potential(D: np.ndarray, slots: np.ndarray) -> float:
    """Sum over virtual nodes of the squared distance to the uniform walk."""
    V = slots.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(slots > 0, D / np.maximum(slots, 1), 0.0)
    dev = (per - 1.0 / V) ** 2 * slots[None, :]
    return float((dev.sum(axis=1) * slots).sum())


def _round_from_split(graph: Graph, nodes: list[int], idx: dict[int, int],
                      mu1: dict[int, int], mu2: dict[int, int]) -> PmcfRound:
    f = min_congestion_flow(graph, mu1, mu2, nodes)
    ts1 = build_flow_ts(integralize_acyclic(f, mu1, mu2), mu1, mu2)
    ts2 = reverse_ts(ts1)
    dest = {}
    for x in set(mu1) | set(mu2):
        s = mu1.get(x, 0) + mu2.get(x, 0)
        d = np.empty(s, dtype=np.int64)
        m1 = mu1.get(x, 0)
        for ts, base, count in ((ts1, 0, m1), (ts2, m1, mu2.get(x, 0))):
            if not count:
                continue
            off = ts.records[x].offset
            for lo, hi, end in ts.end_ranges(x):
                d[base + lo - off - 1: base + hi - off] = idx[end]
        dest[x] = d
    return PmcfRound(mu1, mu2, ts1, ts2, dest)


def build_pmcf_cts(graph: Graph, nodes, c: Mapping[int, object], config: Config | None = None,
                   seed: int = 0) -> PmcfCts:
    """Play the cut-matching game until every source is mixed (or the round cap)."""
    config = config or Config()
    nodes = sorted(nodes)
    cw = {v: int(c.get(v, 0)) for v in nodes if c.get(v, 0)}
    if not cw:
        raise PmcfError("weight function is zero on the cluster")
    for v, x in c.items():
        if Fraction(x).denominator != 1:
            raise PmcfError("weights must be integral")
    n = len(nodes)
    idx = {v: i for i, v in enumerate(nodes)}
    slots = {v: 2 * n * x for v, x in cw.items()}
    slot_vec = np.array([slots.get(v, 0) for v in nodes], dtype=float)
    V = int(slot_vec.sum())
    n_max = max(1, math.ceil(config.kappa * math.log2(V) ** 2))
    rng = np.random.default_rng([seed, n, V])
    cts = PmcfCts(graph, nodes, cw, [])
    cbar = slot_vec / V
    tol = config.mix_slack / n
    D = np.eye(n)
    while True:
        best = None
        for _ in range(max(1, config.cut_candidates)):
            # a new round averages positions (columns of D), so the cut splits
            # positions by the per-slot mass they hold of a random source mix
            g = rng.standard_normal(n) * np.sqrt(slot_vec)
            proj = (g @ D) / np.maximum(slot_vec, 1)
            order = sorted(cw, key=lambda v: (proj[idx[v]], v))
            mu1, mu2 = virtual_split(order, slots)
            rd = _round_from_split(graph, nodes, idx, mu1, mu2)
            if config.cut_candidates > 1:
                cts.rounds.append(rd)
                Dn = D @ cts.round_matrix(len(cts.rounds) - 1)
                cts.rounds.pop()
                score = potential(Dn, slot_vec)
            else:
                score = 0.0
            if best is None or score < best[0]:
                best = (score, rd)
        cts.rounds.append(best[1])
        # the slot skew depends on R, which grows with the round count
        D = np.eye(n)
        for r in range(cts.N):
            D = D @ cts.round_matrix(r)
        rows = [idx[v] for v in cw]
        ratio = D[rows][:, cbar > 0] / cbar[cbar > 0]
        if float(np.max(np.abs(ratio - 1))) <= tol:
            break
        if cts.N >= n_max:
            logger.warning("cut-matching stopped at the round cap %d before mixing (dev %.3g)",
                           n_max, float(np.max(np.abs(ratio - 1))))
            break
    cts._kernel = None
    return cts


@dataclass
class MixingCts:
    """Stage 1: child-internal routing w_{S_i} -> out_{S_i}; stage 2: product walk."""

    cluster: int
    stage1: dict[int, DeterministicTS | None]  # child cluster -> scheme (None for leaves)
    pmcf: PmcfCts
    congestion: float = 0.0


def build_mixing_cts(graph: Graph, tree, cid: int, config: Config | None = None, seed: int = 0) -> MixingCts:
    config = config or Config()
    cw = tree.weights(cid)
    stage1: dict[int, DeterministicTS | None] = {}
    for info in cw.children:
        child = tree.clusters[info.cluster]
        if child.is_leaf:
            stage1[info.cluster] = None
            continue
        w_child = tree.weights(info.cluster).w
        stage1[info.cluster] = route_similar(graph, w_child, info.out, child.nodes, c=w_child, C=child.C or None)
    pmcf = build_pmcf_cts(graph, tree.clusters[cid].nodes, cw.w, config, seed)
    return MixingCts(cid, stage1, pmcf, pmcf.congestion())
