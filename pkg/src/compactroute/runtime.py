"""Per-node routing tables and the local step function.

``step`` sees only the table of the node the packet is at and the packet
header.  The header is a stack of frames; the bottom frame holds the target
label and the position in the up/down walk over the decomposition tree, the
frames above it describe the sub-scheme currently executing.  Internal
transitions (stage changes, staying in place) are resolved inside one call
until an outgoing port is chosen or the packet has arrived.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .bits import width
from .decomposition import child_range_from_counts
from .flows import FlowRecord
from .records import ArcRecord, HelperEntry, NullArc, PathArc, SplitArc, arc_bits


class RoutingFault(RuntimeError):
    """Malformed header or table lookup failure during forwarding."""


# -- table records ------------------------------------------------------------

@dataclass(frozen=True)
class PmcfNodeRecord:
    N: int
    R: int
    slots: int
    mu1: tuple[int, ...]   # slots of this node in the first half, per round
    base: int              # flow id of round 0's forward scheme

    def bits(self, ts_bits: int) -> int:
        return width(self.N) + width(self.R) + width(self.slots) + self.N * width(self.slots) + ts_bits


@dataclass(frozen=True)
class CubeNodeRecord:
    dim: int
    ids: tuple[int, ...]
    hops: dict  # (id, bit) -> local arc index; missing means the neighbour id is local

    def bits(self, arc_bits_: int) -> int:
        d = max(self.dim, 1)
        return width(d) + width(len(self.ids)) + len(self.ids) * d + len(self.hops) * (2 * d + arc_bits_)


@dataclass(frozen=True)
class ClusterRecord:
    cid: int
    depth: int
    child: int                               # index of the child holding this node
    class_counts: tuple[tuple[int, int], ...]
    norm_counts: tuple[tuple[tuple[int, int], int], ...]
    mix1: int | None                         # own child: w -> out scheme
    pmcf: int
    unmix1: dict                             # class -> scheme id
    cubes: dict                              # class -> CubeNodeRecord
    unmix3: int | None                       # own child: out^{(l)} -> out
    unmix4: int | None                       # own child: out -> w

    def child_range(self, index: int) -> tuple[int, int, int]:
        return child_range_from_counts(dict(self.class_counts), dict(self.norm_counts), index)


@dataclass
class NodeTable:
    node: int
    degree: int
    label: tuple[int, ...]
    clusters: tuple[ClusterRecord, ...]      # by depth along the root-to-leaf path
    flows: dict[int, FlowRecord] = field(default_factory=dict)
    pmcf: dict[int, PmcfNodeRecord] = field(default_factory=dict)
    arcs: dict[tuple[int, int], ArcRecord] = field(default_factory=dict)   # (cluster, arc index)
    helpers: dict[tuple[int, int], HelperEntry] = field(default_factory=dict)


# -- header frames --------------------------------------------------------------

UP, DOWN = 0, 1


class Top:
    __slots__ = ("target", "lca", "phase", "level")

    def __init__(self, target, lca, phase, level):
        self.target, self.lca, self.phase, self.level = target, lca, phase, level


class Stage:
    """Mixing (down=False) or unmixing (down=True) at one tree depth."""
    __slots__ = ("down", "depth", "stage")

    def __init__(self, down, depth):
        self.down, self.depth, self.stage = down, depth, 0


class FlowFrame:
    __slots__ = ("ts", "token")

    def __init__(self, ts, token):
        self.ts, self.token = ts, token


class PmcfFrame:
    __slots__ = ("pmcf", "pid", "r")

    def __init__(self, pmcf, pid):
        self.pmcf, self.pid, self.r = pmcf, pid, 0


class CubeFrame:
    __slots__ = ("cid", "depth", "cls", "cur", "mid", "dst", "phase")

    def __init__(self, cid, depth, cls, cur, mid, dst):
        self.cid, self.depth, self.cls = cid, depth, cls
        self.cur, self.mid, self.dst, self.phase = cur, mid, dst, 0


class ArcFrame:
    """Pending arc record (the anticipative payload when carried across nodes)."""
    __slots__ = ("record",)

    def __init__(self, record):
        self.record = record


class HelperFrame:
    __slots__ = ("fwd", "token")

    def __init__(self, fwd, token):
        self.fwd, self.token = fwd, token


class Header:
    __slots__ = ("stack",)

    def __init__(self, stack):
        self.stack = stack


@dataclass(frozen=True)
class HeaderFormat:
    """Field widths used to count header bits."""

    label_bits: int
    depth_bits: int
    ts_bits: int
    token_bits: int
    pid_bits: dict
    pmcf_bits: int
    cube_bits: int
    arc_payload_bits: int

    def frame_bits(self, f) -> int:
        if isinstance(f, Top):
            return self.label_bits + 2 * self.depth_bits + 1
        if isinstance(f, Stage):
            return 1 + self.depth_bits + 3
        if isinstance(f, FlowFrame):
            return self.ts_bits + self.token_bits
        if isinstance(f, PmcfFrame):
            return self.pmcf_bits + self.pid_bits[f.pmcf] + width(len(f.pid))
        if isinstance(f, CubeFrame):
            return 4 * self.cube_bits + 1
        if isinstance(f, ArcFrame):
            return arc_bits(f.record, self.pid_bits, self.ts_bits)
        if isinstance(f, HelperFrame):
            return self.ts_bits + self.token_bits
        raise RoutingFault(f"unknown frame {f!r}")

    def bits(self, header: Header) -> int:
        return 3 + sum(self.frame_bits(f) + 3 for f in header.stack)


def initial_header(table: NodeTable, target_label) -> Header:
    """Header a source node writes for a packet to the node labelled ``target_label``."""
    target = tuple(target_label)
    own = table.label
    k = 0
    while k < len(own) and k < len(target) and own[k] == target[k]:
        k += 1
    if target == own:
        return Header([Top(target, k, DOWN, len(target))])
    return Header([Top(target, k, UP, len(own) - 1)])


def _pick(table: NodeTable, ts: int, rng: random.Random) -> FlowFrame:
    rec = table.flows.get(ts)
    if rec is None or rec.count == 0:
        raise RoutingFault(f"node {table.node} holds no path ids of scheme {ts}")
    return FlowFrame(ts, rec.offset + 1 + int(rng.random() * rec.count))


def step(table: NodeTable, header: Header, rng: random.Random):
    """Advance the packet at ``table.node``: returns (port or None, header)."""
    stack = header.stack
    if not stack or not isinstance(stack[0], Top):
        raise RoutingFault("header has no routing frame")
    while True:
        f = stack[-1]
        kind = type(f)
        if kind is FlowFrame:
            rec = table.flows.get(f.ts)
            if rec is None:
                stack.pop()
                continue
            port = rec.next_port(f.token)
            if port is None:
                stack.pop()
                continue
            return port, header
        if kind is PmcfFrame:
            prec = table.pmcf.get(f.pmcf)
            if prec is None:
                raise RoutingFault(f"node {table.node} has no product-walk record {f.pmcf}")
            if f.r >= prec.N:
                stack.pop()
                continue
            r = f.r
            value = f.pid[r]
            f.r = r + 1
            if value < prec.R or prec.slots == 0:
                continue
            i = (value - prec.R + 1) % prec.slots
            m1 = prec.mu1[r]
            if i < m1:
                ts, pid = prec.base + 2 * r, i + 1
            else:
                ts, pid = prec.base + 2 * r + 1, i - m1 + 1
            frec = table.flows[ts]
            stack.append(FlowFrame(ts, frec.offset + pid))
            continue
        if kind is CubeFrame:
            crec = table.clusters[f.depth].cubes[f.cls]
            goal = f.mid if f.phase == 0 else f.dst
            diff = f.cur ^ goal
            if diff == 0:
                if f.phase == 0:
                    f.phase = 1
                    continue
                stack.pop()
                continue
            b = (diff & -diff).bit_length() - 1
            arc = crec.hops.get((f.cur, b))
            f.cur ^= 1 << b
            if arc is None:
                continue
            stack.append(ArcFrame(table.arcs[(f.cid, arc)]))
            continue
        if kind is ArcFrame:
            rec = f.record
            stack.pop()
            rk = type(rec)
            if rk is PathArc:
                stack.append(PmcfFrame(rec.pmcf, rec.pid2))
                stack.append(PmcfFrame(rec.pmcf, rec.pid1))
            elif rk is SplitArc:
                total = rec.residual + rec.large
                if rec.path is not None and rng.random() * float(total) < float(rec.residual):
                    stack.append(ArcFrame(rec.path))
                else:
                    pid = rec.lo + int(rng.random() * (rec.hi - rec.lo + 1))
                    token = table.flows[rec.fwd].offset + pid
                    stack.append(HelperFrame(rec.fwd, token))
                    stack.append(FlowFrame(rec.fwd, token))
            elif rk is not NullArc:
                raise RoutingFault(f"unknown arc record {rec!r}")
            continue
        if kind is HelperFrame:
            entry = table.helpers.get((f.fwd, f.token))
            if entry is None:
                raise RoutingFault(f"node {table.node} has no helper entry for token {f.token}")
            stack.pop()
            # the continuation rides in the header to wherever the reverse leg ends
            stack.append(ArcFrame(entry.then))
            stack.append(FlowFrame(entry.rev, table.flows[entry.rev].offset + entry.pid))
            continue
        if kind is Stage:
            if _advance_stage(table, f, stack, rng):
                stack.pop()
            continue
        if kind is Top:
            if f.phase == UP:
                if f.level < f.lca:
                    f.phase, f.level = DOWN, f.lca
                    continue
                stack.append(Stage(False, f.level))
                f.level -= 1
                continue
            if f.level >= len(f.target):
                if len(stack) != 1:
                    raise RoutingFault("header finished with pending frames")
                if tuple(f.target) != table.label:
                    raise RoutingFault(f"packet for {f.target} ended at node {table.node}")
                return None, header
            stack.append(Stage(True, f.level))
            f.level += 1
            continue
        raise RoutingFault(f"unknown frame {f!r}")


def _advance_stage(table: NodeTable, f: Stage, stack: list, rng: random.Random) -> bool:
    """Push the next sub-scheme of a stage; True when the stage is complete."""
    if f.depth >= len(table.clusters):
        raise RoutingFault(f"node {table.node} has no cluster at depth {f.depth}")
    rec = table.clusters[f.depth]
    s = f.stage
    f.stage = s + 1
    if not f.down:
        if s == 0:
            if rec.mix1 is not None:
                stack.append(_pick(table, rec.mix1, rng))
            return False
        if s == 1:
            prec = table.pmcf[rec.pmcf]
            top = 2 * prec.R
            stack.append(PmcfFrame(rec.pmcf, tuple(int(rng.random() * top) for _ in range(prec.N))))
            return False
        return True
    target = stack[0].target[f.depth]
    cls, first, size = rec.child_range(target)
    if s == 0:
        stack.append(_pick(table, rec.unmix1[cls], rng))
        return False
    if s == 1:
        cube = rec.cubes.get(cls)
        if cube is None or not cube.ids:
            raise RoutingFault(f"node {table.node} owns no class-{cls} cube ids")
        x = cube.ids[int(rng.random() * len(cube.ids))]
        z = int(rng.random() * (1 << cube.dim))
        y = first + int(rng.random() * size)
        stack.append(CubeFrame(rec.cid, f.depth, cls, x, z, y))
        return False
    if s == 2:
        if rec.child != target:
            raise RoutingFault(f"cube delivered to node {table.node} outside child {target}")
        if rec.unmix3 is not None:
            stack.append(_pick(table, rec.unmix3, rng))
        return False
    if s == 3:
        if rec.unmix4 is not None:
            stack.append(_pick(table, rec.unmix4, rng))
        return False
    return True
