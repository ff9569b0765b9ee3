"""Plain-data records stored in routing tables, plus the build-time registry.

Records only hold numbers and tuples so that a node table is pure data and its
encoded size can be counted field by field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Union

from .bits import width


@dataclass(frozen=True)
class PathArc:
    """Route along a concatenation of two product-walk paths (via a middle node)."""

    pmcf: int
    pid1: tuple[int, ...]
    pid2: tuple[int, ...]


@dataclass(frozen=True)
class SplitArc:
    """Large arc: with weight ``residual`` use ``path``, else leave via a helper."""

    cls: int
    residual: Fraction
    large: Fraction
    path: PathArc | None
    lo: int   # path ids of the forward scheme reserved for this arc at its source
    hi: int
    fwd: int  # forward flow scheme id


@dataclass(frozen=True)
class NullArc:
    """Arc whose tail equals its head; nothing to do."""


ArcRecord = Union[PathArc, SplitArc, NullArc]


@dataclass(frozen=True)
class HelperEntry:
    """Stored at a helper node for one incoming forward token."""

    rev: int                # reverse flow scheme id
    pid: int                # path id to use in the reverse scheme
    then: ArcRecord         # continuation executed where the reverse leg ends


def arc_bits(rec: ArcRecord, pid_bits: dict[int, int], ts_bits: int) -> int:
    """Encoded size of an arc record (a 2-bit tag plus its fields)."""
    if isinstance(rec, NullArc):
        return 2
    if isinstance(rec, PathArc):
        return 2 + ts_bits + 2 * pid_bits[rec.pmcf]
    size = 2 + 8 + 2 * 64 + 2 * width(rec.hi) + ts_bits
    if rec.path is not None:
        size += arc_bits(rec.path, pid_bits, ts_bits)
    return size


@dataclass
class Registry:
    """Numbering of every flow scheme and product-walk scheme in a build."""

    flows: list = field(default_factory=list)
    pmcfs: list = field(default_factory=list)

    def add_flow(self, ts) -> int:
        self.flows.append(ts)
        return len(self.flows) - 1

    def add_pmcf(self, p) -> int:
        """Register a product-walk scheme and its 2N round schemes (consecutive ids)."""
        base = len(self.flows)
        for rd in p.rounds:
            self.flows.append(rd.ts1)
            self.flows.append(rd.ts2)
        p.ts_base = base
        self.pmcfs.append(p)
        return len(self.pmcfs) - 1
