from __future__ import annotations

import pytest

from compactroute.graph import Graph
from compactroute.scheme import build_scheme


def single_edge() -> Graph:
    return Graph(2, [(0, 1, 1)])


def path_graph(n: int = 4) -> Graph:
    return Graph(n, [(i, i + 1, 1) for i in range(n - 1)])


def bottleneck_graph() -> Graph:
    """a=0 --4-- c=1, then four unit 2-paths c - m_i - b with m_i = 2..5 and b = 6."""
    edges = [(0, 1, 4)]
    for m in range(2, 6):
        edges += [(1, m, 1), (m, 6, 1)]
    return Graph(7, edges)


def grid(k: int) -> Graph:
    edges = []
    for i in range(k):
        for j in range(k):
            v = i * k + j
            if j + 1 < k:
                edges.append((v, v + 1, 1))
            if i + 1 < k:
                edges.append((v, v + k, 1))
    return Graph(k * k, edges)


def cube(d: int) -> Graph:
    return Graph(1 << d, [(x, x | (1 << b), 1) for x in range(1 << d) for b in range(d) if not x >> b & 1])


def complete(n: int) -> Graph:
    return Graph(n, [(u, v, 1) for u in range(n) for v in range(u + 1, n)])


A, C, B = 0, 1, 6


@pytest.fixture(scope="session")
def f1_bundle():
    return build_scheme(single_edge())


@pytest.fixture(scope="session")
def f2_bundle():
    return build_scheme(path_graph())


@pytest.fixture(scope="session")
def f3_bundle():
    return build_scheme(bottleneck_graph())


@pytest.fixture(scope="session")
def q3_bundle():
    return build_scheme(cube(3))


@pytest.fixture(scope="session")
def f5_bundle():
    return build_scheme(grid(4))


def random_connected(rng, n: int, max_class: int = 4, extra: float = 0.3) -> Graph:
    """Random spanning tree plus extra edges; capacities 2^l with l <= max_class."""
    edges = {}
    for v in range(1, n):
        u = rng.randrange(v)
        edges[(u, v)] = 1 << rng.randint(0, max_class)
    for u in range(n):
        for v in range(u + 1, n):
            if (u, v) not in edges and rng.random() < extra:
                edges[(u, v)] = 1 << rng.randint(0, max_class)
    return Graph(n, [(u, v, c) for (u, v), c in sorted(edges.items())])


def random_split(rng, n: int, total: int) -> dict[int, int]:
    """Integer distribution of ``total`` units over random nodes."""
    out: dict[int, int] = {}
    for _ in range(total):
        v = rng.randrange(n)
        out[v] = out.get(v, 0) + 1
    return out


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    ACCEPTANCE.setdefault(criterion, []).append((ok, detail))
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        ok = all(p for p, _ in parts)
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} | " + "; ".join(d for _, d in parts))
