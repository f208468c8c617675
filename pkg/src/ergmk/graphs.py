"""Fixed-N simple graphs with bit-packed adjacency, edge toggles, and
radius-1 (Hamming) neighborhood enumeration."""

from __future__ import annotations

from enum import Enum
from functools import lru_cache
from typing import Iterable, NamedTuple, TextIO

MAX_SIM_VERTICES = 64


class GraphError(ValueError):
    pass


class Toggle(NamedTuple):
    """A single edge-variable flip. For undirected graphs (i, j) and (j, i)
    denote the same toggle."""

    i: int
    j: int


class NeighborClass(Enum):
    """Whether a toggle adds an edge (HPLUS) or deletes one (HMINUS) at the
    current state."""

    HPLUS = "add"
    HMINUS = "delete"


class Graph:
    """Simple graph on a fixed vertex set {0..n-1}, no self-loops.

    Adjacency is stored as one integer bitmask per vertex. For directed
    graphs ``adj[i]`` holds the out-neighborhood of i and ``in_adj[i]`` the
    in-neighborhood; for undirected graphs ``adj`` is symmetric and each
    unordered pair counts as a single edge variable.
    """

    __slots__ = ("n", "directed", "adj", "in_adj", "_wedges", "_wmut")

    def __init__(self, n: int, directed: bool = False):
        if n < 1:
            raise GraphError(f"vertex count must be >= 1, got {n}")
        if n > MAX_SIM_VERTICES:
            raise GraphError(f"vertex count {n} exceeds cap {MAX_SIM_VERTICES}")
        self.n = n
        self.directed = directed
        self.adj = [0] * n
        self.in_adj = [0] * n if directed else self.adj
        self._wedges = 0
        self._wmut = 0

    def copy(self) -> "Graph":
        g = Graph.__new__(Graph)
        g.n = self.n
        g.directed = self.directed
        g.adj = list(self.adj)
        g.in_adj = list(self.in_adj) if self.directed else g.adj
        g._wedges = self._wedges
        g._wmut = self._wmut
        return g

    def _check_pair(self, i: int, j: int) -> None:
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise GraphError(f"vertex index out of range: ({i}, {j}) with n={self.n}")
        if i == j:
            raise GraphError(f"self-loop ({i}, {i}) not representable")

    def has_edge(self, i: int, j: int) -> bool:
        self._check_pair(i, j)
        return bool(self.adj[i] >> j & 1)

    def _flip(self, i: int, j: int) -> None:
        # In-place toggle; engine/sampler internals only. Public callers use
        # apply_toggle, which preserves the input graph.
        bit = self.adj[i] >> j & 1
        delta = -1 if bit else 1
        self._wedges += delta
        if self.directed:
            self.adj[i] ^= 1 << j
            self.in_adj[j] ^= 1 << i
            if self.adj[j] >> i & 1:
                self._wmut += delta
        else:
            self.adj[i] ^= 1 << j
            self.adj[j] ^= 1 << i

    def degree(self, i: int) -> int:
        return self.adj[i].bit_count()

    def out_degree(self, i: int) -> int:
        return self.adj[i].bit_count()

    def in_degree(self, i: int) -> int:
        return self.in_adj[i].bit_count()

    def to_bits(self) -> int:
        """Adjacency encoded as an integer over the canonical toggle order
        (bit k set iff edge variable k present)."""
        bits = 0
        for k, (i, j) in enumerate(all_toggles(self.n, self.directed)):
            if self.adj[i] >> j & 1:
                bits |= 1 << k
        return bits

    @classmethod
    def from_bits(cls, n: int, directed: bool, bits: int) -> "Graph":
        g = cls(n, directed)
        for k, (i, j) in enumerate(all_toggles(n, directed)):
            if bits >> k & 1:
                g._flip(i, j)
        return g

    @classmethod
    def from_edges(cls, n: int, directed: bool, edges: Iterable[tuple[int, int]]) -> "Graph":
        g = cls(n, directed)
        for i, j in edges:
            g._check_pair(i, j)
            if g.adj[i] >> j & 1:
                raise GraphError(f"duplicate edge ({i}, {j})")
            g._flip(i, j)
        return g

    @classmethod
    def complete(cls, n: int, directed: bool = False) -> "Graph":
        g = cls(n, directed)
        for i, j in all_toggles(n, directed):
            g._flip(i, j)
        return g

    def edges(self) -> list[tuple[int, int]]:
        return [(i, j) for i, j in all_toggles(self.n, self.directed) if self.adj[i] >> j & 1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.n, self.directed, self.adj) == (other.n, other.directed, other.adj)

    def __hash__(self) -> int:
        return hash((self.n, self.directed, tuple(self.adj)))

    def __repr__(self) -> str:
        kind = "directed" if self.directed else "undirected"
        return f"Graph({kind} n={self.n}, edges={self.edges()})"


@lru_cache(maxsize=None)
def all_toggles(n: int, directed: bool) -> tuple[Toggle, ...]:
    """All edge variables in canonical row-major order: ordered pairs (i, j),
    i != j, for directed graphs; pairs with i < j for undirected."""
    if directed:
        return tuple(Toggle(i, j) for i in range(n) for j in range(n) if i != j)
    return tuple(Toggle(i, j) for i in range(n) for j in range(i + 1, n))


@lru_cache(maxsize=None)
def _toggle_index_map(n: int, directed: bool) -> dict[Toggle, int]:
    return {t: k for k, t in enumerate(all_toggles(n, directed))}


def toggle_index(n: int, directed: bool, t: Toggle) -> int:
    """Position of a toggle in the canonical order (undirected toggles are
    normalized to i < j)."""
    if not directed and t.i > t.j:
        t = Toggle(t.j, t.i)
    try:
        return _toggle_index_map(n, directed)[t]
    except KeyError:
        raise GraphError(f"invalid toggle {t} for n={n}") from None


def num_toggles(n: int, directed: bool) -> int:
    return n * (n - 1) if directed else n * (n - 1) // 2


@lru_cache(maxsize=None)
def incident_toggle_indices(n: int, directed: bool, i: int, j: int) -> tuple[int, ...]:
    """Indices of all toggles sharing a vertex with {i, j}."""
    out = []
    for k, t in enumerate(all_toggles(n, directed)):
        if t.i in (i, j) or t.j in (i, j):
            out.append(k)
    return tuple(out)


def apply_toggle(g: Graph, t: Toggle) -> Graph:
    """Return a new graph with the state of edge variable t flipped. Applying
    the same toggle twice returns the original graph."""
    g._check_pair(t.i, t.j)
    out = g.copy()
    out._flip(t.i, t.j)
    return out


def hamming_neighbors(g: Graph) -> list[tuple[Toggle, NeighborClass]]:
    """Every radius-1 neighbor of g as (toggle, add/delete class), in
    canonical toggle order."""
    result = []
    for t in all_toggles(g.n, g.directed):
        cls = NeighborClass.HMINUS if g.adj[t.i] >> t.j & 1 else NeighborClass.HPLUS
        result.append((t, cls))
    return result


def edge_count(g: Graph) -> int:
    """Number of present edges (undirected) or arcs (directed)."""
    return g._wedges


def mutual_count(g: Graph) -> int:
    """Number of dyads with both arcs present. Directed graphs only."""
    if not g.directed:
        raise GraphError("mutual_count requires a directed graph")
    return g._wmut


def write_edgelist(g: Graph, fh: TextIO) -> None:
    """Edge-list text format: header '<directed|undirected> <n>', then one
    '<i> <j>' line per edge, 0-indexed."""
    fh.write(f"{'directed' if g.directed else 'undirected'} {g.n}\n")
    for i, j in g.edges():
        fh.write(f"{i} {j}\n")


def read_edgelist(fh: TextIO) -> Graph:
    header = fh.readline().split()
    if len(header) != 2 or header[0] not in ("directed", "undirected"):
        raise GraphError(f"bad edge-list header: {header!r}")
    directed = header[0] == "directed"
    try:
        n = int(header[1])
    except ValueError:
        raise GraphError(f"bad vertex count in header: {header[1]!r}") from None
    edges = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"bad edge line: {line!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return Graph.from_edges(n, directed, edges)
