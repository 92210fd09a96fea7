"""
Conflict graphs, priority vectors and priority-weighted incidence matrices.

Links are numbered 1..n in every public function of this project. Internally a
link set is often carried as a bitmask where link i is bit i-1, which is why
graphs are capped at N_MAX links.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import networkx as nx
import numpy as np

from errors import CapacityError, InputError

logger = logging.getLogger(__name__)

# --- Configuration Constants ---
N_MAX = int(os.environ.get("GREEDY_SCHED_N_MAX", 64))
ENUM_N_MAX = int(os.environ.get("GREEDY_SCHED_ENUM_N_MAX", 24))

# Left links 1-4, right links 5-8; link i misses only its partner i+4.
BIPARTITE8_EDGES = (
    (1, 6), (1, 7), (1, 8),
    (2, 5), (2, 7), (2, 8),
    (3, 5), (3, 6), (3, 8),
    (4, 5), (4, 6), (4, 7),
)


# --- Link-set helpers ---


def links_to_mask(links: Iterable[int]) -> int:
    mask = 0
    for link in links:
        mask |= 1 << (link - 1)
    return mask


def mask_to_links(mask: int) -> frozenset[int]:
    links = []
    link = 1
    while mask:
        if mask & 1:
            links.append(link)
        mask >>= 1
        link += 1
    return frozenset(links)


def as_rates(a, n: int | None = None, name: str = "rate") -> np.ndarray:
    """Validates a rate vector and returns it as a float numpy array."""
    try:
        rates = np.asarray(a, dtype=float)
    except (TypeError, ValueError) as e:
        raise InputError(f"{name} vector is not numeric: {a!r}") from e
    if rates.ndim != 1:
        raise InputError(f"{name} vector must be one-dimensional, got shape {rates.shape}")
    if n is not None and rates.shape[0] != n:
        raise InputError(f"{name} vector has {rates.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(rates)):
        raise InputError(f"{name} vector contains non-finite entries")
    negative = np.flatnonzero(rates < 0)
    if negative.size:
        link = int(negative[0]) + 1
        raise InputError(f"negative {name} component at link {link}: {rates[link - 1]}")
    return rates


# --- Conflict graph ---


@dataclass(frozen=True)
class ConflictGraph:
    """Links 1..n and their pairwise conflicts. Edges are stored as (i, j) with i < j."""

    n: int
    edges: frozenset[tuple[int, int]]
    _neighbors: tuple[frozenset[int], ...] = field(init=False, repr=False, compare=False)
    _masks: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        neighbors: list[set[int]] = [set() for _ in range(self.n)]
        for i, j in self.edges:
            if not (1 <= i < j <= self.n):
                raise InputError(f"edge ({i}, {j}) is not normalized for a graph of {self.n} links")
            neighbors[i - 1].add(j)
            neighbors[j - 1].add(i)
        object.__setattr__(self, "_neighbors", tuple(frozenset(s) for s in neighbors))
        object.__setattr__(self, "_masks", tuple(links_to_mask(s) for s in neighbors))

    @property
    def links(self) -> range:
        return range(1, self.n + 1)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def check_link(self, link: int) -> int:
        if not isinstance(link, (int, np.integer)) or not 1 <= link <= self.n:
            raise InputError(f"link {link!r} is outside 1..{self.n}")
        return int(link)

    def neighbors(self, link: int) -> frozenset[int]:
        return self._neighbors[self.check_link(link) - 1]

    def neighbor_mask(self, link: int) -> int:
        return self._masks[link - 1]

    @property
    def neighbor_masks(self) -> tuple[int, ...]:
        return self._masks

    def degree(self, link: int) -> int:
        return len(self.neighbors(link))

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def to_networkx(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(self.links)
        graph.add_edges_from(sorted(self.edges))
        return graph


def build_graph(n: int, edges: Iterable[Sequence[int]], n_max: int | None = None) -> ConflictGraph:
    """Builds a conflict graph from 1-indexed link pairs, dropping duplicates."""
    cap = N_MAX if n_max is None else n_max
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InputError(f"link count must be a positive integer, got {n!r}")
    if n > cap:
        raise CapacityError(f"graph has {n} links, the configured cap is {cap}")

    normalized = set()
    for pair in edges:
        if len(pair) != 2:
            raise InputError(f"edge {pair!r} is not a pair of links")
        i, j = (int(v) for v in pair)
        if not (1 <= i <= n and 1 <= j <= n):
            raise InputError(f"edge ({i}, {j}) references a link outside 1..{n}")
        if i == j:
            raise InputError(f"self-loop at link {i}")
        normalized.add((min(i, j), max(i, j)))
    return ConflictGraph(int(n), frozenset(normalized))


def ring(n: int) -> ConflictGraph:
    if n < 3:
        raise InputError(f"a ring needs at least 3 links, got {n}")
    return build_graph(n, [(i, i % n + 1) for i in range(1, n + 1)])


def bipartite8() -> ConflictGraph:
    """The incomplete bipartite graph on 8 links: {i, i+4} are the only cross pairs without conflict."""
    return build_graph(8, BIPARTITE8_EDGES)


def from_networkx(graph: nx.Graph, n_max: int | None = None) -> ConflictGraph:
    """Relabels the nodes of a networkx graph to 1..n in sorted node order."""
    nodes = sorted(graph.nodes)
    index = {node: k + 1 for k, node in enumerate(nodes)}
    return build_graph(len(nodes), [(index[u], index[v]) for u, v in graph.edges], n_max=n_max)


# --- Edge-list files and graph specifiers ---


def parse_edge_list(text: str, n_max: int | None = None) -> ConflictGraph:
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            values = [int(v) for v in fields]
        except ValueError as e:
            raise InputError(f"line {lineno}: expected integers, got {raw.strip()!r}") from e
        if n is None:
            if len(values) != 1:
                raise InputError(f"line {lineno}: first line must hold the link count")
            n = values[0]
        elif len(values) != 2:
            raise InputError(f"line {lineno}: expected 'i j', got {raw.strip()!r}")
        else:
            edges.append(values)
    if n is None:
        raise InputError("edge list is empty")
    return build_graph(n, edges, n_max=n_max)


def format_edge_list(graph: ConflictGraph) -> str:
    lines = [str(graph.n)] + [f"{i} {j}" for i, j in sorted(graph.edges)]
    return "\n".join(lines) + "\n"


def load_graph(spec: str, n_max: int | None = None) -> ConflictGraph:
    """Accepts `ring:<n>`, `bipartite8` or a path to an edge-list file."""
    spec = spec.strip()
    if spec.startswith("ring:"):
        try:
            size = int(spec.split(":", 1)[1])
        except ValueError as e:
            raise InputError(f"bad ring specifier {spec!r}") from e
        return ring(size)
    if spec == "bipartite8":
        return bipartite8()

    path = Path(spec)
    if not path.is_file():
        raise InputError(f"graph specifier {spec!r} is neither a builder nor an existing file")
    logger.debug("Loading edge list from %s", path)
    return parse_edge_list(path.read_text(), n_max=n_max)


# --- Priorities ---


@dataclass(frozen=True)
class PriorityVector:
    """values[i-1] is the priority of link i; 1 is considered first, n last."""

    values: tuple[int, ...]

    def __post_init__(self):
        values = tuple(int(v) for v in self.values)
        if sorted(values) != list(range(1, len(values) + 1)):
            raise InputError(f"priority vector {values} is not a permutation of 1..{len(values)}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_order(cls, order: Sequence[int]) -> PriorityVector:
        """Builds the vector from links listed highest priority first."""
        values = [0] * len(order)
        for rank, link in enumerate(order, start=1):
            if not 1 <= link <= len(order) or values[link - 1]:
                raise InputError(f"consideration order {tuple(order)} is not a permutation")
            values[link - 1] = rank
        return cls(tuple(values))

    @classmethod
    def identity(cls, n: int) -> PriorityVector:
        return cls(tuple(range(1, n + 1)))

    @property
    def n(self) -> int:
        return len(self.values)

    @cached_property
    def order(self) -> tuple[int, ...]:
        """Links sorted from highest to lowest priority."""
        return tuple(sorted(range(1, self.n + 1), key=lambda link: self.values[link - 1]))

    def priority(self, link: int) -> int:
        return self.values[link - 1]

    def __iter__(self) -> Iterator[int]:
        return iter(self.values)

    def __len__(self) -> int:
        return self.n

    def __str__(self) -> str:
        return " ".join(str(v) for v in self.values)


def parse_priority(text: str, n: int | None = None) -> PriorityVector:
    fields = text.split("#", 1)[0].split()
    try:
        values = tuple(int(v) for v in fields)
    except ValueError as e:
        raise InputError(f"priority line must hold integers, got {text.strip()!r}") from e
    p = PriorityVector(values)
    if n is not None and p.n != n:
        raise InputError(f"priority vector has {p.n} entries, graph has {n} links")
    return p


# --- Incidence matrix ---


@dataclass(frozen=True)
class IncidenceMatrix:
    """Sparse rows: higher[i-1] lists the higher-priority neighbors of link i. The diagonal is implicit."""

    n: int
    higher: tuple[tuple[int, ...], ...]

    @cached_property
    def dense(self) -> np.ndarray:
        matrix = np.eye(self.n, dtype=np.int8)
        for i, row in enumerate(self.higher):
            for j in row:
                matrix[i, j - 1] = 1
        return matrix

    def dot(self, a) -> np.ndarray:
        return self.dense @ as_rates(a, self.n)


def incidence_matrix(graph: ConflictGraph, p: PriorityVector) -> IncidenceMatrix:
    if p.n != graph.n:
        raise InputError(f"priority vector has {p.n} entries, graph has {graph.n} links")
    higher = tuple(
        tuple(sorted(j for j in graph.neighbors(i) if p.priority(i) > p.priority(j)))
        for i in graph.links
    )
    return IncidenceMatrix(graph.n, higher)


def weighted_norm(matrix: IncidenceMatrix, a) -> float:
    """max_i (Pa)_i: the worst load any link sees from itself and its higher-priority neighbors."""
    return float(np.max(matrix.dot(a)))


def is_independent(graph: ConflictGraph, links: Iterable[int]) -> bool:
    chosen = 0
    for link in links:
        graph.check_link(link)
        if graph.neighbor_mask(link) & chosen:
            return False
        chosen |= 1 << (link - 1)
    return True


def independent_sets(
    graph: ConflictGraph, within: Iterable[int] | None = None, n_max: int | None = None
) -> Iterator[tuple[int, ...]]:
    """Yields every independent set (as a sorted tuple) in lexicographic order, the empty set first."""
    cap = ENUM_N_MAX if n_max is None else n_max
    if graph.n > cap:
        raise CapacityError(f"exact enumeration is capped at {cap} links, graph has {graph.n}")
    candidates = sorted(graph.links if within is None else {graph.check_link(v) for v in within})
    masks = graph.neighbor_masks

    def extend(chosen: tuple[int, ...], blocked: int, start: int):
        yield chosen
        for idx in range(start, len(candidates)):
            link = candidates[idx]
            if blocked >> (link - 1) & 1:
                continue
            yield from extend(chosen + (link,), blocked | masks[link - 1], idx + 1)

    yield from extend((), 0, 0)
