"""Directed heterogeneous multigraphs with labeled vertices and edges.

A graph is immutable once built.  Parallel edges are allowed as long as
their labels differ, so an edge is identified by its ``(src, dst, label)``
triple.  The same type is used for patterns.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .errors import (
    DanglingEndpoint,
    DuplicateEdgeTriple,
    DuplicateVertexId,
    LabelOutOfRange,
    MappingNotTotal,
    NonBijectivePermutation,
)

Vertex = tuple[int, int]  # (id, label)
Edge = tuple[int, int, int]  # (src, dst, label)
# (graph vertex, pattern vertex) pairs, sorted by pattern vertex
IsoMapping = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Graph:
    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    num_vertex_labels: int
    num_edge_labels: int

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def vertex_ids(self) -> tuple[int, ...]:
        return tuple(v for v, _ in self.vertices)

    @cached_property
    def label(self) -> dict[int, int]:
        return dict(self.vertices)

    @cached_property
    def edge_set(self) -> frozenset[Edge]:
        return frozenset(self.edges)

    @cached_property
    def out_adj(self) -> dict[int, dict[int, frozenset[int]]]:
        """``out_adj[u][v]`` is the set of labels on edges u -> v."""
        return _adjacency(self.edges, reverse=False)

    @cached_property
    def in_adj(self) -> dict[int, dict[int, frozenset[int]]]:
        return _adjacency(self.edges, reverse=True)

    @cached_property
    def out_degree(self) -> dict[int, int]:
        deg = dict.fromkeys(self.vertex_ids, 0)
        for u, _, _ in self.edges:
            deg[u] += 1
        return deg

    @cached_property
    def in_degree(self) -> dict[int, int]:
        deg = dict.fromkeys(self.vertex_ids, 0)
        for _, v, _ in self.edges:
            deg[v] += 1
        return deg

    def degree_multiset(self) -> Counter:
        return Counter((self.out_degree[v], self.in_degree[v]) for v in self.vertex_ids)

    @cached_property
    def is_weakly_connected(self) -> bool:
        if not self.vertices:
            return True
        nbrs = defaultdict(set)
        for u, v, _ in self.edges:
            nbrs[u].add(v)
            nbrs[v].add(u)
        start = self.vertices[0][0]
        seen = {start}
        stack = [start]
        while stack:
            for w in nbrs[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(self.vertices)

    def signatures(self) -> frozenset[tuple[int, int, int]]:
        """Set of (source label, edge label, target label) over all edges."""
        lab = self.label
        return frozenset((lab[u], y, lab[v]) for u, v, y in self.edges)

    def __repr__(self) -> str:
        return (
            f"Graph(|V|={self.num_vertices}, |E|={self.num_edges}, "
            f"Lv={self.num_vertex_labels}, Le={self.num_edge_labels})"
        )


# patterns are graphs; callers check ``is_weakly_connected`` where required
Pattern = Graph


def _adjacency(edges, reverse):
    tmp: dict[int, dict[int, set[int]]] = defaultdict(lambda: defaultdict(set))
    for u, v, y in edges:
        if reverse:
            u, v = v, u
        tmp[u][v].add(y)
    return {u: {v: frozenset(ys) for v, ys in d.items()} for u, d in tmp.items()}


def build_graph(
    vertices: Iterable[Sequence[int]],
    edges: Iterable[Sequence[int]],
    num_vertex_labels: int,
    num_edge_labels: int,
) -> Graph:
    """Validate raw vertex/edge lists and return an immutable :class:`Graph`."""
    if num_vertex_labels < 1 or num_edge_labels < 1:
        raise LabelOutOfRange("label counts must be positive")
    vs = tuple((int(v), int(x)) for v, x in vertices)
    es = tuple((int(u), int(v), int(y)) for u, v, y in edges)
    ids = set()
    for v, x in vs:
        if v < 0:
            raise DuplicateVertexId(f"vertex id {v} is negative")
        if v in ids:
            raise DuplicateVertexId(f"vertex id {v} declared twice")
        if not 0 <= x < num_vertex_labels:
            raise LabelOutOfRange(f"vertex {v} label {x} not in [0, {num_vertex_labels})")
        ids.add(v)
    seen = set()
    for e in es:
        u, v, y = e
        if u not in ids or v not in ids:
            raise DanglingEndpoint(f"edge {e} references an undeclared vertex")
        if not 0 <= y < num_edge_labels:
            raise LabelOutOfRange(f"edge {e} label not in [0, {num_edge_labels})")
        if e in seen:
            raise DuplicateEdgeTriple(f"edge {e} appears twice")
        seen.add(e)
    return Graph(vs, es, num_vertex_labels, num_edge_labels)


def remap_vertex_ids(g: Graph, perm: Mapping[int, int]) -> Graph:
    """Rename every vertex ``v`` to ``perm[v]``; labels and edges follow."""
    ids = g.vertex_ids
    if set(perm) != set(ids):
        raise NonBijectivePermutation("permutation must be defined on exactly the vertex ids")
    if len(set(perm[v] for v in ids)) != len(ids):
        raise NonBijectivePermutation("permutation is not injective")
    vs = tuple((perm[v], x) for v, x in g.vertices)
    es = tuple((perm[u], perm[v], y) for u, v, y in g.edges)
    return build_graph(vs, es, g.num_vertex_labels, g.num_edge_labels)


def make_mapping(pattern_to_graph: Mapping[int, int]) -> IsoMapping:
    return tuple(sorted(((gv, pv) for pv, gv in pattern_to_graph.items()), key=lambda t: t[1]))


def pattern_to_graph(m: IsoMapping | Mapping[int, int]) -> dict[int, int]:
    if isinstance(m, Mapping):
        return dict(m)
    return {pv: gv for gv, pv in m}


def verify_mapping(p: Graph, g: Graph, m: IsoMapping | Mapping[int, int]) -> bool:
    """True iff ``m`` is a subgraph isomorphism of ``p`` into ``g``.

    Labels of mapped vertices must agree and every pattern edge ``(u, v, y)``
    must have a graph edge with the same label between the images.  Extra
    graph edges among the images are allowed.
    """
    fwd = pattern_to_graph(m)
    if set(fwd) != set(p.vertex_ids):
        raise MappingNotTotal("mapping must cover every pattern vertex exactly once")
    if not isinstance(m, Mapping) and len(m) != len(fwd):
        raise MappingNotTotal("pattern vertex mapped more than once")
    images = list(fwd.values())
    if len(set(images)) != len(images):
        return False
    glab = g.label
    for pv, x in p.vertices:
        gv = fwd[pv]
        if gv not in glab or glab[gv] != x:
            return False
    edges = g.edge_set
    for u, v, y in p.edges:
        if (fwd[u], fwd[v], y) not in edges:
            return False
    return True
