"""Random patterns and random graphs with exactly known pattern counts.

Graphs are grown as several disjoint components.  Edges inside a component
are unrestricted (they may create pattern instances, which are found later
by an exact search of that component).  Edges between two components only
use (source label, edge label, target label) signatures that never occur in
the pattern, so no isomorphism can use them and the count of the merged
graph is the sum of the per-component counts.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .counting import per_component_count, vf2_count
from .errors import (
    BudgetInfeasible,
    CapExceededAfterRetries,
    CountCapExceeded,
    InfeasibleParams,
    NoAdmissibleEdge,
    NoCompatibleVertexSet,
)
from .graph import Graph, IsoMapping, build_graph, pattern_to_graph, make_mapping


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def derive_seed(*keys: int) -> int:
    """Deterministic 63-bit child seed for a tuple of integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint64)[0] >> 1)


@dataclass(frozen=True)
class PatternParams:
    n_vertices: int
    n_edges: int
    n_vertex_labels: int
    n_edge_labels: int

    def check(self):
        nv, ne, lv, le = self.n_vertices, self.n_edges, self.n_vertex_labels, self.n_edge_labels
        if min(nv, lv, le) < 1 or ne < 0:
            raise InfeasibleParams(f"{self}: counts must be positive")
        if ne < nv - 1:
            raise InfeasibleParams(f"{self}: need at least {nv - 1} edges for a spanning tree")
        if lv > nv:
            raise InfeasibleParams(f"{self}: {lv} vertex labels cannot all appear on {nv} vertices")
        if le > max(ne, 1):
            raise InfeasibleParams(f"{self}: {le} edge labels cannot all appear on {ne} edges")
        if ne > nv * (nv - 1) * le:
            raise InfeasibleParams(f"{self}: not enough distinct (u, v, y) slots")


@dataclass(frozen=True)
class GraphParams:
    n_vertices: int
    n_edges: int
    n_vertex_labels: int
    n_edge_labels: int
    alpha: float
    beta: float = 512.0
    max_count: int = 1024
    max_avg_degree: float = 4.0
    max_retries: int = 10

    def check(self):
        if min(self.n_vertices, self.n_edges, self.n_vertex_labels, self.n_edge_labels) < 1:
            raise BudgetInfeasible(f"{self}: counts must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise BudgetInfeasible(f"alpha {self.alpha} not in [0, 1]")
        if self.beta <= 0 or self.max_count < 0 or self.max_avg_degree <= 0:
            raise BudgetInfeasible("beta, caps must be positive")
        if self.n_edges > self.max_avg_degree * self.n_vertices:
            raise BudgetInfeasible(
                f"average degree {self.n_edges / self.n_vertices:.2f} above cap {self.max_avg_degree}")


@dataclass(frozen=True)
class NECTree:
    """Equivalence classes of pattern vertices and the pattern's edge signatures.

    Two vertices share a class when they have the same label and the same
    multiset of incident (direction, edge label, neighbour label) triples.
    """
    class_of: dict
    signatures: frozenset
    degree_bounds: dict  # class id -> (out degree, in degree)

    @property
    def num_classes(self) -> int:
        return len(self.degree_bounds)


@dataclass
class GeneratedExample:
    pattern: Graph
    graph: Graph
    count: int
    mappings: list[IsoMapping]
    components: list[list[int]]
    component_counts: list[int]
    seed: int | None = None
    params: GraphParams | None = None
    cross_edges: int = 0


class Component:
    """Mutable graph under construction; vertices are 0..n-1."""

    def __init__(self, labels):
        self.labels = list(labels)
        self.edges: set[tuple[int, int, int]] = set()
        self.by_label = defaultdict(list)
        for v, x in enumerate(self.labels):
            self.by_label[x].append(v)

    @classmethod
    def from_graph(cls, g: Graph) -> "Component":
        """Builder holding ``g``; vertex ids must be 0..n-1."""
        if sorted(g.vertex_ids) != list(range(g.num_vertices)):
            raise ValueError("component vertex ids must be 0..n-1")
        c = cls(x for _, x in sorted(g.vertices))
        c.edges.update(g.edges)
        return c

    def __len__(self):
        return len(self.labels)

    def to_graph(self, n_vertex_labels, n_edge_labels) -> Graph:
        return build_graph(enumerate(self.labels), sorted(self.edges), n_vertex_labels, n_edge_labels)


def _random_tree_edges(n: int, rng) -> list[tuple[int, int]]:
    """Uniform labeled tree on 0..n-1 via a Pruefer sequence, each edge
    oriented by a fair coin."""
    if n <= 1:
        return []
    if n == 2:
        pairs = [(0, 1)]
    else:
        seq = rng.integers(0, n, size=n - 2).tolist()
        degree = [1] * n
        for x in seq:
            degree[x] += 1
        import heapq
        leaves = [v for v in range(n) if degree[v] == 1]
        heapq.heapify(leaves)
        pairs = []
        for x in seq:
            leaf = heapq.heappop(leaves)
            pairs.append((leaf, x))
            degree[x] -= 1
            if degree[x] == 1:
                heapq.heappush(leaves, x)
        pairs.append((heapq.heappop(leaves), heapq.heappop(leaves)))
    flips = rng.random(len(pairs)) < 0.5
    return [(b, a) if f else (a, b) for (a, b), f in zip(pairs, flips)]


def generate_directed_tree(n: int, rng) -> Graph:
    """Uniformly random tree on ``n`` vertices with random edge directions,
    all labels 0."""
    if n < 1:
        raise InfeasibleParams("a tree needs at least one vertex")
    edges = [(u, v, 0) for u, v in _random_tree_edges(n, rng)]
    return build_graph([(v, 0) for v in range(n)], edges, 1, 1)


def _labels_covering(n: int, n_labels: int, rng) -> list[int]:
    """Uniform labels for n slots such that each of the n_labels labels appears."""
    labels = rng.integers(0, n_labels, size=n)
    slots = rng.permutation(n)[:n_labels]
    labels[slots] = rng.permutation(n_labels)
    return labels.tolist()


def generate_pattern(pp: PatternParams, rng) -> Graph:
    """Random weakly connected pattern: a directed tree plus extra edges.

    Every vertex label in ``[0, n_vertex_labels)`` and every edge label in
    ``[0, n_edge_labels)`` occurs at least once; parallel edges always
    differ in label.
    """
    pp.check()
    nv, ne, lv, le = pp.n_vertices, pp.n_edges, pp.n_vertex_labels, pp.n_edge_labels
    vlabels = _labels_covering(nv, lv, rng)
    pairs = _random_tree_edges(nv, rng)
    mult = Counter(pairs)
    extra = ne - len(pairs)
    free = nv * (nv - 1) * le - len(pairs)
    if extra > free:
        raise InfeasibleParams(f"{pp}: not enough free slots")
    while extra > 0:
        u, v = rng.integers(0, nv, size=2).tolist()
        if u == v or mult[(u, v)] >= le:
            continue
        mult[(u, v)] += 1
        pairs.append((u, v))
        extra -= 1
    # edge labels: a random set of edges gets the labels 0..le-1 once each,
    # the rest draw uniformly among labels unused on their (u, v) pair
    order = rng.permutation(len(pairs)).tolist()
    labels: list[int | None] = [None] * len(pairs)
    used = defaultdict(set)
    for lab, i in zip(rng.permutation(le).tolist(), order[:le]):
        labels[i] = lab
        used[pairs[i]].add(lab)
    for i in order[le:]:
        options = [y for y in range(le) if y not in used[pairs[i]]]
        lab = options[int(rng.integers(len(options)))]
        labels[i] = lab
        used[pairs[i]].add(lab)
    edges = [(u, v, y) for (u, v), y in zip(pairs, labels)]
    return build_graph(enumerate(vlabels), edges, lv, le)


def build_nec_tree(p: Graph) -> NECTree:
    lab = p.label
    keys = {}
    for v in p.vertex_ids:
        inc = []
        for w, ys in p.out_adj.get(v, {}).items():
            inc.extend(("out", y, lab[w]) for y in ys)
        for w, ys in p.in_adj.get(v, {}).items():
            inc.extend(("in", y, lab[w]) for y in ys)
        keys[v] = (lab[v], tuple(sorted(inc)))
    class_ids = {k: i for i, k in enumerate(sorted(set(keys.values())))}
    class_of = {v: class_ids[k] for v, k in keys.items()}
    bounds = {}
    for v, c in class_of.items():
        bounds[c] = (p.out_degree[v], p.in_degree[v])
    return NECTree(class_of, p.signatures(), bounds)


def sample_component_sizes(n_vertices: int, beta: float, rng, n_components: int | None = None,
                           max_components: int | None = None) -> list[int]:
    """Split ``n_vertices`` into positive sizes with a symmetric Dirichlet(beta).

    Without an explicit ``n_components`` the count is uniform in
    ``[1, max(1, n_vertices // 8)]``.
    """
    if n_vertices < 1:
        raise ValueError("need at least one vertex")
    if n_components is None:
        hi = max(1, n_vertices // 8) if max_components is None else max_components
        n_components = int(rng.integers(1, hi + 1))
    k = min(n_components, n_vertices)
    if k == 1:
        return [n_vertices]
    share = rng.dirichlet([beta] * k) * n_vertices
    sizes = np.floor(share).astype(int)
    # largest remainders take the leftover vertices
    for i in np.argsort(-(share - sizes), kind="stable")[: n_vertices - sizes.sum()]:
        sizes[i] += 1
    # no empty components: borrow from the largest
    for i in range(k):
        while sizes[i] < 1:
            j = int(np.argmax(sizes))
            sizes[j] -= 1
            sizes[i] += 1
    return sizes.tolist()


def _admissible_combos(src_labels, dst_labels, n_edge_labels, signatures):
    return [(a, y, b) for a in src_labels for b in dst_labels for y in range(n_edge_labels)
            if (a, y, b) not in signatures]


def add_random_edges(c1: Component, c2: Component, nec: NECTree | None, budget: int, rng,
                     n_edge_labels: int, cross: set | None = None, ids=(0, 1)) -> int:
    """Add up to ``budget`` random new edges; returns how many were added.

    Same component (or no NEC tree): any non-duplicate, non-loop edge.
    Two components with a NEC tree: each edge runs between the components in
    a random direction and its signature is absent from the pattern.
    Cross edges are stored in ``cross`` as ``((comp, u), (comp, v), y)``.
    """
    if budget <= 0:
        return 0
    added = 0
    if c1 is c2:
        n = len(c1)
        room = n * (n - 1) * n_edge_labels - len(c1.edges)
        target = min(budget, room)
        while added < target:
            u, v = rng.integers(0, n, size=2).tolist()
            if u == v:
                continue
            e = (u, v, int(rng.integers(n_edge_labels)))
            if e not in c1.edges:
                c1.edges.add(e)
                added += 1
        return added

    if cross is None:
        raise ValueError("cross-component edges need a store")
    sigs = nec.signatures if nec is not None else frozenset()
    i1, i2 = ids
    directions = []
    for (a, ia), (b, ib) in (((c1, i1), (c2, i2)), ((c2, i2), (c1, i1))):
        combos = _admissible_combos(sorted(a.by_label), sorted(b.by_label), n_edge_labels, sigs)
        if combos:
            directions.append((a, ia, b, ib, combos))
    if not directions:
        raise NoAdmissibleEdge("every label combination between the components occurs in the pattern")
    room = sum(sum(len(a.by_label[x]) * len(b.by_label[z]) for x, _, z in combos)
               for a, _, b, _, combos in directions)
    used_here = sum(1 for e in cross if {e[0][0], e[1][0]} == {i1, i2})
    target = min(budget, room - used_here)
    attempts = 0
    while added < target and attempts < 100 * budget + 1000:
        attempts += 1
        a, ia, b, ib, combos = directions[int(rng.integers(len(directions)))]
        x, y, z = combos[int(rng.integers(len(combos)))]
        u = a.by_label[x][int(rng.integers(len(a.by_label[x])))]
        v = b.by_label[z][int(rng.integers(len(b.by_label[z])))]
        e = ((ia, u), (ib, v), y)
        if e not in cross:
            cross.add(e)
            added += 1
    return added


def add_pattern_instance(comp: Component, p: Graph, rng) -> int:
    """Map the pattern onto random label-compatible vertices of ``comp`` and add
    whichever pattern edges are missing there.  Returns the number added."""
    need = Counter(p.label[v] for v in p.vertex_ids)
    for x, k in need.items():
        if len(comp.by_label.get(x, ())) < k:
            raise NoCompatibleVertexSet(f"component has fewer than {k} vertices labeled {x}")
    image = {}
    for x in need:
        pvs = [v for v in p.vertex_ids if p.label[v] == x]
        chosen = rng.choice(comp.by_label[x], size=len(pvs), replace=False).tolist()
        image.update(zip(pvs, chosen))
    added = 0
    for u, v, y in p.edges:
        e = (image[u], image[v], y)
        if e not in comp.edges:
            comp.edges.add(e)
            added += 1
    return added


def merge_and_shuffle(components: list[Graph], rng, cross_edges=(), shuffle: bool = True):
    """Union of disjoint components with fresh global vertex ids.

    ``cross_edges`` holds ``((comp, u), (comp, v), y)`` edges.  Returns the
    merged graph and the map ``(comp index, local id) -> global id``.
    """
    offset_of = {}
    offset = 0
    for ci, g in enumerate(components):
        for v in sorted(g.vertex_ids):
            offset_of[(ci, v)] = offset
            offset += 1
    perm = rng.permutation(offset).tolist() if shuffle else list(range(offset))
    id_map = {key: perm[i] for key, i in offset_of.items()}
    nvl = max((g.num_vertex_labels for g in components), default=1)
    nel = max((g.num_edge_labels for g in components), default=1)
    vertices = []
    edges = []
    for ci, g in enumerate(components):
        vertices.extend((id_map[(ci, v)], x) for v, x in g.vertices)
        edges.extend((id_map[(ci, u)], id_map[(ci, v)], y) for u, v, y in g.edges)
    edges.extend((id_map[a], id_map[b], y) for a, b, y in cross_edges)
    vertices.sort()
    edges.sort()
    return build_graph(vertices, edges, nvl, nel), id_map


def _attempt(p: Graph, gp: GraphParams, nec: NECTree, rng):
    sizes = sample_component_sizes(gp.n_vertices, gp.beta, rng)
    comps = []
    budget = gp.n_edges
    for n in sizes:
        comp = Component(rng.integers(0, gp.n_vertex_labels, size=n).tolist())
        for u, v in _random_tree_edges(n, rng):
            comp.edges.add((u, v, int(rng.integers(gp.n_edge_labels))))
        comps.append(comp)
        budget -= n - 1
    if budget < 0:
        raise BudgetInfeasible(f"{gp.n_edges} edges cannot span {gp.n_vertices} vertices "
                               f"in {len(sizes)} trees")
    n_pattern_edges = max(p.num_edges, 1)
    cross: set = set()
    k = len(comps)
    stalls = 0
    while budget > 0:
        if k >= 2:
            i1, i2 = rng.choice(k, size=2, replace=False).tolist()
        else:
            i1 = i2 = 0
        c1, c2 = comps[i1], comps[i2]
        r = rng.random()
        if budget < n_pattern_edges:
            got = add_random_edges(c1, c2, nec, budget, rng, gp.n_edge_labels, cross, (i1, i2))
        elif r < gp.alpha:
            got = 0
            for ci in [i1] + rng.permutation(k).tolist():
                try:
                    got = add_pattern_instance(comps[ci], p, rng)
                except NoCompatibleVertexSet:
                    continue
                if got:
                    break
            # no component can take a new instance (or the sampled one already existed)
            if not got:
                got = add_random_edges(c1, c2, nec, n_pattern_edges, rng, gp.n_edge_labels,
                                       cross, (i1, i2))
        else:
            got = add_random_edges(c1, c2, nec, n_pattern_edges, rng, gp.n_edge_labels,
                                   cross, (i1, i2))
        budget -= got
        stalls = 0 if got else stalls + 1
        if stalls > 1000:
            raise BudgetInfeasible("no room left for the remaining edges")

    graphs = [c.to_graph(gp.n_vertex_labels, gp.n_edge_labels) for c in comps]
    counts = []
    local_maps = []
    left = gp.max_count
    for g in graphs:
        r = vf2_count(p, g, keep_mappings=True, max_count=left)
        counts.append(r.count)
        local_maps.append(r.mappings)
        left -= r.count
    merged, id_map = merge_and_shuffle(graphs, rng, sorted(cross))
    mappings = []
    for ci, ms in enumerate(local_maps):
        for m in ms:
            fwd = pattern_to_graph(m)
            mappings.append(make_mapping({pv: id_map[(ci, gv)] for pv, gv in fwd.items()}))
    members = [[id_map[(ci, v)] for v in range(len(c))] for ci, c in enumerate(comps)]
    return GeneratedExample(p, merged, sum(counts), mappings, members, counts,
                            params=gp, cross_edges=len(cross))


def generate_graph(p: Graph, gp: GraphParams, rng, seed: int | None = None) -> GeneratedExample:
    """Generate a graph for pattern ``p`` whose count of ``p`` is exactly known.

    Attempts whose count passes ``gp.max_count`` are discarded and
    regenerated up to ``gp.max_retries`` times.
    """
    gp.check()
    if not p.is_weakly_connected:
        raise InfeasibleParams("pattern must be weakly connected")
    nec = build_nec_tree(p)
    for _ in range(gp.max_retries + 1):
        try:
            ex = _attempt(p, gp, nec, rng)
        except CountCapExceeded:
            continue
        ex.seed = seed
        return ex
    raise CapExceededAfterRetries(f"count stayed above {gp.max_count} after {gp.max_retries} retries")


def regenerate(p: Graph, gp: GraphParams, seed: int) -> GeneratedExample:
    """Replay the example recorded with ``seed``."""
    return generate_graph(p, gp, make_rng(seed), seed=seed)


def cross_component_signatures(ex: GeneratedExample) -> set:
    """Signatures of edges whose endpoints lie in different components."""
    comp_of = {v: ci for ci, vs in enumerate(ex.components) for v in vs}
    lab = ex.graph.label
    return {(lab[u], y, lab[v]) for u, v, y in ex.graph.edges if comp_of[u] != comp_of[v]}


def recount(ex: GeneratedExample) -> int:
    return vf2_count(ex.pattern, ex.graph).count


__all__ = [
    "PatternParams", "GraphParams", "NECTree", "GeneratedExample",
    "generate_directed_tree", "generate_pattern", "build_nec_tree", "sample_component_sizes",
    "add_random_edges", "add_pattern_instance", "merge_and_shuffle", "generate_graph",
    "regenerate", "make_rng", "derive_seed", "cross_component_signatures", "recount",
    "per_component_count",
]
