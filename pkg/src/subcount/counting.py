"""Exact subgraph isomorphism counting.

Two engines with the same contract: an exhaustive enumerator used as an
oracle on tiny inputs, and a VF2-style backtracking search.  A count is the
number of distinct injective vertex maps, not the number of vertex subsets.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import CountCapExceeded, CountTimeout, SizeGuardExceeded
from .graph import Graph, IsoMapping, verify_mapping


@dataclass
class CountResult:
    count: int
    mappings: list[IsoMapping] | None
    elapsed: float
    nodes_expanded: int


def count_brute_force(p: Graph, g: Graph, *, max_graph_vertices: int = 12,
                      keep_mappings: bool = False) -> CountResult:
    """Try every injective assignment of pattern vertices to graph vertices."""
    if g.num_vertices > max_graph_vertices:
        raise SizeGuardExceeded(
            f"brute force limited to {max_graph_vertices} graph vertices, got {g.num_vertices}")
    t0 = time.perf_counter()
    pids = sorted(p.vertex_ids)
    found = []
    count = 0
    tried = 0
    for images in itertools.permutations(g.vertex_ids, len(pids)):
        tried += 1
        m = tuple(zip(images, pids))
        if verify_mapping(p, g, m):
            count += 1
            if keep_mappings:
                found.append(m)
    return CountResult(count, found if keep_mappings else None, time.perf_counter() - t0, tried)


def match_order(p: Graph) -> list[int]:
    """Pattern vertices by descending total degree (ties: smaller id), grown
    along the frontier of already-ordered vertices so each new vertex has an
    anchor whenever the pattern is connected."""
    deg = {v: p.out_degree[v] + p.in_degree[v] for v in p.vertex_ids}
    nbrs = {v: set() for v in p.vertex_ids}
    for u, v, _ in p.edges:
        nbrs[u].add(v)
        nbrs[v].add(u)
    key = lambda v: (-deg[v], v)  # noqa: E731
    order: list[int] = []
    placed: set[int] = set()
    frontier: set[int] = set()
    remaining = set(p.vertex_ids)
    while remaining:
        pool = frontier if frontier else remaining
        v = min(pool, key=key)
        order.append(v)
        placed.add(v)
        remaining.discard(v)
        frontier.discard(v)
        frontier |= nbrs[v] - placed
    return order


def _plan(p: Graph):
    order = match_order(p)
    pos = {v: i for i, v in enumerate(order)}
    steps = []
    for i, pv in enumerate(order):
        outs = [(w, ys) for w, ys in p.out_adj.get(pv, {}).items() if w != pv and pos[w] < i]
        ins = [(w, ys) for w, ys in p.in_adj.get(pv, {}).items() if w != pv and pos[w] < i]
        loops = p.out_adj.get(pv, {}).get(pv)
        # prefer an in-edge anchor (candidates from the anchor's out-list)
        anchor = None
        if ins:
            w, ys = min(ins, key=lambda t: pos[t[0]])
            anchor = (w, True, ys)
        elif outs:
            w, ys = min(outs, key=lambda t: pos[t[0]])
            anchor = (w, False, ys)
        steps.append((pv, p.label[pv], p.out_degree[pv], p.in_degree[pv], anchor, outs, ins, loops))
    return steps


def vf2_count(p: Graph, g: Graph, *, timeout: float | None = None,
              keep_mappings: bool = False, max_count: int | None = None) -> CountResult:
    """Count subgraph isomorphisms of ``p`` in ``g`` by backtracking.

    Partial maps are extended one pattern vertex at a time.  A candidate
    must carry the right label, be unused, have at least the pattern
    vertex's in/out degree, and carry every labeled edge the pattern
    requires towards already-mapped vertices.

    ``timeout`` (seconds) raises :class:`CountTimeout`; ``max_count`` raises
    :class:`CountCapExceeded` as soon as the count passes it.
    """
    t0 = time.perf_counter()
    deadline = None if timeout is None else t0 + timeout
    steps = _plan(p)
    n = len(steps)
    glab = g.label
    gout, gin = g.out_adj, g.in_adj
    godeg, gideg = g.out_degree, g.in_degree
    by_label: dict[int, list[int]] = {}
    for v, x in g.vertices:
        by_label.setdefault(x, []).append(v)
    empty: dict = {}

    core: dict[int, int] = {}
    used: set[int] = set()
    found: list[IsoMapping] = []
    state = {"count": 0, "nodes": 0}

    def extend(i):
        if i == n:
            state["count"] += 1
            if keep_mappings:
                found.append(tuple(sorted(((c, q) for q, c in core.items()), key=lambda t: t[1])))
            if max_count is not None and state["count"] > max_count:
                raise CountCapExceeded(f"more than {max_count} isomorphisms")
            return
        pv, lab, odeg, ideg, anchor, outs, ins, loops = steps[i]
        if anchor is None:
            cands = by_label.get(lab, ())
        else:
            w, from_anchor, ys = anchor
            adj = gout if from_anchor else gin
            cands = [c for c, labs in adj.get(core[w], empty).items() if ys <= labs]
        for c in cands:
            if c in used or glab[c] != lab or godeg[c] < odeg or gideg[c] < ideg:
                continue
            ok = True
            if outs:
                cout = gout.get(c, empty)
                for w, ys in outs:
                    labs = cout.get(core[w])
                    if labs is None or not ys <= labs:
                        ok = False
                        break
            if ok and ins:
                cin = gin.get(c, empty)
                for w, ys in ins:
                    labs = cin.get(core[w])
                    if labs is None or not ys <= labs:
                        ok = False
                        break
            if ok and loops is not None:
                labs = gout.get(c, empty).get(c)
                ok = labs is not None and loops <= labs
            if not ok:
                continue
            state["nodes"] += 1
            if deadline is not None and state["nodes"] & 1023 == 0 and time.perf_counter() > deadline:
                raise CountTimeout(f"exceeded {timeout} s")
            core[pv] = c
            used.add(c)
            extend(i + 1)
            del core[pv]
            used.discard(c)

    if n == 0:
        state["count"] = 1
        if keep_mappings:
            found.append(())
    elif n <= g.num_vertices:
        extend(0)
    return CountResult(state["count"], found if keep_mappings else None,
                       time.perf_counter() - t0, state["nodes"])


def per_component_count(components: Sequence[Graph], p: Graph, **opts) -> CountResult:
    """Sum of :func:`vf2_count` over vertex-disjoint components."""
    t0 = time.perf_counter()
    keep = opts.get("keep_mappings", False)
    total, nodes = 0, 0
    maps: list[IsoMapping] = []
    max_count = opts.pop("max_count", None)
    for comp in components:
        left = None if max_count is None else max_count - total
        r = vf2_count(p, comp, max_count=left, **opts)
        total += r.count
        nodes += r.nodes_expanded
        if keep:
            maps.extend(r.mappings)
    return CountResult(total, maps if keep else None, time.perf_counter() - t0, nodes)


def _count_job(args):
    p, g, timeout = args
    try:
        r = vf2_count(p, g, timeout=timeout)
        return r.count, r.elapsed, r.nodes_expanded, None
    except CountTimeout as exc:
        return None, timeout, None, str(exc)


def count_many(pairs: Iterable[tuple[Graph, Graph]], *, jobs: int = 1,
               timeout: float | None = None) -> list[tuple]:
    """Count each (pattern, graph) pair; parallel across pairs when jobs > 1.

    Returns ``(count, elapsed, nodes, error)`` tuples, ``count`` being None on
    timeout.
    """
    work = [(p, g, timeout) for p, g in pairs]
    if jobs <= 1:
        return [_count_job(w) for w in work]
    from multiprocessing import Pool

    with Pool(jobs) as pool:
        return pool.map(_count_job, work, chunksize=max(1, len(work) // (4 * jobs)))
