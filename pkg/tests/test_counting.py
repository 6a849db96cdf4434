import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from subcount.counting import count_brute_force, count_many, match_order, per_component_count, vf2_count
from subcount.errors import CountCapExceeded, CountTimeout, SizeGuardExceeded
from subcount.graph import build_graph, remap_vertex_ids, verify_mapping

from conftest import graphs, random_connected_pattern, random_graph


def complete_digraph(n, label=0):
    return build_graph([(v, label) for v in range(n)],
                       [(u, v, 0) for u in range(n) for v in range(n) if u != v], label + 1, 1)


def test_triangle_in_triangle(triangle):
    assert count_brute_force(triangle, triangle).count == 3
    assert vf2_count(triangle, triangle).count == 3


def test_single_vertex_pattern():
    p = build_graph([(0, 1)], [], 2, 1)
    g = build_graph([(0, 1), (1, 0), (2, 1), (3, 0), (4, 0)], [], 2, 1)
    assert count_brute_force(p, g).count == 2
    assert vf2_count(p, g).count == 2


def test_pattern_larger_than_graph():
    p = complete_digraph(4)
    g = complete_digraph(3)
    assert count_brute_force(p, g).count == 0
    assert vf2_count(p, g).count == 0


def test_single_edge_in_complete_digraph():
    p = build_graph([(0, 0), (1, 0)], [(0, 1, 0)], 1, 1)
    assert vf2_count(p, complete_digraph(3)).count == 6


def test_edgeless_pair_counts_ordered_pairs():
    p = build_graph([(0, 0), (1, 0)], [], 1, 1)
    g = build_graph([(0, 0), (1, 0), (2, 0)], [], 1, 1)
    assert vf2_count(p, g).count == 6
    assert count_brute_force(p, g).count == 6


def test_parallel_edges_need_every_label():
    p = build_graph([(0, 0), (1, 0)], [(0, 1, 0), (0, 1, 1)], 1, 2)
    g1 = build_graph([(0, 0), (1, 0)], [(0, 1, 0)], 1, 2)
    g2 = build_graph([(0, 0), (1, 0)], [(0, 1, 0), (0, 1, 1)], 1, 2)
    assert vf2_count(p, g1).count == 0
    assert vf2_count(p, g2).count == 1


def test_self_loops_matched():
    p = build_graph([(0, 0)], [(0, 0, 0)], 1, 1)
    g = build_graph([(0, 0), (1, 0)], [(0, 0, 0), (0, 1, 0)], 1, 1)
    assert vf2_count(p, g).count == count_brute_force(p, g).count == 1


def test_brute_force_size_guard():
    g = complete_digraph(13)
    with pytest.raises(SizeGuardExceeded):
        count_brute_force(build_graph([(0, 0)], [], 1, 1), g)
    assert count_brute_force(build_graph([(0, 0)], [], 1, 1), g, max_graph_vertices=13).count == 13


def test_mappings_are_verified(triangle):
    g = build_graph([(v, 0) for v in range(6)],
                    [(0, 1, 0), (1, 2, 0), (2, 0, 0), (3, 4, 0), (4, 5, 0), (5, 3, 0), (2, 3, 0)], 1, 1)
    r = vf2_count(triangle, g, keep_mappings=True)
    assert r.count == len(r.mappings) == 6
    assert len(set(r.mappings)) == 6
    assert all(verify_mapping(triangle, g, m) for m in r.mappings)


def test_match_order_degree_then_id():
    # star centred on 2: the hub goes first, then leaves by id
    p = build_graph([(v, 0) for v in range(4)], [(2, 0, 0), (2, 1, 0), (3, 2, 0)], 1, 1)
    assert match_order(p) == [2, 0, 1, 3]


def test_oracle_equivalence_random():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        g = random_graph(rng, int(rng.integers(1, 9)), int(rng.integers(0, 20)),
                         int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        p = random_connected_pattern(rng, int(rng.integers(1, 5)), int(rng.integers(0, 7)),
                                     int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        assert vf2_count(p, g).count == count_brute_force(p, g).count


@given(graphs(max_vertices=6, max_edges=14), graphs(max_vertices=3, max_edges=5, min_vertices=1))
def test_oracle_equivalence_property(g, p):
    assert vf2_count(p, g).count == count_brute_force(p, g).count


@given(graphs(max_vertices=7, max_edges=14), st.randoms(use_true_random=False))
def test_isomorphism_invariance(g, rnd):
    p = build_graph([(0, 0), (1, 0)], [(0, 1, 0)], 1, 1)
    ids = list(g.vertex_ids)
    images = list(ids)
    rnd.shuffle(images)
    h = remap_vertex_ids(g, dict(zip(ids, images)))
    assert vf2_count(p, g).count == vf2_count(p, h).count
    tri = build_graph([(0, 0), (1, 0), (2, 0)], [(0, 1, 0), (1, 2, 0)], 1, 1)
    assert vf2_count(tri, g).count == vf2_count(tri, h).count


@given(graphs(max_vertices=6, max_edges=14, min_vertices=2), st.data())
def test_edge_deletion_monotone(g, data):
    if not g.edges:
        return
    drop = data.draw(st.integers(0, g.num_edges - 1))
    h = build_graph(g.vertices, [e for i, e in enumerate(g.edges) if i != drop],
                    g.num_vertex_labels, g.num_edge_labels)
    p = build_graph([(0, 0), (1, 0), (2, 0)], [(0, 1, 0), (2, 1, 0)], 1, 1)
    assert vf2_count(p, h).count <= vf2_count(p, g).count


def test_per_component_two_triangles(triangle):
    shifted = remap_vertex_ids(triangle, {0: 3, 1: 4, 2: 5})
    r = per_component_count([triangle, shifted], triangle, keep_mappings=True)
    assert r.count == 6 and len(r.mappings) == 6
    union = build_graph(triangle.vertices + shifted.vertices, triangle.edges + shifted.edges, 1, 1)
    assert count_brute_force(triangle, union).count == 6


def test_per_component_empty_component(triangle):
    empty = build_graph([], [], 1, 1)
    assert per_component_count([triangle, empty], triangle).count == 3


def test_per_component_matches_merged():
    rng = np.random.default_rng(5)
    for _ in range(30):
        a = random_graph(rng, 5, 8, 2, 2)
        b = random_graph(rng, 5, 8, 2, 2, ids=range(5, 10))
        p = random_connected_pattern(rng, 3, 3, 2, 2)
        merged = build_graph(a.vertices + b.vertices, a.edges + b.edges, 2, 2)
        assert per_component_count([a, b], p).count == vf2_count(p, merged).count


def test_max_count_cap():
    p = build_graph([(0, 0), (1, 0)], [], 1, 1)
    with pytest.raises(CountCapExceeded):
        vf2_count(p, complete_digraph(5), max_count=10)
    assert vf2_count(p, complete_digraph(5), max_count=20).count == 20


def test_timeout():
    p = build_graph([(v, 0) for v in range(6)], [], 1, 1)
    g = build_graph([(v, 0) for v in range(40)], [], 1, 1)
    with pytest.raises(CountTimeout):
        vf2_count(p, g, timeout=0.05)


def test_count_many_reports_timeouts():
    p = build_graph([(v, 0) for v in range(6)], [], 1, 1)
    slow = build_graph([(v, 0) for v in range(40)], [], 1, 1)
    tri = complete_digraph(3)
    out = count_many([(tri, tri), (p, slow)], timeout=0.05)
    assert out[0][0] == 6 and out[0][3] is None
    assert out[1][0] is None and out[1][3] is not None


def test_count_many_parallel_matches_serial():
    rng = np.random.default_rng(8)
    pairs = [(random_connected_pattern(rng, 3, 3, 2, 2), random_graph(rng, 8, 16, 2, 2)) for _ in range(12)]
    serial = [r[0] for r in count_many(pairs, jobs=1)]
    parallel = [r[0] for r in count_many(pairs, jobs=2)]
    assert serial == parallel


def test_result_instrumentation(triangle):
    r = vf2_count(triangle, triangle)
    assert r.elapsed >= 0 and r.nodes_expanded >= 3
    bf = count_brute_force(triangle, triangle)
    assert bf.nodes_expanded == len(list(itertools.permutations(range(3), 3)))
