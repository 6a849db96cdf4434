import numpy as np
import pytest
from hypothesis import settings, strategies as st

from subcount.graph import build_graph

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_graph(rng, n_vertices, n_edges, n_vlabels, n_elabels, ids=None, self_loops=False):
    """Uniform random labelled multigraph without duplicate triples."""
    ids = list(range(n_vertices)) if ids is None else list(ids)
    vertices = [(v, int(rng.integers(n_vlabels))) for v in ids]
    slots = [(u, v, y) for u in ids for v in ids for y in range(n_elabels) if self_loops or u != v]
    n_edges = min(n_edges, len(slots))
    pick = rng.choice(len(slots), size=n_edges, replace=False) if n_edges else []
    edges = [slots[i] for i in pick]
    return build_graph(vertices, edges, n_vlabels, n_elabels)


def random_connected_pattern(rng, n_vertices, n_edges, n_vlabels, n_elabels):
    """Random weakly connected pattern: random tree plus extra triples."""
    vertices = [(v, int(rng.integers(n_vlabels))) for v in range(n_vertices)]
    edges = set()
    for v in range(1, n_vertices):
        u = int(rng.integers(v))
        edges.add((u, v, int(rng.integers(n_elabels))) if rng.random() < 0.5
                  else (v, u, int(rng.integers(n_elabels))))
    slots = [(u, v, y) for u in range(n_vertices) for v in range(n_vertices)
             for y in range(n_elabels) if u != v and (u, v, y) not in edges]
    extra = max(0, min(n_edges - len(edges), len(slots)))
    for i in rng.choice(len(slots), size=extra, replace=False) if extra else []:
        edges.add(slots[i])
    return build_graph(vertices, sorted(edges), n_vlabels, n_elabels)


@st.composite
def graphs(draw, max_vertices=8, max_edges=16, max_vlabels=3, max_elabels=3, min_vertices=0):
    n = draw(st.integers(min_vertices, max_vertices))
    nvl = draw(st.integers(1, max_vlabels))
    nel = draw(st.integers(1, max_elabels))
    labels = draw(st.lists(st.integers(0, nvl - 1), min_size=n, max_size=n))
    if n:
        triple = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1), st.integers(0, nel - 1))
        edges = draw(st.lists(triple, max_size=max_edges, unique=True))
    else:
        edges = []
    return build_graph(list(enumerate(labels)), edges, nvl, nel)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def triangle():
    return build_graph([(0, 0), (1, 0), (2, 0)], [(0, 1, 0), (1, 2, 0), (2, 0, 0)], 1, 1)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
