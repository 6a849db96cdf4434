import json

import numpy as np
import pytest

from subcount.config import BUNDLED, DatasetConfig, load_config, parse_grid
from subcount.counting import vf2_count
from subcount.data import (
    MUTAG_SPLITS,
    generate_dataset,
    import_mutag,
    import_tu,
    load_dataset,
    mutag_patterns,
    save_dataset,
    split_graphs,
    verify_dataset,
)
from subcount.errors import InconsistentIndicator, LayoutError, MissingReference, ParseError
from subcount.generator import regenerate
from subcount.data import example_params
from subcount.graph import verify_mapping


@pytest.fixture(scope="module")
def tiny_cfg():
    cfg = load_config("small-desk")
    cfg.patterns = 4
    cfg.graphs_per_pattern = 25
    return cfg


@pytest.fixture(scope="module")
def tiny_ds(tiny_cfg):
    return generate_dataset(tiny_cfg, seed=5)


def test_parse_grid():
    assert parse_grid("8, 16, ..., 256") == [8, 16, 32, 64, 128, 256]
    assert parse_grid("0.2, 0.4, ..., 0.8", float) == [0.2, 0.4, 0.6, 0.8]
    assert parse_grid("3, 4, 8") == [3, 4, 8]
    with pytest.raises(ValueError):
        parse_grid("8, 16, ..., 100")


def test_bundled_configs_load():
    for name in BUNDLED:
        cfg = load_config(name)
        assert isinstance(cfg, DatasetConfig) and cfg.pattern_grid()
        for pp in cfg.pattern_grid():
            assert cfg.graph_grid(pp)
    small = load_config("small")
    assert small.max_count == 1024 and load_config("large").max_count == 4096


def test_large_desk_averages():
    cfg = load_config("large-desk")
    grid = cfg.graph_grid()
    assert np.mean([g.n_vertices for g in grid]) == 240
    assert np.mean([g.n_edges for g in grid]) == 560


def test_graph_grid_respects_degree_cap():
    for name in BUNDLED:
        for gp in load_config(name).graph_grid():
            assert gp.n_edges <= 4 * gp.n_vertices


def test_generated_dataset_shape(tiny_ds):
    assert len(tiny_ds) == 100
    assert [len(tiny_ds.pairs[s]) for s in ("train", "dev", "test")] == [80, 10, 10]
    assert not verify_dataset(tiny_ds)


def test_generation_deterministic(tiny_cfg, tiny_ds):
    again = generate_dataset(tiny_cfg, seed=5)
    assert again.graphs == tiny_ds.graphs and again.pairs == tiny_ds.pairs


def test_parallel_generation_matches_serial(tiny_cfg, tiny_ds):
    assert generate_dataset(tiny_cfg, seed=5, jobs=2).pairs == tiny_ds.pairs


def test_records_replay_from_seed(tiny_ds):
    for rec in tiny_ds.pairs["test"]:
        ex = regenerate(tiny_ds.patterns[rec.pattern_id], example_params(rec), rec.seed)
        assert ex.graph == tiny_ds.graphs[rec.graph_id] and ex.count == rec.count


def test_round_trip(tmp_path, tiny_ds):
    save_dataset(tiny_ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.patterns == tiny_ds.patterns and back.graphs == tiny_ds.graphs
    assert back.pairs == tiny_ds.pairs and back.meta == tiny_ds.meta
    rec = back.pairs["train"][0]
    p, g = back.patterns[rec.pattern_id], back.graphs[rec.graph_id]
    assert all(verify_mapping(p, g, tuple(m)) for m in rec.mappings)


def test_files_are_byte_stable(tmp_path, tiny_ds):
    save_dataset(tiny_ds, tmp_path / "a")
    save_dataset(load_dataset(tmp_path / "a"), tmp_path / "b")
    for f in ("patterns.jsonl", "graphs.jsonl", "train.jsonl", "manifest.json"):
        raw = (tmp_path / "a" / f).read_bytes()
        assert raw == (tmp_path / "b" / f).read_bytes() and b"\r\n" not in raw


def test_graph_record_layout(tmp_path, tiny_ds):
    save_dataset(tiny_ds, tmp_path)
    rec = json.loads((tmp_path / "graphs.jsonl").read_text().splitlines()[0])
    assert {"id", "vertices", "edges"} <= set(rec)
    pair = json.loads((tmp_path / "test.jsonl").read_text().splitlines()[0])
    assert {"pattern_id", "graph_id", "count", "mappings", "seed"} <= set(pair)


def test_truncated_line_reports_line_number(tmp_path, tiny_ds):
    save_dataset(tiny_ds, tmp_path)
    path = tmp_path / "dev.jsonl"
    lines = path.read_text().splitlines()
    lines[3] = lines[3][: len(lines[3]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as info:
        load_dataset(tmp_path)
    assert info.value.line == 4 and ":4:" in str(info.value)


def test_missing_reference(tmp_path, tiny_ds):
    save_dataset(tiny_ds, tmp_path)
    path = tmp_path / "test.jsonl"
    lines = path.read_text().splitlines()
    rec = json.loads(lines[0])
    rec["graph_id"] = "nope"
    lines[0] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(MissingReference):
        load_dataset(tmp_path)


# ------------------------------------------------------------------- TU

def write_tu(root, name, graphs):
    """graphs: list of (node_labels, undirected edges [(i, j, label)]) with local 0-based ids."""
    A, ind, nl, el = [], [], [], []
    offset = 0
    for gi, (labels, edges) in enumerate(graphs, 1):
        ind += [gi] * len(labels)
        nl += labels
        for i, j, y in edges:
            A += [(offset + i + 1, offset + j + 1), (offset + j + 1, offset + i + 1)]
            el += [y, y]
        offset += len(labels)
    root.mkdir(parents=True, exist_ok=True)
    (root / f"{name}_A.txt").write_text("".join(f"{a}, {b}\n" for a, b in A))
    (root / f"{name}_graph_indicator.txt").write_text("".join(f"{x}\n" for x in ind))
    (root / f"{name}_node_labels.txt").write_text("".join(f"{x}\n" for x in nl))
    (root / f"{name}_edge_labels.txt").write_text("".join(f"{x}\n" for x in el))


def _toy_graphs(rng, n):
    out = []
    for _ in range(n):
        k = int(rng.integers(4, 9))
        labels = rng.integers(0, 3, k).tolist()
        edges = [(i, int(rng.integers(0, i)), int(rng.integers(0, 2))) for i in range(1, k)]
        out.append((labels, edges))
    return out


def test_import_tu_symmetric(tmp_path):
    write_tu(tmp_path, "TOY", [([0, 1, 0], [(0, 1, 0), (1, 2, 1)]), ([2, 2], [(0, 1, 0)])])
    graphs = import_tu(tmp_path, "TOY")
    assert len(graphs) == 2
    assert sorted(graphs[0].edges) == [(0, 1, 0), (1, 0, 0), (1, 2, 1), (2, 1, 1)]
    assert graphs[1].vertices == ((0, 2), (1, 2)) and graphs[0].num_vertex_labels == 3


def test_import_tu_layout_errors(tmp_path):
    with pytest.raises(LayoutError):
        import_tu(tmp_path, "NONE")
    write_tu(tmp_path, "BAD", [([0, 1], [(0, 1, 0)])])
    (tmp_path / "BAD_graph_indicator.txt").write_text("1\n")
    with pytest.raises(InconsistentIndicator):
        import_tu(tmp_path, "BAD")


def test_import_mutag_layout(tmp_path):
    rng = np.random.default_rng(0)
    write_tu(tmp_path, "MUTAG", _toy_graphs(rng, 188))
    ds = import_mutag(tmp_path, n_patterns=24, seed=0)
    assert len(ds.graphs) == 188 and len(ds.patterns) == 24 and len(ds) == 4512
    by_split = {s: {r.graph_id for r in recs} for s, recs in ds.pairs.items()}
    assert [len(by_split[s]) for s in ("train", "dev", "test")] == list(MUTAG_SPLITS)
    assert not (by_split["train"] & by_split["dev"]) and not (by_split["dev"] & by_split["test"])
    rec = ds.pairs["dev"][7]
    assert rec.count == vf2_count(ds.patterns[rec.pattern_id], ds.graphs[rec.graph_id]).count


def test_mutag_patterns_distinct_and_connected():
    pats = mutag_patterns(24, seed=1)
    assert len({(p.vertices, p.edges) for p in pats}) == 24
    assert all(p.is_weakly_connected for p in pats)


def test_split_graphs():
    parts = split_graphs(10, (4, 3, 3), seed=0)
    assert sorted(np.concatenate(parts).tolist()) == list(range(10))
    with pytest.raises(ValueError):
        split_graphs(10, (4, 4, 4), seed=0)
