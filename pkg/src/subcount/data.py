"""Dataset generation, line-delimited JSON storage and TU-format import.

On disk a dataset is a directory holding

* ``patterns.jsonl`` and ``graphs.jsonl``: one graph record per line,
  ``{"id", "vertices": [[id, label], ...], "edges": [[src, dst, label], ...],
  "num_vertex_labels", "num_edge_labels"}``;
* ``<split>.jsonl`` for every split: one pair record per line,
  ``{"pattern_id", "graph_id", "count", "mappings", "seed", "params"}``;
* ``manifest.json`` naming the splits and the generating config.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import EncodingSpec, spec_for_graphs
from .config import DatasetConfig
from .counting import vf2_count
from .errors import (
    CapExceededAfterRetries,
    InconsistentIndicator,
    LayoutError,
    MissingReference,
    ParseError,
)
from .generator import (
    GraphParams,
    PatternParams,
    derive_seed,
    generate_graph,
    generate_pattern,
    make_rng,
)
from .graph import Graph, build_graph

SPLITS = ("train", "dev", "test")


@dataclass
class PairRecord:
    pattern_id: str
    graph_id: str
    count: int
    mappings: list = field(default_factory=list)
    seed: int | None = None
    params: dict | None = None


@dataclass
class Dataset:
    patterns: dict[str, Graph]
    graphs: dict[str, Graph]
    pairs: dict[str, list[PairRecord]]
    meta: dict = field(default_factory=dict)

    def triples(self, split: str) -> list[tuple[Graph, Graph, int]]:
        return [(self.patterns[r.pattern_id], self.graphs[r.graph_id], r.count)
                for r in self.pairs.get(split, [])]

    def specs(self, base: int = 2) -> tuple[EncodingSpec, EncodingSpec]:
        return (spec_for_graphs(self.patterns.values(), base),
                spec_for_graphs(self.graphs.values(), base))

    def __len__(self):
        return sum(len(v) for v in self.pairs.values())


# ------------------------------------------------------------ serialization

def graph_to_record(gid: str, g: Graph) -> dict:
    return {"id": gid, "vertices": [list(v) for v in g.vertices], "edges": [list(e) for e in g.edges],
            "num_vertex_labels": g.num_vertex_labels, "num_edge_labels": g.num_edge_labels}


def graph_from_record(rec: dict) -> Graph:
    return build_graph([tuple(v) for v in rec["vertices"]], [tuple(e) for e in rec["edges"]],
                       rec.get("num_vertex_labels"), rec.get("num_edge_labels"))


def _dump_lines(path: Path, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def _read_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc.msg}", line=lineno, path=str(path)) from exc
            if not isinstance(rec, dict):
                raise ParseError(f"{path}:{lineno}: expected an object", line=lineno, path=str(path))
            yield lineno, rec


def save_dataset(ds: Dataset, root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    _dump_lines(root / "patterns.jsonl", (graph_to_record(k, g) for k, g in ds.patterns.items()))
    _dump_lines(root / "graphs.jsonl", (graph_to_record(k, g) for k, g in ds.graphs.items()))
    for split, recs in ds.pairs.items():
        _dump_lines(root / f"{split}.jsonl", (asdict(r) for r in recs))
    manifest = {"splits": list(ds.pairs), "meta": ds.meta,
                "sizes": {s: len(r) for s, r in ds.pairs.items()}}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return root


def _load_graphs(path: Path) -> dict[str, Graph]:
    out = {}
    for lineno, rec in _read_lines(path):
        try:
            out[str(rec["id"])] = graph_from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: bad graph record ({exc})", line=lineno,
                             path=str(path)) from exc
    return out


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    patterns = _load_graphs(root / "patterns.jsonl")
    graphs = _load_graphs(root / "graphs.jsonl")
    pairs = {}
    for split in manifest["splits"]:
        path = root / f"{split}.jsonl"
        recs = []
        for lineno, rec in _read_lines(path):
            try:
                r = PairRecord(str(rec["pattern_id"]), str(rec["graph_id"]), int(rec["count"]),
                               [[tuple(pair) for pair in m] for m in rec.get("mappings", [])],
                               rec.get("seed"), rec.get("params"))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: bad pair record ({exc})", line=lineno,
                                 path=str(path)) from exc
            if r.pattern_id not in patterns:
                raise MissingReference(f"{path}:{lineno}: unknown pattern id {r.pattern_id!r}")
            if r.graph_id not in graphs:
                raise MissingReference(f"{path}:{lineno}: unknown graph id {r.graph_id!r}")
            if r.count < 0:
                raise ParseError(f"{path}:{lineno}: negative count", line=lineno, path=str(path))
            recs.append(r)
        pairs[split] = recs
    return Dataset(patterns, graphs, pairs, manifest.get("meta", {}))


def verify_dataset(ds: Dataset, timeout: float | None = None) -> list[tuple[str, int, int]]:
    """Recount every pair; returns ``(split, recorded, recounted)`` for mismatches."""
    bad = []
    for split, recs in ds.pairs.items():
        for r in recs:
            c = vf2_count(ds.patterns[r.pattern_id], ds.graphs[r.graph_id], timeout=timeout).count
            if c != r.count:
                bad.append((split, r.count, c))
    return bad


# --------------------------------------------------------------- generation

def _pick(grid: Sequence, rng):
    return grid[int(rng.integers(len(grid)))]


def make_patterns(cfg: DatasetConfig, seed: int | None = None) -> list[Graph]:
    """``cfg.patterns`` distinct patterns drawn from the pattern grid."""
    seed = cfg.seed if seed is None else seed
    grid = cfg.pattern_grid()
    out, seen = [], set()
    attempt = 0
    while len(out) < cfg.patterns:
        rng = make_rng(derive_seed(seed, 0, attempt))
        attempt += 1
        p = generate_pattern(_pick(grid, rng), rng)
        key = (tuple(p.vertices), tuple(p.edges))
        if key in seen and attempt < 100 * cfg.patterns:
            continue
        seen.add(key)
        out.append(p)
    return out


def _pattern_params(p: Graph) -> PatternParams:
    return PatternParams(p.num_vertices, p.num_edges, p.num_vertex_labels, p.num_edge_labels)


def _graph_job(args):
    p, grid, seed, pi, gi = args
    for attempt in range(20):
        rng = make_rng(derive_seed(seed, 2, pi, gi, attempt))
        gp = _pick(grid, rng)
        s = derive_seed(seed, 1, pi, gi, attempt)
        try:
            ex = generate_graph(p, gp, make_rng(s), seed=s)
        except CapExceededAfterRetries:
            continue
        return ex
    raise CapExceededAfterRetries(f"pattern {pi} graph {gi}: no admissible parameters")


def generate_dataset(cfg: DatasetConfig, seed: int | None = None, jobs: int = 1,
                     patterns: list[Graph] | None = None, keep_mappings: bool = True) -> Dataset:
    """Generate ``cfg.graphs_per_pattern`` graphs per pattern and split the pairs."""
    seed = cfg.seed if seed is None else seed
    patterns = patterns if patterns is not None else make_patterns(cfg, seed)
    work = []
    for pi, p in enumerate(patterns):
        grid = cfg.graph_grid(_pattern_params(p))
        if not grid:
            raise ValueError(f"no graph parameters can host pattern {pi}")
        work.extend((p, grid, seed, pi, gi) for gi in range(cfg.graphs_per_pattern))
    if jobs <= 1:
        examples = [_graph_job(w) for w in work]
    else:
        from multiprocessing import Pool

        with Pool(jobs) as pool:
            examples = pool.map(_graph_job, work, chunksize=max(1, len(work) // (8 * jobs)))
    pat_ids = {pi: f"p{pi}" for pi in range(len(patterns))}
    graphs, recs = {}, []
    for (p, _, _, pi, gi), ex in zip(work, examples):
        gid = f"g{pi}_{gi}"
        graphs[gid] = ex.graph
        maps = [list(m) for m in ex.mappings] if keep_mappings else []
        recs.append(PairRecord(pat_ids[pi], gid, ex.count, maps, ex.seed, asdict(ex.params)))
    order = make_rng(derive_seed(seed, 3)).permutation(len(recs))
    n_train = int(round(cfg.splits[0] * len(recs)))
    n_dev = int(round(cfg.splits[1] * len(recs)))
    cuts = {"train": order[:n_train], "dev": order[n_train:n_train + n_dev],
            "test": order[n_train + n_dev:]}
    pairs = {s: [recs[i] for i in sorted(idx)] for s, idx in cuts.items()}
    return Dataset({pat_ids[i]: p for i, p in enumerate(patterns)}, graphs, pairs,
                   {"config": cfg.name, "seed": seed})


def example_params(rec: PairRecord) -> GraphParams:
    return GraphParams(**rec.params)


# --------------------------------------------------------------- TU import

def _read_ints(path: Path, width: int | None = None) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                vals = [int(x) for x in line.replace(",", " ").split()]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}", line=lineno, path=str(path)) from exc
            if width is not None and len(vals) != width:
                raise ParseError(f"{path}:{lineno}: expected {width} values", line=lineno, path=str(path))
            rows.append(vals)
    return np.asarray(rows, dtype=np.int64)


def import_tu(root, name: str) -> list[Graph]:
    """Read a TU-layout dataset; undirected edges become both directed pairs.

    Node and edge labels are shifted so the smallest label is 0; vertex ids
    are renumbered from 0 within each graph.
    """
    root = Path(root)
    files = {k: root / f"{name}_{k}.txt" for k in ("A", "graph_indicator", "node_labels", "edge_labels")}
    for key in ("A", "graph_indicator", "node_labels"):
        if not files[key].exists():
            raise LayoutError(f"missing {files[key].name} in {root}")
    A = _read_ints(files["A"], 2)
    indicator = _read_ints(files["graph_indicator"], 1)[:, 0]
    node_labels = _read_ints(files["node_labels"])[:, 0]
    edge_labels = (_read_ints(files["edge_labels"])[:, 0] if files["edge_labels"].exists()
                   else np.zeros(len(A), dtype=np.int64))
    if len(node_labels) != len(indicator):
        raise InconsistentIndicator("node label and graph indicator files differ in length")
    if len(edge_labels) != len(A):
        raise InconsistentIndicator("edge label and adjacency files differ in length")
    if len(indicator) and np.any(np.diff(indicator) < 0):
        raise InconsistentIndicator("graph indicator is not sorted by graph")
    node_labels = node_labels - node_labels.min() if len(node_labels) else node_labels
    edge_labels = edge_labels - edge_labels.min() if len(edge_labels) else edge_labels
    nvl = int(node_labels.max()) + 1 if len(node_labels) else 1
    nel = int(edge_labels.max()) + 1 if len(edge_labels) else 1
    graph_ids = np.unique(indicator)
    start = {int(g): int(np.searchsorted(indicator, g)) for g in graph_ids}
    edges_of: dict[int, set] = {int(g): set() for g in graph_ids}
    for (a, b), y in zip(A, edge_labels):
        if not (1 <= a <= len(indicator) and 1 <= b <= len(indicator)):
            raise InconsistentIndicator(f"edge ({a}, {b}) refers to an unknown node")
        ga, gb = int(indicator[a - 1]), int(indicator[b - 1])
        if ga != gb:
            raise InconsistentIndicator(f"edge ({a}, {b}) joins graphs {ga} and {gb}")
        u, v = a - 1 - start[ga], b - 1 - start[ga]
        edges_of[ga].add((u, v, int(y)))
        edges_of[ga].add((v, u, int(y)))
    out = []
    for g in graph_ids:
        g = int(g)
        lo = start[g]
        n = int((indicator == g).sum())
        vertices = [(i, int(node_labels[lo + i])) for i in range(n)]
        out.append(build_graph(vertices, sorted(e for e in edges_of[g] if e[0] != e[1]), nvl, nel))
    return out


def split_graphs(n: int, sizes: Sequence[int], seed: int) -> list[np.ndarray]:
    if sum(sizes) != n:
        raise ValueError(f"split sizes {sizes} do not add up to {n}")
    order = make_rng(seed).permutation(n)
    out, pos = [], 0
    for s in sizes:
        out.append(np.sort(order[pos:pos + s]))
        pos += s
    return out


MUTAG_SPLITS = (62, 63, 63)
MUTAG_PATTERN_GRID = [PatternParams(nv, ne, lv, le)
                      for nv in (3, 4) for ne in (nv - 1, nv) for lv in (1, 2) for le in (1, 2)]


def mutag_patterns(n: int = 24, seed: int = 0) -> list[Graph]:
    out, seen, attempt = [], set(), 0
    while len(out) < n:
        rng = make_rng(derive_seed(seed, 4, attempt))
        attempt += 1
        p = generate_pattern(_pick(MUTAG_PATTERN_GRID, rng), rng)
        key = (tuple(p.vertices), tuple(p.edges))
        if key in seen and attempt < 1000:
            continue
        seen.add(key)
        out.append(p)
    return out


def import_mutag(root, name: str = "MUTAG", n_patterns: int = 24, seed: int = 0,
                 split_sizes: Sequence[int] | None = None) -> Dataset:
    """Pair every imported graph with every generated pattern.

    Graphs are split into train/dev/test by graph (62/63/63 for the 188
    MUTAG graphs, proportional otherwise), so no graph crosses splits.
    """
    graphs = import_tu(root, name)
    n = len(graphs)
    if split_sizes is None:
        if n == sum(MUTAG_SPLITS):
            split_sizes = MUTAG_SPLITS
        else:
            a = n // 3
            split_sizes = (n - 2 * a, a, a)
    patterns = mutag_patterns(n_patterns, seed)
    pat = {f"p{i}": p for i, p in enumerate(patterns)}
    gs = {f"g{i}": g for i, g in enumerate(graphs)}
    pairs = {}
    for split, idx in zip(SPLITS, split_graphs(n, split_sizes, derive_seed(seed, 5))):
        recs = []
        for gi in idx:
            for pid, p in pat.items():
                c = vf2_count(p, graphs[gi]).count
                recs.append(PairRecord(pid, f"g{gi}", c, [], None, None))
        pairs[split] = recs
    return Dataset(pat, gs, pairs, {"source": name, "seed": seed})
