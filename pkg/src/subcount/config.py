"""Dataset grid configuration files (INI syntax).

Sections:

``[pattern]`` and ``[graph]``
    Comma-separated value grids.  ``a, b, ..., c`` expands a doubling
    sequence, e.g. ``8, 16, ..., 256``.
``[dataset]``
    ``patterns``, ``graphs_per_pattern``, ``max_count``, ``max_avg_degree``,
    ``splits`` (train/dev/test fractions), ``seed``.
"""
from __future__ import annotations

import configparser
import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .generator import GraphParams, PatternParams
from .errors import InfeasibleParams

BUNDLED = ("small", "large", "small-desk", "large-desk", "shift")


def parse_grid(text: str, cast=int) -> list:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if "..." in items:
        i = items.index("...")
        if i < 2 or i != len(items) - 2:
            raise ValueError(f"bad grid {text!r}: '...' needs two leading values and one end value")
        a, b, end = cast(items[i - 2]), cast(items[i - 1]), cast(items[i + 1])
        head = [cast(x) for x in items[: i - 2]]
        seq = [a, b]
        if b / a > 1 and cast is int and b % a == 0:
            ratio = b // a
            while seq[-1] * ratio <= end:
                seq.append(seq[-1] * ratio)
        else:
            step = b - a
            while seq[-1] + step <= end + 1e-12:
                seq.append(cast(round(seq[-1] + step, 10)))
        if seq[-1] != end:
            raise ValueError(f"bad grid {text!r}: sequence does not reach {end}")
        return head + seq
    return [cast(x) for x in items]


@dataclass
class DatasetConfig:
    name: str
    pattern_vertices: list[int]
    pattern_edges: list[int]
    pattern_vertex_labels: list[int]
    pattern_edge_labels: list[int]
    graph_vertices: list[int]
    graph_edges: list[int]
    graph_vertex_labels: list[int]
    graph_edge_labels: list[int]
    alpha: list[float]
    beta: list[float]
    patterns: int
    graphs_per_pattern: int
    max_count: int = 1024
    max_avg_degree: float = 4.0
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def total_pairs(self) -> int:
        return self.patterns * self.graphs_per_pattern

    def pattern_grid(self) -> list[PatternParams]:
        out = []
        for nv, ne, lv, le in itertools.product(self.pattern_vertices, self.pattern_edges,
                                                self.pattern_vertex_labels, self.pattern_edge_labels):
            pp = PatternParams(nv, ne, lv, le)
            try:
                pp.check()
            except InfeasibleParams:
                continue
            out.append(pp)
        return out

    def graph_grid(self, pattern: PatternParams | None = None) -> list[GraphParams]:
        """Admissible graph parameters, optionally restricted to those that
        can host ``pattern`` (graph at least as large and label-rich)."""
        out = []
        for nv, ne, lv, le, a, b in itertools.product(
                self.graph_vertices, self.graph_edges, self.graph_vertex_labels,
                self.graph_edge_labels, self.alpha, self.beta):
            if ne < nv or ne > self.max_avg_degree * nv:
                continue
            if pattern is not None and (nv < pattern.n_vertices or ne < pattern.n_edges
                                        or lv < pattern.n_vertex_labels
                                        or le < pattern.n_edge_labels):
                continue
            out.append(GraphParams(nv, ne, lv, le, a, b, self.max_count, self.max_avg_degree))
        return out


def _bundled_path(name: str) -> Path:
    return Path(str(resources.files("subcount") / "configs" / f"{name}.cfg"))


def load_config(path_or_name) -> DatasetConfig:
    """Load a config file, or a bundled one by name (``small``, ``large-desk``...)."""
    path = Path(path_or_name)
    if not path.exists() and str(path_or_name) in BUNDLED:
        path = _bundled_path(str(path_or_name))
    cp = configparser.ConfigParser()
    if not cp.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"config {path_or_name!r} not found")
    p, g, d = cp["pattern"], cp["graph"], cp["dataset"]
    splits = tuple(parse_grid(d.get("splits", "0.8, 0.1, 0.1"), float))
    if len(splits) != 3 or abs(sum(splits) - 1.0) > 1e-9:
        raise ValueError("splits must be three fractions summing to 1")
    extra = {s: dict(cp[s]) for s in cp.sections() if s not in ("pattern", "graph", "dataset")}
    return DatasetConfig(
        name=path.stem,
        pattern_vertices=parse_grid(p["n_vertices"]),
        pattern_edges=parse_grid(p["n_edges"]),
        pattern_vertex_labels=parse_grid(p["n_vertex_labels"]),
        pattern_edge_labels=parse_grid(p["n_edge_labels"]),
        graph_vertices=parse_grid(g["n_vertices"]),
        graph_edges=parse_grid(g["n_edges"]),
        graph_vertex_labels=parse_grid(g["n_vertex_labels"]),
        graph_edge_labels=parse_grid(g["n_edge_labels"]),
        alpha=parse_grid(g["alpha"], float),
        beta=parse_grid(g.get("beta", "512"), float),
        patterns=d.getint("patterns"),
        graphs_per_pattern=d.getint("graphs_per_pattern"),
        max_count=d.getint("max_count", 1024),
        max_avg_degree=d.getfloat("max_avg_degree", 4.0),
        splits=splits,
        seed=d.getint("seed", 0),
        extra=extra,
    )
