"""Turn (pattern, graph) pairs into padded model inputs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .codec import EncodingSpec, encode_sequence, extend_encoding, extend_label_encoding, vertex_features
from .graph import Graph
from .numkit import DTYPE

SEQUENCE = "sequence"
GRAPH = "graph"


@dataclass
class EncodedPair:
    view: str
    pattern: tuple  # sequence: (rows,)  graph: (features, edges[E, 3])
    graph: tuple
    sizes: np.ndarray  # |V_P|, |E_P|, |V_G|, |E_G|
    count: float
    labels: tuple[int, int] = (0, 0)  # vertex / edge label alphabet sizes of the graph


def _graph_view(g: Graph, spec: EncodingSpec):
    vf = vertex_features(g, spec)
    edges = np.stack([vf.src, vf.dst, vf.rel], axis=1) if len(vf.src) else np.zeros((0, 3), np.int64)
    return vf.features, edges


def encode_pair(pattern: Graph, graph: Graph, count: float, view: str,
                pattern_spec: EncodingSpec, graph_spec: EncodingSpec) -> EncodedPair:
    sizes = np.array([pattern.num_vertices, pattern.num_edges, graph.num_vertices, graph.num_edges],
                     dtype=np.float64)
    labels = (graph.num_vertex_labels, graph.num_edge_labels)
    if view == SEQUENCE:
        return EncodedPair(view, (encode_sequence(pattern, pattern_spec),),
                           (encode_sequence(graph, graph_spec),), sizes, float(count), labels)
    if view == GRAPH:
        return EncodedPair(view, _graph_view(pattern, pattern_spec), _graph_view(graph, graph_spec),
                           sizes, float(count), labels)
    raise ValueError(f"unknown view {view!r}")


def extend_pair(enc: EncodedPair, old_p: EncodingSpec, new_p: EncodingSpec,
                old_g: EncodingSpec, new_g: EncodingSpec) -> EncodedPair:
    """Re-express an encoded pair under wider specs."""
    if enc.view == SEQUENCE:
        return EncodedPair(enc.view, (extend_encoding(enc.pattern[0], old_p, new_p),),
                           (extend_encoding(enc.graph[0], old_g, new_g),), enc.sizes, enc.count,
                           enc.labels)
    return EncodedPair(enc.view, (extend_label_encoding(enc.pattern[0], old_p, new_p), enc.pattern[1]),
                       (extend_label_encoding(enc.graph[0], old_g, new_g), enc.graph[1]),
                       enc.sizes, enc.count, enc.labels)


@dataclass
class SeqSide:
    x: torch.Tensor  # (B, L, d)
    lengths: torch.Tensor  # (B,)


@dataclass
class GraphSide:
    x: torch.Tensor  # (N, d) all vertices of the batch
    src: torch.Tensor
    dst: torch.Tensor
    rel: torch.Tensor
    batch: torch.Tensor  # owning batch member of each vertex
    pos: torch.Tensor  # position of each vertex within its member
    lengths: torch.Tensor


@dataclass
class Batch:
    view: str
    pattern: SeqSide | GraphSide
    graph: SeqSide | GraphSide
    sizes: torch.Tensor  # (B, 4)
    y: torch.Tensor  # (B,)

    def __len__(self):
        return self.y.shape[0]


def _collate_seq(mats: list[np.ndarray], width: int) -> SeqSide:
    lengths = [max(m.shape[0], 1) for m in mats]
    L = max(lengths)
    x = np.zeros((len(mats), L, width))
    for i, m in enumerate(mats):
        x[i, : m.shape[0]] = m
    return SeqSide(torch.from_numpy(x).to(DTYPE), torch.tensor(lengths, dtype=torch.long))


def _collate_graph(sides: list[tuple]) -> GraphSide:
    feats, srcs, dsts, rels, batch, pos = [], [], [], [], [], []
    offset = 0
    lengths = []
    for b, (f, e) in enumerate(sides):
        n = f.shape[0]
        feats.append(f)
        srcs.append(e[:, 0] + offset)
        dsts.append(e[:, 1] + offset)
        rels.append(e[:, 2])
        batch.append(np.full(n, b))
        pos.append(np.arange(n))
        lengths.append(n)
        offset += n
    cat = lambda parts: torch.from_numpy(np.concatenate(parts).astype(np.int64))  # noqa: E731
    return GraphSide(torch.from_numpy(np.concatenate(feats)).to(DTYPE), cat(srcs), cat(dsts), cat(rels),
                     cat(batch), cat(pos), torch.tensor(lengths, dtype=torch.long))


def collate(pairs: list[EncodedPair]) -> Batch:
    view = pairs[0].view
    if view == SEQUENCE:
        wp = pairs[0].pattern[0].shape[1]
        wg = pairs[0].graph[0].shape[1]
        p = _collate_seq([e.pattern[0] for e in pairs], wp)
        g = _collate_seq([e.graph[0] for e in pairs], wg)
    else:
        p = _collate_graph([e.pattern for e in pairs])
        g = _collate_graph([e.graph for e in pairs])
    sizes = torch.from_numpy(np.stack([e.sizes for e in pairs])).to(DTYPE)
    y = torch.tensor([e.count for e in pairs], dtype=DTYPE)
    return Batch(view, p, g, sizes, y)


def batches(pairs: list[EncodedPair], batch_size: int, rng: np.random.Generator | None = None):
    """Yield collated batches, shuffled when ``rng`` is given."""
    order = np.arange(len(pairs)) if rng is None else rng.permutation(len(pairs))
    for i in range(0, len(pairs), batch_size):
        yield collate([pairs[j] for j in order[i:i + batch_size]])


def num_batches(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)
