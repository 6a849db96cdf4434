"""Sequence-view and graph-view encodings.

Sequence view: every edge becomes a 5-tuple ``(u, v, X(u), y, X(v))``; the
tuples are sorted into the minimum code and each field is written as
B-nary digits (most significant first), one one-hot group of width B per
digit.  Graph view: vertex labels get the same digit encoding and edges are
kept as per-label adjacency lists.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, Sequence

import numpy as np

from .errors import IncompatibleSpecs, ValueExceedsSpec
from .graph import Graph


class EdgeTuple(NamedTuple):
    u: int
    v: int
    xu: int
    y: int
    xv: int


Code = list[EdgeTuple]


class Order(IntEnum):
    LT = -1
    EQ = 0
    GT = 1


def to_tuples(g: Graph) -> Code:
    lab = g.label
    return [EdgeTuple(u, v, lab[u], y, lab[v]) for u, v, y in g.edges]


def _tuple_key(t):
    return (t[0], t[1], t[3], t[2], t[4])


def compare_tuple(a: Sequence[int], b: Sequence[int]) -> Order:
    """Order on edges by source id, then target id, then edge label.

    Remaining ties are broken on the source and target labels so that the
    order is total even across graphs.
    """
    ka, kb = _tuple_key(a), _tuple_key(b)
    if ka < kb:
        return Order.LT
    if ka > kb:
        return Order.GT
    return Order.EQ


def compare_code(a: Sequence[Sequence[int]], b: Sequence[Sequence[int]]) -> Order:
    """Lexicographic extension of :func:`compare_tuple`; a proper prefix sorts first."""
    for ta, tb in zip(a, b):
        c = compare_tuple(ta, tb)
        if c is not Order.EQ:
            return c
    if len(a) < len(b):
        return Order.LT
    if len(a) > len(b):
        return Order.GT
    return Order.EQ


def minimum_code(g: Graph) -> Code:
    """The edge tuples of ``g`` sorted ascending, vertex ids taken as given."""
    return sorted(to_tuples(g), key=_tuple_key)


def num_digits(maximum: int, base: int) -> int:
    """``ceil(log_base(maximum))`` computed exactly on integers."""
    if maximum < 1:
        raise ValueError("maximum must be positive")
    k, cap = 0, 1
    while cap < maximum:
        cap *= base
        k += 1
    return k


@dataclass(frozen=True)
class EncodingSpec:
    max_v: int
    max_x: int
    max_y: int
    base: int = 2
    digits_v: int = field(init=False)
    digits_x: int = field(init=False)
    digits_y: int = field(init=False)

    def __post_init__(self):
        if self.base < 2:
            raise ValueError("base must be at least 2")
        for name in ("max_v", "max_x", "max_y"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "digits_v", num_digits(self.max_v, self.base))
        object.__setattr__(self, "digits_x", num_digits(self.max_x, self.base))
        object.__setattr__(self, "digits_y", num_digits(self.max_y, self.base))

    @property
    def group_digits(self) -> tuple[int, ...]:
        """Digit counts of the five tuple fields (u, v, xu, y, xv)."""
        return (self.digits_v, self.digits_v, self.digits_x, self.digits_y, self.digits_x)

    @property
    def group_maxima(self) -> tuple[int, ...]:
        return (self.max_v, self.max_v, self.max_x, self.max_y, self.max_x)

    @property
    def d(self) -> int:
        return self.base * (2 * self.digits_v + 2 * self.digits_x + self.digits_y)

    @property
    def label_width(self) -> int:
        return self.base * self.digits_x

    def covers(self, other: "EncodingSpec") -> bool:
        return (self.base == other.base and self.max_v >= other.max_v
                and self.max_x >= other.max_x and self.max_y >= other.max_y)

    def union(self, other: "EncodingSpec") -> "EncodingSpec":
        if self.base != other.base:
            raise IncompatibleSpecs("specs use different bases")
        return EncodingSpec(max(self.max_v, other.max_v), max(self.max_x, other.max_x),
                            max(self.max_y, other.max_y), self.base)

    def to_dict(self) -> dict:
        return {"max_v": self.max_v, "max_x": self.max_x, "max_y": self.max_y, "base": self.base}


def _encode_column(values: np.ndarray, maximum: int, digits: int, base: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.int64)
    if values.size and (values.min() < 0 or values.max() >= maximum):
        raise ValueExceedsSpec(f"value outside [0, {maximum})")
    out = np.zeros((values.shape[0], digits * base), dtype=np.float64)
    rows = np.arange(values.shape[0])
    for j in range(digits):
        digit = (values // base ** (digits - 1 - j)) % base
        out[rows, j * base + digit] = 1.0
    return out


def _decode_column(block: np.ndarray, digits: int, base: int) -> np.ndarray:
    block = np.asarray(block).reshape(block.shape[0], digits, base) if digits else None
    if block is None:
        return np.zeros(0, dtype=np.int64)
    digit = block.argmax(axis=2)
    weights = base ** np.arange(digits - 1, -1, -1)
    return (digit * weights).sum(axis=1)


def multi_hot_encode(code: Sequence[Sequence[int]], spec: EncodingSpec) -> np.ndarray:
    """Encode a code as an ``(len(code), spec.d)`` 0/1 matrix."""
    arr = np.asarray(code, dtype=np.int64).reshape(len(code), 5)
    parts = [_encode_column(arr[:, i], m, k, spec.base)
             for i, (m, k) in enumerate(zip(spec.group_maxima, spec.group_digits))]
    return np.concatenate(parts, axis=1) if parts else np.zeros((0, spec.d))


def multi_hot_decode(mat: np.ndarray, spec: EncodingSpec) -> list[EdgeTuple]:
    mat = np.asarray(mat)
    cols = []
    start = 0
    for k in spec.group_digits:
        w = k * spec.base
        if k == 0:
            cols.append(np.zeros(mat.shape[0], dtype=np.int64))
        else:
            cols.append(_decode_column(mat[:, start:start + w], k, spec.base))
        start += w
    return [EdgeTuple(*map(int, row)) for row in zip(*cols)]


def encode_sequence(g: Graph, spec: EncodingSpec) -> np.ndarray:
    return multi_hot_encode(minimum_code(g), spec)


@dataclass
class VertexFeatures:
    """Graph-view encoding.

    ``features[i]`` encodes the label of vertex ``vertex_ids[i]``;
    ``src``/``dst``/``rel`` are edge endpoint row indices and labels, and
    ``by_relation[y]`` lists the ``(src, dst)`` row pairs carrying label y.
    """
    features: np.ndarray
    vertex_ids: list[int]
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    by_relation: dict[int, np.ndarray]


def vertex_features(g: Graph, spec: EncodingSpec) -> VertexFeatures:
    ids = sorted(g.vertex_ids)
    index = {v: i for i, v in enumerate(ids)}
    lab = g.label
    feats = _encode_column(np.array([lab[v] for v in ids], dtype=np.int64),
                           spec.max_x, spec.digits_x, spec.base)
    src = np.array([index[u] for u, _, _ in g.edges], dtype=np.int64)
    dst = np.array([index[v] for _, v, _ in g.edges], dtype=np.int64)
    rel = np.array([y for _, _, y in g.edges], dtype=np.int64)
    if rel.size and rel.max() >= spec.max_y:
        raise ValueExceedsSpec(f"edge label outside [0, {spec.max_y})")
    by_rel = {int(y): np.stack([src[rel == y], dst[rel == y]], axis=1) for y in np.unique(rel)}
    return VertexFeatures(feats, ids, src, dst, rel, by_rel)


def _check_extension(old: EncodingSpec, new: EncodingSpec):
    if not new.covers(old):
        raise IncompatibleSpecs("new spec must use the same base and maxima no smaller than the old")


def extension_columns(old_groups: Sequence[int], new_groups: Sequence[int], base: int) -> np.ndarray:
    """New column index of every old column when each digit group is
    left-extended with leading digits."""
    idx = []
    start = 0
    for ko, kn in zip(old_groups, new_groups):
        start += (kn - ko) * base
        idx.extend(range(start, start + ko * base))
        start += ko * base
    return np.asarray(idx, dtype=np.int64)


def _extend(vec, old_groups, new_groups, base):
    vec = np.asarray(vec, dtype=np.float64)
    lead = vec.shape[:-1]
    out = np.zeros(lead + (sum(new_groups) * base,), dtype=np.float64)
    out[..., extension_columns(old_groups, new_groups, base)] = vec
    # new leading digits are zeros, i.e. the first slot of each added group is hot
    start = 0
    for ko, kn in zip(old_groups, new_groups):
        for j in range(kn - ko):
            out[..., start + j * base] = 1.0
        start += kn * base
    return out


def extend_encoding(vec, old: EncodingSpec, new: EncodingSpec) -> np.ndarray:
    """Re-express tuple encodings made under ``old`` in the wider ``new`` layout."""
    _check_extension(old, new)
    return _extend(vec, old.group_digits, new.group_digits, old.base)


def extend_label_encoding(vec, old: EncodingSpec, new: EncodingSpec) -> np.ndarray:
    """Same as :func:`extend_encoding` for vertex-label feature rows."""
    _check_extension(old, new)
    return _extend(vec, (old.digits_x,), (new.digits_x,), old.base)


def spec_for_graphs(graphs, base: int = 2) -> EncodingSpec:
    """Smallest spec able to encode every graph in ``graphs``."""
    mv = mx = my = 1
    for g in graphs:
        if g.num_vertices:
            mv = max(mv, max(g.vertex_ids) + 1)
        mx = max(mx, g.num_vertex_labels)
        my = max(my, g.num_edge_labels)
    return EncodingSpec(mv, mx, my, base)
