"""Neural counting models.

A model filters the graph encoding against the pattern, projects both
sides to the hidden width, runs a (shared) representation network, mixes
the two representations in an interaction head and regresses the count
with a two-layer perceptron.

Representations: ``CNN`` (sequence view), ``RGCN`` and ``RGIN`` (graph
view).  Interactions: ``SumPool``, ``MeanPool``, ``MaxPool``, ``MemAttn``
and ``DIAMNet``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn

from .codec import EncodingSpec, extension_columns
from .errors import IncompatibleSpecs, ShapeMismatch, UnknownRelationLabel
from .features import GRAPH, SEQUENCE, Batch, GraphSide, SeqSide
from .numkit import DTYPE, ConvPoolBlock, Dense, MultiHeadAttention, leaky_relu

REPRESENTATIONS = ("CNN", "RGCN", "RGIN")
INTERACTIONS = ("SumPool", "MeanPool", "MaxPool", "MemAttn", "DIAMNet")


@dataclass
class ModelConfig:
    representation: str = "RGIN"
    interaction: str = "DIAMNet"
    hidden: int = 128
    memory_size: int = 4
    steps: int = 3
    heads: int = 4
    layers: int = 3
    dropout: float = 0.2
    share_representation: bool = True
    blocks: int = 4
    mem_init: str = "mean"
    use_filter: bool = True

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}")
        if self.interaction not in INTERACTIONS:
            raise ValueError(f"interaction must be one of {INTERACTIONS}")
        if self.hidden % self.heads:
            raise ValueError("hidden width must be divisible by the head count")
        if self.hidden % self.blocks:
            raise ValueError("hidden width must be divisible by the block count")
        if self.memory_size < 1 or self.steps < 0:
            raise ValueError("memory size must be >= 1 and steps >= 0")
        if self.interaction == "MemAttn" and self.steps < 1:
            raise ValueError("MemAttn needs at least one step")
        if self.mem_init not in ("mean", "sum", "max"):
            raise ValueError("mem_init must be mean, sum or max")

    @property
    def view(self) -> str:
        return SEQUENCE if self.representation == "CNN" else GRAPH

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = (s.strip() for s in line.partition("="))
            if key not in types:
                raise ValueError(f"unknown model option {key!r}")
            kw[key] = _parse_value(value, types[key])
        return cls(**kw)


def _parse_value(value: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    if typ == "bool":
        return value.lower() in ("1", "true", "yes", "on")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value


# ------------------------------------------------------------------ helpers

def seq_mask(side: SeqSide) -> torch.Tensor:
    return torch.arange(side.x.shape[1])[None, :] < side.lengths[:, None]


def to_padded(x: torch.Tensor, batch: torch.Tensor, pos: torch.Tensor, lengths: torch.Tensor):
    """Scatter flat rows (N, d) into a zero-padded (B, Lmax, d) tensor."""
    B = lengths.shape[0]
    L = int(lengths.max()) if B else 0
    out = x.new_zeros(B, L, x.shape[-1])
    out = out.index_put((batch, pos), x)
    mask = torch.arange(L)[None, :] < lengths[:, None]
    return out, mask


def masked_pool(x: torch.Tensor, mask: torch.Tensor, mode: str) -> torch.Tensor:
    """Pool (B, L, d) over L, ignoring rows where ``mask`` is False."""
    m = mask[:, :, None].to(x.dtype)
    if mode == "sum":
        return (x * m).sum(1)
    if mode == "mean":
        return (x * m).sum(1) / m.sum(1).clamp(min=1.0)
    if mode == "max":
        filled = x.masked_fill(~mask[:, :, None], torch.finfo(x.dtype).min)
        out = filled.max(1).values
        return torch.where(mask.any(1, keepdim=True), out, torch.zeros_like(out))
    raise ValueError(f"unknown pooling {mode!r}")


def mem_windows(L: int, M: int) -> tuple[int, int]:
    """Stride and kernel size of the memory initialisation windows."""
    s = L // M
    return s, L - (M - 1) * s


def mem_init(x: torch.Tensor, M: int, mask: torch.Tensor | None = None, mode: str = "mean"):
    """Summarise each length-L member of ``x`` (B, L, d) into M blocks.

    With stride ``s = L // M`` and kernel ``k = L - (M - 1) s``, block i
    pools rows ``i*s .. i*s + k - 1`` of that member.  When L < M the stride
    is 0 and every block is the pool of the whole member.
    """
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
        mask = None if mask is None else mask.unsqueeze(0)
    B, L, _ = x.shape
    lengths = torch.full((B,), L, dtype=torch.long) if mask is None else mask.sum(1)
    s = lengths // M
    k = lengths - (M - 1) * s
    i = torch.arange(M)
    start = i[None, :] * s[:, None]  # (B, M)
    j = torch.arange(L)
    inside = (j[None, None, :] >= start[:, :, None]) & (j[None, None, :] < (start + k[:, None])[:, :, None])
    if mode == "max":
        filled = x[:, None, :, :].masked_fill(~inside[:, :, :, None], torch.finfo(x.dtype).min)
        out = filled.max(2).values
        out = torch.where(inside.any(2)[:, :, None], out, torch.zeros_like(out))
    else:
        w = inside.to(x.dtype)
        if mode == "mean":
            w = w / k.clamp(min=1)[:, None, None].to(x.dtype)
        out = w @ x
    return out[0] if squeeze else out


# ---------------------------------------------------------------- FilterNet

class FilterNet(nn.Module):
    """Scales every graph row by a sigmoid gate computed from the row and the
    column-wise max of the pattern rows."""

    def __init__(self, d_pattern: int, d_graph: int):
        super().__init__()
        self.w_g = Dense(d_graph, d_pattern, bias=False)
        self.w_f = Dense(d_pattern, 1, bias=False)

    def gates(self, p_max: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
        """``p_max``: pattern summary aligned with the rows of ``g``."""
        return torch.sigmoid(self.w_f(self.w_g(g) * p_max))

    def forward_seq(self, p: SeqSide, g: SeqSide) -> torch.Tensor:
        p_max = masked_pool(p.x, seq_mask(p), "max")  # (B, d_p)
        return g.x * self.gates(p_max[:, None, :], g.x)

    def forward_graph(self, p: GraphSide, g: GraphSide) -> torch.Tensor:
        B = p.lengths.shape[0]
        p_max = p.x.new_full((B, p.x.shape[1]), torch.finfo(p.x.dtype).min)
        p_max = p_max.scatter_reduce(0, p.batch[:, None].expand_as(p.x), p.x, "amax", include_self=True)
        return g.x * self.gates(p_max[g.batch], g.x)


def filter_net(P: torch.Tensor, G: torch.Tensor, W_G: torch.Tensor, W_F: torch.Tensor) -> torch.Tensor:
    """Functional FilterNet on one unbatched pair: P (Lp, d_p), G (Lg, d_g)."""
    p_max = P.max(0).values
    gate = torch.sigmoid((G @ W_G.T * p_max) @ W_F.T)
    return gate * G


# ----------------------------------------------------------- representation

class CNNRepresentation(nn.Module):
    KERNELS = (2, 3, 4)

    def __init__(self, d: int, layers: int, dropout: float):
        super().__init__()
        ks = [self.KERNELS[i % len(self.KERNELS)] for i in range(layers)]
        self.blocks = nn.ModuleList(ConvPoolBlock(d, d, k, k) for k in ks)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, lengths: torch.Tensor):
        for block in self.blocks:
            x, lengths = block(x, lengths)
            x = self.drop(x)
        return x, lengths


class RelationalLayer(nn.Module):
    """One relational message-passing layer with block-diagonal relation
    weights.  ``aggregate`` is ``mean`` (RGCN) or ``sum`` followed by a
    two-layer perceptron (RGIN)."""

    def __init__(self, d: int, n_relations: int, blocks: int, aggregate: str):
        super().__init__()
        self.d, self.blocks = d, blocks
        bs = d // blocks
        self.rel_weight = nn.Parameter(torch.empty(n_relations, blocks, bs, bs, dtype=DTYPE))
        nn.init.xavier_uniform_(self.rel_weight.view(n_relations * blocks, bs, bs))
        self.self_loop = Dense(d, d)
        self.aggregate = aggregate
        if aggregate == "sum":
            self.mlp = nn.Sequential(Dense(d, d), nn.LeakyReLU(0.01), Dense(d, d))

    @property
    def n_relations(self) -> int:
        return self.rel_weight.shape[0]

    def messages(self, h, src, dst, rel):
        """Per-edge messages, returned in relation-sorted order with their targets."""
        if src.numel() == 0:
            return h.new_zeros(0, self.d), dst
        if int(rel.max()) >= self.n_relations or int(rel.min()) < 0:
            raise UnknownRelationLabel(f"edge label outside [0, {self.n_relations})")
        bs = self.d // self.blocks
        order = torch.argsort(rel, stable=True)
        src, dst, rel = src[order], dst[order], rel[order]
        rels, counts = torch.unique_consecutive(rel, return_counts=True)
        parts = []
        for r, x in zip(rels.tolist(), torch.split(h[src], counts.tolist())):
            x = x.view(-1, self.blocks, bs)
            parts.append(torch.einsum("ebi,bio->ebo", x, self.rel_weight[r]).reshape(-1, self.d))
        return torch.cat(parts), dst

    def forward(self, h, src, dst, rel):
        msg, target = self.messages(h, src, dst, rel)
        agg = h.new_zeros(h.shape).index_add(0, target, msg)
        if self.aggregate == "mean":
            deg = torch.bincount(dst, minlength=h.shape[0]).clamp(min=1).to(h.dtype)
            agg = agg / deg[:, None]
        out = self.self_loop(h) + agg
        if self.aggregate == "sum":
            out = self.mlp(out)
        return out


class RelationalRepresentation(nn.Module):
    def __init__(self, d: int, n_relations: int, layers: int, blocks: int, dropout: float, variant: str):
        super().__init__()
        agg = "mean" if variant == "RGCN" else "sum"
        self.layers = nn.ModuleList(RelationalLayer(d, n_relations, blocks, agg) for _ in range(layers))
        self.drop = nn.Dropout(dropout)

    def forward(self, h, src, dst, rel):
        for layer in self.layers:
            h = h + self.drop(leaky_relu(layer(h, src, dst, rel)))
        return h


# -------------------------------------------------------------- interaction

def size_features(sizes: torch.Tensor) -> torch.Tensor:
    return torch.log1p(sizes)


class PoolInteraction(nn.Module):
    def __init__(self, d: int, mode: str):
        super().__init__()
        self.mode = mode
        self.out_dim = 4 * d + 4

    def forward(self, P, p_mask, G, g_mask, sizes):
        p = masked_pool(P, p_mask, self.mode)
        g = masked_pool(G, g_mask, self.mode)
        return torch.cat([g, p, g - p, g * p, size_features(sizes)], dim=-1)


class GatedUpdate(nn.Module):
    """``z = sigmoid(U a + V b)``; returns ``z * a + (1 - z) * b``."""

    def __init__(self, d: int):
        super().__init__()
        self.u = Dense(d, d, bias=False)
        self.v = Dense(d, d, bias=False)
        self.override: float | None = None

    def forward(self, a, b):
        if self.override is None:
            z = torch.sigmoid(self.u(a) + self.v(b))
        else:
            z = torch.full_like(a, self.override)
        return z * a + (1 - z) * b


class DIAMNet(nn.Module):
    """Dynamic memory that alternately attends the pattern and the graph.

    The memory (M blocks of width d) is initialised from the graph rows and
    updated ``steps`` times.  Each step costs O(M * (rows_P + rows_G))
    attention scores.
    """

    def __init__(self, d: int, memory_size: int, steps: int, heads: int, mem_mode: str = "mean"):
        super().__init__()
        self.M, self.steps, self.mem_mode = memory_size, steps, mem_mode
        self.attend_pattern = MultiHeadAttention(d, heads)
        self.attend_graph = MultiHeadAttention(d, heads)
        self.gate_pattern = GatedUpdate(d)
        self.gate_graph = GatedUpdate(d)
        self.out_dim = memory_size * d + 4

    def memory(self, P, p_mask, G, g_mask):
        m = mem_init(G, self.M, g_mask, self.mem_mode)
        for _ in range(self.steps):
            s = self.attend_pattern(m, P, P, p_mask)
            s_bar = self.gate_pattern(m, s)
            s_tilde = self.attend_graph(s_bar, G, G, g_mask)
            m = self.gate_graph(s_bar, s_tilde)
        return m

    def forward(self, P, p_mask, G, g_mask, sizes):
        m = self.memory(P, p_mask, G, g_mask)
        return torch.cat([m.flatten(1), size_features(sizes)], dim=-1)


class MemAttn(nn.Module):
    """Graph rows attend a memory built from the pattern, then a memory
    built from their own gated states; repeated ``steps`` times."""

    def __init__(self, d: int, memory_size: int, steps: int, heads: int, mem_mode: str = "mean"):
        super().__init__()
        self.M, self.steps, self.mem_mode = memory_size, steps, mem_mode
        self.attend_pattern = MultiHeadAttention(d, heads)
        self.attend_self = MultiHeadAttention(d, heads)
        self.gate_pattern = GatedUpdate(d)
        self.gate_self = GatedUpdate(d)
        self.out_dim = 4 * d + 4

    def update(self, P, p_mask, G, g_mask):
        g = G
        for _ in range(self.steps):
            mem = mem_init(P, self.M, p_mask, self.mem_mode)
            mem_mask = p_mask.any(1, keepdim=True).expand(-1, self.M)
            s = self.attend_pattern(g, mem, mem, mem_mask, query_mask=g_mask)
            s_bar = self.gate_pattern(g, s)
            mem2 = mem_init(s_bar, self.M, g_mask, self.mem_mode)
            mem2_mask = g_mask.any(1, keepdim=True).expand(-1, self.M)
            s_tilde = self.attend_self(s_bar, mem2, mem2, mem2_mask, query_mask=g_mask)
            g = self.gate_self(s_bar, s_tilde)
            g = g * g_mask[:, :, None]
        return g

    def forward(self, P, p_mask, G, g_mask, sizes):
        g = masked_pool(self.update(P, p_mask, G, g_mask), g_mask, "mean")
        p = masked_pool(P, p_mask, "mean")
        return torch.cat([g, p, g - p, g * p, size_features(sizes)], dim=-1)


class Predictor(nn.Module):
    def __init__(self, d_in: int, d: int, dropout: float):
        super().__init__()
        self.fc1 = Dense(d_in, max(d // 2, 1))
        self.fc2 = Dense(max(d // 2, 1), 1)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.drop(leaky_relu(self.fc1(x)))).squeeze(-1)


# -------------------------------------------------------------------- model

def _input_width(spec: EncodingSpec, view: str) -> int:
    return spec.d if view == SEQUENCE else spec.label_width


class CountingModel(nn.Module):
    def __init__(self, config: ModelConfig, pattern_spec: EncodingSpec, graph_spec: EncodingSpec):
        super().__init__()
        self.config = config
        self.pattern_spec = pattern_spec
        self.graph_spec = graph_spec
        c = config
        d = c.hidden
        dp = _input_width(pattern_spec, c.view)
        dg = _input_width(graph_spec, c.view)
        self.filter = FilterNet(dp, dg) if c.use_filter else None
        self.p_in = Dense(dp, d)
        self.g_in = Dense(dg, d)
        n_rel = max(pattern_spec.max_y, graph_spec.max_y)

        def make_rep():
            if c.representation == "CNN":
                return CNNRepresentation(d, c.layers, c.dropout)
            return RelationalRepresentation(d, n_rel, c.layers, c.blocks, c.dropout, c.representation)

        self.rep = make_rep()
        self.p_rep = self.rep if c.share_representation else make_rep()
        if c.interaction.endswith("Pool"):
            self.interact = PoolInteraction(d, c.interaction[:-4].lower())
        elif c.interaction == "MemAttn":
            self.interact = MemAttn(d, c.memory_size, c.steps, c.heads, c.mem_init)
        else:
            self.interact = DIAMNet(d, c.memory_size, c.steps, c.heads, c.mem_init)
        self.predict = Predictor(self.interact.out_dim, d, c.dropout)
        self.to(DTYPE)

    def represent(self, batch: Batch):
        """Pattern and graph representations as padded tensors with masks."""
        if batch.view != self.config.view:
            raise ShapeMismatch(f"batch is {batch.view}-view, model expects {self.config.view}")
        p, g = batch.pattern, batch.graph
        if batch.view == SEQUENCE:
            gx = self.filter.forward_seq(p, g) if self.filter is not None else g.x
            P, p_len = self.p_rep(self.p_in(p.x), p.lengths)
            G, g_len = self.rep(self.g_in(gx), g.lengths)
            p_mask = torch.arange(P.shape[1])[None, :] < p_len[:, None]
            g_mask = torch.arange(G.shape[1])[None, :] < g_len[:, None]
            return P, p_mask, G, g_mask
        gx = self.filter.forward_graph(p, g) if self.filter is not None else g.x
        hp, hg = self.p_in(p.x), self.g_in(gx)
        if self.p_rep is self.rep:
            # one pass over the disjoint union of pattern and graph vertices
            n_p = hp.shape[0]
            h = self.rep(torch.cat([hp, hg]), torch.cat([p.src, g.src + n_p]),
                         torch.cat([p.dst, g.dst + n_p]), torch.cat([p.rel, g.rel]))
            hp, hg = h[:n_p], h[n_p:]
        else:
            hp = self.p_rep(hp, p.src, p.dst, p.rel)
            hg = self.rep(hg, g.src, g.dst, g.rel)
        P, p_mask = to_padded(hp, p.batch, p.pos, p.lengths)
        G, g_mask = to_padded(hg, g.batch, g.pos, g.lengths)
        return P, p_mask, G, g_mask

    def features(self, batch: Batch) -> torch.Tensor:
        P, p_mask, G, g_mask = self.represent(batch)
        return self.interact(P, p_mask, G, g_mask, batch.sizes)

    def forward(self, batch: Batch) -> torch.Tensor:
        return self.predict(self.features(batch))


# ------------------------------------------------------- encoding extension

def _extend_columns(w: torch.Tensor, cols: np.ndarray, new_width: int, dim: int) -> torch.Tensor:
    shape = list(w.shape)
    shape[dim] = new_width
    out = w.new_zeros(shape)
    index = torch.as_tensor(cols)
    return out.index_copy(dim, index, w.detach())


def _spec_columns(old: EncodingSpec, new: EncodingSpec, view: str) -> np.ndarray:
    if view == SEQUENCE:
        return extension_columns(old.group_digits, new.group_digits, old.base)
    return extension_columns((old.digits_x,), (new.digits_x,), old.base)


@torch.no_grad()
def extend_model_encoding(model: CountingModel, pattern_spec: EncodingSpec,
                          graph_spec: EncodingSpec) -> CountingModel:
    """Copy of ``model`` accepting inputs encoded under the wider specs.

    Weights attached to the new digit columns start at zero and relation
    weights for new edge labels start at zero, so inputs re-encoded with
    leading zero digits produce exactly the old outputs.
    """
    if not (pattern_spec.covers(model.pattern_spec) and graph_spec.covers(model.graph_spec)):
        raise IncompatibleSpecs("new specs must cover the model's specs")
    view = model.config.view
    new = CountingModel(model.config, pattern_spec, graph_spec)
    state = {k: v.clone() for k, v in model.state_dict().items()}
    pc = _spec_columns(model.pattern_spec, pattern_spec, view)
    gc = _spec_columns(model.graph_spec, graph_spec, view)
    dp, dg = _input_width(pattern_spec, view), _input_width(graph_spec, view)
    state["p_in.weight"] = _extend_columns(state["p_in.weight"], pc, dp, 1)
    state["g_in.weight"] = _extend_columns(state["g_in.weight"], gc, dg, 1)
    if model.filter is not None:
        w = _extend_columns(state["filter.w_g.weight"], gc, dg, 1)
        state["filter.w_g.weight"] = _extend_columns(w, pc, dp, 0)
        state["filter.w_f.weight"] = _extend_columns(state["filter.w_f.weight"], pc, dp, 1)
    target = new.state_dict()
    for k, v in state.items():
        if k.endswith("rel_weight") and v.shape != target[k].shape:
            w = torch.zeros_like(target[k])
            w[: v.shape[0]] = v
            state[k] = w
    new.load_state_dict(state)
    return new


# -------------------------------------------------------------- checkpoints

def save_model(model: CountingModel, path) -> None:
    """Weights go to ``path`` (see :func:`numkit.save_tensors`); config and
    encoding specs go to ``path.model`` as text."""
    from .numkit import save_tensors

    save_tensors(path, model.state_dict())
    lines = [model.config.to_text()]
    for side, spec in (("pattern", model.pattern_spec), ("graph", model.graph_spec)):
        lines.append("".join(f"{side}_{k} = {v}\n" for k, v in spec.to_dict().items()))
    with open(str(path) + ".model", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(lines))


def load_model(path) -> CountingModel:
    from .numkit import load_tensors

    with open(str(path) + ".model", encoding="utf-8") as fh:
        text = fh.read()
    cfg_lines, spec_kw = [], {"pattern": {}, "graph": {}}
    for line in text.splitlines():
        key, _, value = (s.strip() for s in line.partition("="))
        side = key.split("_", 1)[0]
        if side in spec_kw:
            spec_kw[side][key.split("_", 1)[1]] = int(value)
        elif key:
            cfg_lines.append(line)
    model = CountingModel(ModelConfig.from_text("\n".join(cfg_lines)),
                          EncodingSpec(**spec_kw["pattern"]), EncodingSpec(**spec_kw["graph"]))
    state = {k: torch.from_numpy(v) for k, v in load_tensors(path).items()}
    model.load_state_dict(state)
    return model
