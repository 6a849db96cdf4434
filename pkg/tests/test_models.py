import itertools

import numpy as np
import pytest
import torch

from subcount.codec import EncodingSpec, spec_for_graphs
from subcount.errors import IncompatibleSpecs, UnknownRelationLabel
from subcount.features import GRAPH, SEQUENCE, collate, encode_pair, extend_pair
from subcount.graph import build_graph, remap_vertex_ids
from subcount.models import (
    DIAMNet,
    FilterNet,
    INTERACTIONS,
    MemAttn,
    ModelConfig,
    PoolInteraction,
    Predictor,
    RelationalRepresentation,
    REPRESENTATIONS,
    CountingModel,
    extend_model_encoding,
    filter_net,
    load_model,
    masked_pool,
    mem_init,
    mem_windows,
    save_model,
)
from subcount.numkit import DTYPE, attention_counter
from subcount.features import SeqSide

from conftest import random_connected_pattern, random_graph

COMBOS = list(itertools.product(REPRESENTATIONS, INTERACTIONS))


def small_config(rep, inter, **kw):
    base = dict(representation=rep, interaction=inter, hidden=16, heads=4, blocks=4, layers=2,
                steps=2, memory_size=3, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def make_pairs(rng, n=4, view=GRAPH, specs=None, pattern_shape=(3, 3)):
    raw = []
    for _ in range(n):
        p = random_connected_pattern(rng, *pattern_shape, 2, 2)
        g = random_graph(rng, int(rng.integers(5, 9)), int(rng.integers(6, 14)), 2, 2)
        raw.append((p, g, float(rng.integers(0, 5))))
    ps, gs = specs or (spec_for_graphs([p for p, _, _ in raw]), spec_for_graphs([g for _, g, _ in raw]))
    return [encode_pair(p, g, c, view, ps, gs) for p, g, c in raw], raw, ps, gs


def build(rep, inter, seed=0, specs=None, n=4, pattern_shape=(3, 3), **kw):
    rng = np.random.default_rng(seed)
    cfg = small_config(rep, inter, **kw)
    pairs, raw, ps, gs = make_pairs(rng, n, cfg.view, specs, pattern_shape)
    torch.manual_seed(seed)
    model = CountingModel(cfg, ps, gs).eval()
    return model, pairs, raw, ps, gs


# ----------------------------------------------------------------- helpers

def test_mem_windows_examples():
    assert mem_windows(10, 4) == (2, 4)
    assert mem_windows(4, 4) == (1, 1)
    assert mem_windows(3, 4) == (0, 3)


def test_mem_init_windows():
    x = torch.arange(10, dtype=DTYPE)[:, None].repeat(1, 2)
    got = mem_init(x, 4)
    want = [np.mean(range(a, a + 4)) for a in (0, 2, 4, 6)]
    assert got[:, 0].tolist() == want


def test_mem_init_identity_and_short():
    x = torch.randn(4, 3, dtype=DTYPE)
    assert torch.equal(mem_init(x, 4), x)
    y = torch.randn(3, 5, dtype=DTYPE)
    assert torch.allclose(mem_init(y, 4), y.mean(0, keepdim=True).expand(4, 5))


def test_mem_init_respects_member_length():
    x = torch.randn(2, 10, 3, dtype=DTYPE)
    mask = torch.arange(10)[None, :] < torch.tensor([[10], [4]])
    out = mem_init(x, 4, mask)
    assert torch.allclose(out[1], x[1, :4])
    assert torch.allclose(out[0], mem_init(x[0], 4))


def test_masked_pool_padding_and_constant():
    x = torch.randn(2, 5, 3, dtype=DTYPE)
    mask = torch.tensor([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], dtype=torch.bool)
    noisy = x.clone()
    noisy[0, 3:] = 1e6
    for mode in ("sum", "mean", "max"):
        assert torch.equal(masked_pool(x, mask, mode)[0], masked_pool(noisy, mask, mode)[0])
    const = torch.full((1, 4, 3), 2.5, dtype=DTYPE)
    assert torch.equal(masked_pool(const, torch.ones(1, 4, dtype=torch.bool), "mean"), torch.full((1, 3), 2.5,
                                                                                                   dtype=DTYPE))


# ---------------------------------------------------------------- FilterNet

def test_filter_zero_gate_weight_halves_rows():
    f = FilterNet(6, 8).to(DTYPE)
    torch.nn.init.zeros_(f.w_f.weight)
    p = SeqSide(torch.rand(2, 3, 6, dtype=DTYPE), torch.tensor([3, 2]))
    g = SeqSide(torch.rand(2, 5, 8, dtype=DTYPE), torch.tensor([5, 5]))
    assert torch.equal(f.forward_seq(p, g), g.x * 0.5)


def test_filter_gates_open_interval():
    f = FilterNet(6, 8).to(DTYPE)
    gates = f.gates(torch.rand(1, 6, dtype=DTYPE), torch.rand(20, 8, dtype=DTYPE))
    assert ((gates > 0) & (gates < 1)).all()


def test_filter_functional_matches_module():
    f = FilterNet(6, 8).to(DTYPE)
    P, G = torch.rand(3, 6, dtype=DTYPE), torch.rand(5, 8, dtype=DTYPE)
    mod = f.forward_seq(SeqSide(P[None], torch.tensor([3])), SeqSide(G[None], torch.tensor([5])))[0]
    assert torch.allclose(mod, filter_net(P, G, f.w_g.weight, f.w_f.weight))


# ------------------------------------------------------------ representation

def _rel_inputs(rng, n, e, n_rel, d=8):
    h = torch.randn(n, d, dtype=DTYPE)
    src = torch.as_tensor(rng.integers(0, n, e))
    dst = torch.as_tensor(rng.integers(0, n, e))
    rel = torch.as_tensor(rng.integers(0, n_rel, e))
    return h, src, dst, rel


@pytest.mark.parametrize("variant", ["RGCN", "RGIN"])
def test_relational_permutation_equivariance(variant):
    rng = np.random.default_rng(1)
    torch.manual_seed(1)
    rep = RelationalRepresentation(8, 3, 3, 4, 0.0, variant).to(DTYPE).eval()
    for _ in range(10):
        h, src, dst, rel = _rel_inputs(rng, 7, 15, 3)
        perm = torch.as_tensor(rng.permutation(7))
        inv = torch.argsort(perm)
        out = rep(h, src, dst, rel)
        # vertex v moves to position inv[v]
        out2 = rep(h[perm], inv[src], inv[dst], rel)
        assert torch.allclose(out2, out[perm], atol=1e-12)


@pytest.mark.parametrize("variant", ["RGCN", "RGIN"])
def test_relational_no_edges_self_only(variant):
    torch.manual_seed(2)
    rep = RelationalRepresentation(8, 2, 1, 4, 0.0, variant).to(DTYPE).eval()
    h = torch.randn(3, 8, dtype=DTYPE)
    empty = torch.zeros(0, dtype=torch.long)
    layer = rep.layers[0]
    inner = layer.self_loop(h) if variant == "RGCN" else layer.mlp(layer.self_loop(h))
    want = h + torch.nn.functional.leaky_relu(inner, 0.01)
    assert torch.allclose(rep(h, empty, empty, empty), want)


def test_relational_unknown_label():
    rep = RelationalRepresentation(8, 2, 1, 4, 0.0, "RGIN").to(DTYPE)
    h = torch.randn(3, 8, dtype=DTYPE)
    with pytest.raises(UnknownRelationLabel):
        rep(h, torch.tensor([0]), torch.tensor([1]), torch.tensor([2]))


def test_rgin_distinguishes_in_multisets():
    # vertices 0 and 1 share a label; 0 receives one message, 1 receives two identical ones
    torch.manual_seed(3)
    rep = RelationalRepresentation(8, 1, 1, 4, 0.0, "RGIN").to(DTYPE).eval()
    h = torch.ones(4, 8, dtype=DTYPE)
    src, dst = torch.tensor([2, 2, 3]), torch.tensor([0, 1, 1])
    out = rep(h, src, dst, torch.zeros(3, dtype=torch.long))
    assert not torch.allclose(out[0], out[1])
    # mean aggregation cannot tell them apart
    rgcn = RelationalRepresentation(8, 1, 1, 4, 0.0, "RGCN").to(DTYPE).eval()
    out = rgcn(h, src, dst, torch.zeros(3, dtype=torch.long))
    assert torch.allclose(out[0], out[1])


# --------------------------------------------------------------- interaction

def test_pool_difference_block_zero_when_equal():
    pool = PoolInteraction(4, "mean")
    x = torch.randn(1, 3, 4, dtype=DTYPE)
    mask = torch.ones(1, 3, dtype=torch.bool)
    out = pool(x, mask, x, mask, torch.ones(1, 4, dtype=DTYPE))
    assert torch.equal(out[0, 8:12], torch.zeros(4, dtype=DTYPE))
    assert out.shape[-1] == pool.out_dim


def _interaction_inputs(seed, lp=3, lg=6, d=8):
    g = torch.Generator().manual_seed(seed)
    P = torch.randn(2, lp, d, generator=g, dtype=DTYPE)
    G = torch.randn(2, lg, d, generator=g, dtype=DTYPE)
    return P, torch.ones(2, lp, dtype=torch.bool), G, torch.ones(2, lg, dtype=torch.bool)


def test_diamnet_zero_steps_is_mem_init():
    P, pm, G, gm = _interaction_inputs(0)
    net = DIAMNet(8, 4, 0, 2).to(DTYPE)
    assert torch.equal(net.memory(P, pm, G, gm), mem_init(G, 4, gm))


def test_diamnet_saturated_gates_keep_memory():
    P, pm, G, gm = _interaction_inputs(1)
    net = DIAMNet(8, 4, 3, 2).to(DTYPE)
    net.gate_pattern.override = 1.0
    net.gate_graph.override = 1.0
    assert torch.equal(net.memory(P, pm, G, gm), mem_init(G, 4, gm))


def test_diamnet_closed_gates_take_attention():
    P, pm, G, gm = _interaction_inputs(2)
    net = DIAMNet(8, 4, 1, 2).to(DTYPE)
    net.gate_pattern.override = 0.0
    net.gate_graph.override = 0.0
    m0 = mem_init(G, 4, gm)
    s = net.attend_pattern(m0, P, P, pm)
    want = net.attend_graph(s, G, G, gm)
    assert torch.allclose(net.memory(P, pm, G, gm), want)


def test_diamnet_attention_scores_linear():
    net = DIAMNet(8, 4, 3, 2).to(DTYPE)
    counts = []
    for lg in (64, 128, 256):
        P, pm, G, gm = _interaction_inputs(3, lp=4, lg=lg)
        attention_counter.reset()
        net.memory(P, pm, G, gm)
        counts.append(attention_counter.scores)
    # 2 members * steps * heads * M * (lp + lg)
    assert counts == [2 * 3 * 2 * 4 * (4 + lg) for lg in (64, 128, 256)]


def test_memattn_saturated_gates_keep_graph():
    P, pm, G, gm = _interaction_inputs(4)
    net = MemAttn(8, 3, 2, 2).to(DTYPE)
    net.gate_pattern.override = 1.0
    net.gate_self.override = 1.0
    assert torch.equal(net.update(P, pm, G, gm), G)


def test_memattn_full_length_memory_is_unpooled():
    M = 4
    P, pm, G, gm = _interaction_inputs(5, lp=M, lg=M)
    net = MemAttn(8, M, 1, 2).to(DTYPE)
    s = net.attend_pattern(G, P, P, pm)
    s_bar = net.gate_pattern(G, s)
    want = net.gate_self(s_bar, net.attend_self(s_bar, s_bar, s_bar, gm))
    assert torch.allclose(net.update(P, pm, G, gm), want, atol=1e-12)


def test_predictor_zero_weights_gives_bias():
    pred = Predictor(10, 8, 0.0).to(DTYPE)
    for p in (pred.fc1.weight, pred.fc2.weight):
        torch.nn.init.zeros_(p)
    torch.nn.init.constant_(pred.fc2.bias, 3.25)
    x = torch.randn(5, 10, dtype=DTYPE)
    assert torch.equal(pred(x), torch.full((5,), 3.25, dtype=DTYPE))


# -------------------------------------------------------------- whole model

@pytest.mark.parametrize("rep,inter", COMBOS)
def test_forward_shape_and_determinism(rep, inter):
    model, pairs, *_ = build(rep, inter)
    batch = collate(pairs)
    a, b = model(batch), model(batch)
    assert a.shape == (len(pairs),) and torch.equal(a, b)


@pytest.mark.parametrize("rep,inter", COMBOS)
def test_padding_inertness(rep, inter):
    model, pairs, *_ = build(rep, inter, n=6)
    alone = model(collate(pairs[:1]))
    together = model(collate(pairs))
    assert torch.allclose(alone, together[:1], rtol=0, atol=1e-10)


# memory heads pool strided windows over row order, so only pooled heads are invariant
@pytest.mark.parametrize("rep,inter", [c for c in COMBOS if c[0] != "CNN" and c[1].endswith("Pool")])
def test_graph_renumbering_invariance(rep, inter):
    model, _, raw, ps, gs = build(rep, inter)
    rng = np.random.default_rng(9)
    for p, g, c in raw:
        perm = dict(zip(g.vertex_ids, rng.permutation(g.num_vertices).tolist()))
        h = remap_vertex_ids(g, perm)
        a = model(collate([encode_pair(p, g, c, GRAPH, ps, gs)]))
        b = model(collate([encode_pair(p, h, c, GRAPH, ps, gs)]))
        assert torch.allclose(a, b, atol=1e-10)


@pytest.mark.parametrize("inter", INTERACTIONS)
def test_sequence_edge_order_invariance(inter):
    model, _, raw, ps, gs = build("CNN", inter)
    rng = np.random.default_rng(10)
    for p, g, c in raw:
        edges = list(g.edges)
        rng.shuffle(edges)
        h = build_graph(g.vertices, edges, g.num_vertex_labels, g.num_edge_labels)
        a = model(collate([encode_pair(p, g, c, SEQUENCE, ps, gs)]))
        b = model(collate([encode_pair(p, h, c, SEQUENCE, ps, gs)]))
        assert torch.equal(a, b)


@pytest.mark.parametrize("rep,inter", COMBOS)
def test_every_parameter_gets_gradient(rep, inter):
    # 10 pattern edges keep the CNN output longer than one row, else attention over it is constant
    model, pairs, *_ = build(rep, inter, n=6, pattern_shape=(5, 10))
    model.train()
    loss = ((model(collate(pairs)) - collate(pairs).y) ** 2).mean()
    loss.backward()
    dead = [n for n, p in model.named_parameters() if p.grad is None or not p.grad.abs().sum() > 0]
    assert not dead


def test_shared_representation_flag():
    shared, *_ = build("RGIN", "DIAMNet")
    split, *_ = build("RGIN", "DIAMNet", share_representation=False)
    assert shared.p_rep is shared.rep and split.p_rep is not split.rep
    n_shared = sum(p.numel() for p in shared.parameters())
    n_split = sum(p.numel() for p in split.parameters())
    assert n_split - n_shared == sum(p.numel() for p in split.p_rep.parameters())


def test_shared_single_pass_matches_separate_passes():
    model, pairs, *_ = build("RGIN", "MeanPool")
    batch = collate(pairs)
    P, pm, G, gm = model.represent(batch)
    p, g = batch.pattern, batch.graph
    gx = model.filter.forward_graph(p, g)
    hp = model.rep(model.p_in(p.x), p.src, p.dst, p.rel)
    hg = model.rep(model.g_in(gx), g.src, g.dst, g.rel)
    assert torch.allclose(P[pm], hp, atol=1e-12) and torch.allclose(G[gm], hg, atol=1e-12)


def test_config_validation_and_text_round_trip():
    cfg = small_config("CNN", "MemAttn", share_representation=False)
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ValueError):
        ModelConfig(hidden=130, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(interaction="Transformer")
    with pytest.raises(ValueError):
        ModelConfig(memory_size=0)
    with pytest.raises(ValueError):
        ModelConfig.from_text("hidden = 16\nwidth = 3\n")


@pytest.mark.parametrize("rep", REPRESENTATIONS)
def test_extension_keeps_outputs(rep):
    model, _, raw, ps, gs = build(rep, "DIAMNet")
    wide_p = EncodingSpec(ps.max_v * 4, ps.max_x + 3, ps.max_y + 2)
    wide_g = EncodingSpec(gs.max_v * 8, gs.max_x + 5, gs.max_y + 3)
    wide = extend_model_encoding(model, wide_p, wide_g).eval()
    old = [encode_pair(p, g, c, model.config.view, ps, gs) for p, g, c in raw]
    new = [extend_pair(e, ps, wide_p, gs, wide_g) for e in old]
    assert torch.equal(model(collate(old)), wide(collate(new)))
    fresh = [encode_pair(p, g, c, model.config.view, wide_p, wide_g) for p, g, c in raw]
    assert torch.equal(wide(collate(new)), wide(collate(fresh)))


def test_extension_rejects_narrower_specs():
    model, _, _, ps, gs = build("RGIN", "SumPool")
    with pytest.raises(IncompatibleSpecs):
        extend_model_encoding(model, EncodingSpec(1, 1, 1), gs)


@pytest.mark.parametrize("rep,inter", [("CNN", "DIAMNet"), ("RGCN", "MemAttn"), ("RGIN", "MaxPool")])
def test_checkpoint_round_trip(tmp_path, rep, inter):
    model, pairs, *_ = build(rep, inter, share_representation=rep != "RGCN")
    save_model(model, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt").eval()
    assert back.config == model.config
    assert back.pattern_spec == model.pattern_spec and back.graph_spec == model.graph_spec
    assert torch.equal(model(collate(pairs)), back(collate(pairs)))
