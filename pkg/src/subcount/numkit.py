"""Numerical kernel used by the models.

Tensors are ``torch.float64`` tensors and reverse-mode differentiation is
torch autograd.  On top of that this module provides the masked layers the
models share, an AdamW optimizer with global-norm clipping, an independent
central-difference gradient checker, and a byte-stable checkpoint container.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .errors import (
    BadHeadCount,
    DetachedGraph,
    EmptySequence,
    MissingGradients,
    ShapeMismatch,
)

DTYPE = torch.float64
NEG_SLOPE = 0.01
CHECK_FINITE = True


def as_tensor(x, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(x) if not torch.is_tensor(x) else x, dtype=DTYPE)
    if requires_grad:
        t = t.clone().requires_grad_(True)
    return t


def _finite(t: torch.Tensor, where: str):
    # one reduction in the common case; the full scan only runs when the sum is not finite
    if CHECK_FINITE and not math.isfinite(float(t.detach().sum())) and not torch.isfinite(t).all():
        raise FloatingPointError(f"non-finite values entering {where}")


def leaky_relu(x):
    return F.leaky_relu(x, NEG_SLOPE)


# --------------------------------------------------------------------- dense

def dense(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ W.T + b`` over the last axis of ``x``."""
    if x.shape[-1] != W.shape[-1]:
        raise ShapeMismatch(f"input width {x.shape[-1]} != weight width {W.shape[-1]}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeMismatch(f"bias shape {tuple(b.shape)} != ({W.shape[0]},)")
    _finite(x, "dense")
    y = x @ W.transpose(0, 1)
    return y if b is None else y + b


class Dense(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=DTYPE)) if bias else None
        if d_in > 0:  # label-free inputs have zero width
            nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        if self.bias is not None and d_in > 0:
            bound = 1 / math.sqrt(d_in)
            nn.init.uniform_(self.bias, -bound, bound)

    @property
    def d_in(self):
        return self.weight.shape[1]

    def forward(self, x):
        return dense(x, self.weight, self.bias)


# ----------------------------------------------------------------- attention

class AttentionCounter:
    """Counts evaluated (unmasked) attention scores, summed over heads."""

    def __init__(self):
        self.scores = 0
        self.calls = 0

    def reset(self):
        self.scores = 0
        self.calls = 0


attention_counter = AttentionCounter()


@dataclass
class AttentionParams:
    wq: torch.Tensor
    bq: torch.Tensor
    wk: torch.Tensor
    bk: torch.Tensor
    wv: torch.Tensor
    bv: torch.Tensor
    wo: torch.Tensor
    bo: torch.Tensor
    n_heads: int


def multi_head_attention(q, k, v, params: AttentionParams, key_mask=None, query_mask=None):
    """Scaled dot-product attention with ``params.n_heads`` heads.

    ``q``: (B, Lq, d); ``k``, ``v``: (B, Lk, d).  ``key_mask`` is a boolean
    (B, Lk) or (B, Lq, Lk) tensor, True for real keys.  Masked keys get zero
    weight; a query with no real key (or a masked query) outputs zeros.
    """
    squeeze = q.dim() == 2
    if squeeze:
        q, k, v = q.unsqueeze(0), k.unsqueeze(0), v.unsqueeze(0)
        key_mask = None if key_mask is None else key_mask.unsqueeze(0)
        query_mask = None if query_mask is None else query_mask.unsqueeze(0)
    B, Lq, d = q.shape
    Lk = k.shape[1]
    H = params.n_heads
    if H < 1 or d % H:
        raise BadHeadCount(f"model width {d} not divisible by {H} heads")
    if k.shape[0] != B or v.shape[:2] != k.shape[:2] or k.shape[2] != d or v.shape[2] != d:
        raise ShapeMismatch("query/key/value shapes disagree")
    if key_mask is None:
        key_mask = torch.ones(B, Lk, dtype=torch.bool)
    if key_mask.dim() == 2:
        if key_mask.shape != (B, Lk):
            raise ShapeMismatch(f"key mask {tuple(key_mask.shape)} != {(B, Lk)}")
        mask3 = key_mask[:, None, :].expand(B, Lq, Lk)
    else:
        if key_mask.shape != (B, Lq, Lk):
            raise ShapeMismatch(f"mask {tuple(key_mask.shape)} != {(B, Lq, Lk)}")
        mask3 = key_mask
    if query_mask is not None:
        mask3 = mask3 & query_mask[:, :, None]
    dh = d // H
    Q = dense(q, params.wq, params.bq).view(B, Lq, H, dh).transpose(1, 2)
    K = dense(k, params.wk, params.bk).view(B, Lk, H, dh).transpose(1, 2)
    V = dense(v, params.wv, params.bv).view(B, Lk, H, dh).transpose(1, 2)
    scores = Q @ K.transpose(-1, -2) / math.sqrt(dh)  # (B, H, Lq, Lk)
    m4 = mask3[:, None, :, :]
    scores = scores.masked_fill(~m4, torch.finfo(DTYPE).min)
    weights = torch.softmax(scores, dim=-1) * m4
    ctx = (weights @ V).transpose(1, 2).reshape(B, Lq, d)
    out = dense(ctx, params.wo, params.bo)
    alive = mask3.any(dim=-1, keepdim=True)
    out = out * alive
    attention_counter.scores += int(mask3.sum()) * H
    attention_counter.calls += 1
    return out[0] if squeeze else out


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if n_heads < 1 or d % n_heads:
            raise BadHeadCount(f"model width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Dense(d, d)
        self.k = Dense(d, d)
        self.v = Dense(d, d)
        self.o = Dense(d, d)

    def params(self) -> AttentionParams:
        return AttentionParams(self.q.weight, self.q.bias, self.k.weight, self.k.bias,
                               self.v.weight, self.v.bias, self.o.weight, self.o.bias,
                               self.n_heads)

    def forward(self, q, k, v, key_mask=None, query_mask=None):
        return multi_head_attention(q, k, v, self.params(), key_mask, query_mask)


# ------------------------------------------------------------ conv + pooling

def lengths_to_mask(lengths: torch.Tensor, L: int) -> torch.Tensor:
    return torch.arange(L)[None, :] < lengths[:, None]


def conv_pool_block(x, lengths, weight, bias, pool_kernel: int, activate: bool = True):
    """1-D convolution (stride 1) then max-pooling (stride 1) over time.

    ``x``: (B, L, d_in); ``lengths``: (B,) real lengths.  Rows past a
    sequence's length are zeroed before the convolution, and a sequence
    shorter than ``conv_kernel + pool_kernel - 1`` is treated as zero-padded
    to that length.  Returns ``(y, new_lengths)``.
    """
    if x.dim() != 3:
        raise ShapeMismatch("expected (batch, length, width) input")
    if x.shape[1] == 0 or int(lengths.min()) < 1:
        raise EmptySequence("convolution needs at least one row per sequence")
    d_out, d_in, kc = weight.shape
    if x.shape[-1] != d_in:
        raise ShapeMismatch(f"input width {x.shape[-1]} != kernel width {d_in}")
    _finite(x, "conv_pool_block")
    min_len = kc + pool_kernel - 1
    L = max(x.shape[1], min_len)
    x = x * lengths_to_mask(lengths, x.shape[1])[:, :, None]
    if L > x.shape[1]:
        x = F.pad(x, (0, 0, 0, L - x.shape[1]))
    h = F.conv1d(x.transpose(1, 2), weight, bias)
    if activate:
        h = leaky_relu(h)
    h = F.max_pool1d(h, pool_kernel, stride=1)
    new_lengths = torch.clamp(lengths, min=min_len) - (kc - 1) - (pool_kernel - 1)
    return h.transpose(1, 2), new_lengths


class ConvPoolBlock(nn.Module):
    def __init__(self, d_in: int, d_out: int, conv_kernel: int, pool_kernel: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in, conv_kernel, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=DTYPE))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        self.pool_kernel = pool_kernel

    def forward(self, x, lengths):
        return conv_pool_block(x, lengths, self.weight, self.bias, self.pool_kernel)


# ---------------------------------------------------------------------- loss

def mse(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    _finite(pred, "mse")
    return ((pred - target) ** 2).mean()


def backward(loss: torch.Tensor):
    if loss.dim() != 0:
        raise ShapeMismatch("backward needs a scalar loss")
    if not loss.requires_grad:
        raise DetachedGraph("loss does not depend on any trainable tensor")
    loss.backward()


# ----------------------------------------------------------------- optimizer

@dataclass
class AdamWHyper:
    lr: float = 1e-3
    weight_decay: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = 1.0


class ParamStore:
    """Named trainable tensors plus AdamW moment accumulators."""

    def __init__(self, params: Mapping[str, torch.Tensor] | Iterable[tuple[str, torch.Tensor]]):
        self.params: dict[str, torch.Tensor] = dict(params.items() if isinstance(params, Mapping) else params)
        self.exp_avg = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.exp_avg_sq = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.step_count = 0

    @classmethod
    def from_module(cls, module: nn.Module) -> "ParamStore":
        return cls(module.named_parameters())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        sq = sum(float((p.grad ** 2).sum()) for p in self.params.values() if p.grad is not None)
        return math.sqrt(sq)

    def state_dict(self) -> dict:
        return {"step": self.step_count,
                "exp_avg": {n: t.clone() for n, t in self.exp_avg.items()},
                "exp_avg_sq": {n: t.clone() for n, t in self.exp_avg_sq.items()}}


@torch.no_grad()
def optimizer_step(store: ParamStore, hyper: AdamWHyper) -> float:
    """One AdamW update; returns the gradient norm before clipping.

    The global gradient norm is clipped to ``hyper.clip_norm`` first; weight
    decay is applied to the parameters directly (decoupled from the moments).
    Parameters without a gradient are left untouched.
    """
    live = [(n, p) for n, p in store.params.items() if p.grad is not None]
    if not live:
        raise MissingGradients("no parameter has a gradient; call backward first")
    norm = store.grad_norm()
    scale = 1.0
    if hyper.clip_norm is not None and norm > hyper.clip_norm:
        scale = hyper.clip_norm / norm
    store.step_count += 1
    t = store.step_count
    b1, b2 = hyper.betas
    c1 = 1 - b1 ** t
    c2 = 1 - b2 ** t
    for n, p in live:
        g = p.grad * scale
        m = store.exp_avg[n]
        v = store.exp_avg_sq[n]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        if hyper.weight_decay:
            p.mul_(1 - hyper.lr * hyper.weight_decay)
        denom = (v / c2).sqrt_().add_(hyper.eps)
        p.addcdiv_(m, denom, value=-hyper.lr / c1)
    return norm


# ---------------------------------------------------------- gradient checker

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float]
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_rel_error <= self.tolerance


def _probe_weights(out: torch.Tensor, seed: int) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return torch.randn(out.shape, generator=g, dtype=DTYPE)


def grad_check(op: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor],
               tolerance: float = 1e-6, h: float = 1e-5, floor: float = 1e-3,
               seed: int = 0) -> GradCheckReport:
    """Compare autograd gradients of ``op`` with central differences.

    The scalar probed is ``sum(w * op(*inputs))`` for fixed random ``w``.
    Per element the error is ``|analytic - numeric| / max(|analytic|,
    |numeric|, floor)``; ``floor`` keeps near-zero entries from turning
    rounding noise into huge ratios.
    """
    xs = [x.detach().clone().to(DTYPE).requires_grad_(True) for x in inputs]
    out = op(*xs)
    w = _probe_weights(out, seed)
    (out * w).sum().backward()
    analytic = [x.grad.detach().clone() if x.grad is not None else torch.zeros_like(x) for x in xs]
    errors = []
    with torch.no_grad():
        for x, a in zip(xs, analytic):
            flat = x.view(-1)
            worst = 0.0
            af = a.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + h
                fp = float((op(*xs) * w).sum())
                flat[i] = orig - h
                fm = float((op(*xs) * w).sum())
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                an = float(af[i])
                err = abs(an - num) / max(abs(an), abs(num), floor)
                worst = max(worst, err)
            errors.append(worst)
    return GradCheckReport(max(errors) if errors else 0.0, errors, tolerance)


# --------------------------------------------------------------- checkpoints

_MAGIC = b"SUBCKPT1"


def save_tensors(path, tensors: Mapping[str, np.ndarray | torch.Tensor]) -> None:
    """Write ``name -> array`` to ``path`` (binary) and ``path.manifest`` (text).

    Entries are written in sorted name order as: u32 name length, UTF-8
    name, u32 rank, u64 dims, little-endian float64 data.
    """
    path = Path(path)
    lines = []
    with open(path, "wb") as fh:
        names = sorted(tensors)
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            t = tensors[name]
            arr = (t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t)).astype("<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            offset = fh.tell()
            fh.write(np.ascontiguousarray(arr).tobytes())
            shape = "x".join(map(str, arr.shape)) or "scalar"
            lines.append(f"{name}\t{shape}\t{offset}\t{arr.size}")
    with open(str(path) + ".manifest", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# name\tshape\toffset\tcount\n")
        fh.write("\n".join(lines) + "\n")


def load_tensors(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint container")
    pos = 8
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    out = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + ln].decode("utf-8")
        pos += ln
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        count = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    return out
