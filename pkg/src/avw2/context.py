"""Contextual encoder: width projection + pre-norm transformer stack.

Two input-width classes are supported by dedicated linear projections (the
fused concatenation width and the bare audio width); both land in the same
model width, get sinusoidal absolute position encoding, and run through N
pre-norm self-attention blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from avw2 import autodiff as ad
from avw2.encoders import FeatureSequence


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 4
    width: int = 64
    heads: int = 4
    ff_width: int = 256
    dropout: float = 0.0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def position_encoding(T: int, d: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal absolute positions, (T, d)."""
    pos = np.arange(T, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, idx / d)
    pe = np.zeros((T, d), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe.astype(dtype)


class ContextEncoder:
    """Projects per-frame features to model width and contextualizes them."""

    def __init__(self, cfg: TransformerConfig, input_widths: dict[str, int],
                 rng: np.random.Generator, dtype=np.float32):
        """``input_widths`` maps a projection name ('fused', 'single') to D_in."""
        self.cfg = cfg
        self.dtype = dtype
        self.input_widths = dict(input_widths)
        d, ff = cfg.width, cfg.ff_width
        self.params: dict[str, ad.Tensor] = {}

        def weight(name, shape, fan_in):
            self.params[name] = ad.Tensor(
                rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(dtype),
                requires_grad=True)

        def bias(name, size):
            self.params[name] = ad.Tensor(np.zeros(size, dtype=dtype), requires_grad=True)

        def ln(name):
            self.params[f"{name}.g"] = ad.Tensor(np.ones(d, dtype=dtype), requires_grad=True)
            self.params[f"{name}.b"] = ad.Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

        for name, width in self.input_widths.items():
            weight(f"proj.{name}.w", (width, d), width)
            bias(f"proj.{name}.b", d)
        for i in range(cfg.layers):
            ln(f"block{i}.ln1")
            for mat in ("q", "k", "v", "o"):
                weight(f"block{i}.attn.{mat}.w", (d, d), d)
                bias(f"block{i}.attn.{mat}.b", d)
            ln(f"block{i}.ln2")
            weight(f"block{i}.ff.w1", (d, ff), d)
            bias(f"block{i}.ff.b1", ff)
            weight(f"block{i}.ff.w2", (ff, d), ff)
            bias(f"block{i}.ff.b2", d)
        ln("final_ln")

    def project(self, features: FeatureSequence | ad.Tensor) -> ad.Tensor:
        """Linear map for the matching input width, plus position encoding."""
        x = features.data if isinstance(features, FeatureSequence) else features
        width = x.shape[-1]
        name = next((n for n, w in self.input_widths.items() if w == width), None)
        if name is None:
            raise ad.ShapeError("project", x.shape, tuple(self.input_widths.values()))
        out = ad.linear(x, self.params[f"proj.{name}.w"], self.params[f"proj.{name}.b"])
        pe = position_encoding(x.shape[0], self.cfg.width, dtype=x.data.dtype)
        return ad.add(out, ad.Tensor(pe))

    def _attention(self, i: int, x: ad.Tensor, collect=None) -> ad.Tensor:
        d, h = self.cfg.width, self.cfg.heads
        dh = d // h
        scale = 1.0 / math.sqrt(dh)
        p = self.params
        q = ad.linear(x, p[f"block{i}.attn.q.w"], p[f"block{i}.attn.q.b"])
        k = ad.linear(x, p[f"block{i}.attn.k.w"], p[f"block{i}.attn.k.b"])
        v = ad.linear(x, p[f"block{i}.attn.v.w"], p[f"block{i}.attn.v.b"])
        heads = []
        for j in range(h):
            qj = ad.narrow(q, -1, j * dh, dh)
            kj = ad.narrow(k, -1, j * dh, dh)
            vj = ad.narrow(v, -1, j * dh, dh)
            attn = ad.softmax(ad.mul(ad.matmul(qj, ad.transpose(kj)), scale))
            if collect is not None:
                collect.append(attn.data.copy())
            heads.append(ad.matmul(attn, vj))
        merged = ad.concat(heads, axis=-1)
        return ad.linear(merged, p[f"block{i}.attn.o.w"], p[f"block{i}.attn.o.b"])

    def forward(self, x: ad.Tensor, return_attention: bool = False):
        """(T, d) in, (T, d) out through N pre-norm blocks."""
        if x.data.ndim != 2 or x.shape[1] != self.cfg.width:
            raise ad.ShapeError("transformer_forward", x.shape, (self.cfg.width,))
        p = self.params
        attention = [] if return_attention else None
        for i in range(self.cfg.layers):
            layer_attn = [] if return_attention else None
            normed = ad.layer_norm(x, p[f"block{i}.ln1.g"], p[f"block{i}.ln1.b"])
            x = ad.add(x, self._attention(i, normed, collect=layer_attn))
            normed = ad.layer_norm(x, p[f"block{i}.ln2.g"], p[f"block{i}.ln2.b"])
            ff = ad.linear(ad.gelu(ad.linear(normed, p[f"block{i}.ff.w1"], p[f"block{i}.ff.b1"])),
                           p[f"block{i}.ff.w2"], p[f"block{i}.ff.b2"])
            x = ad.add(x, ff)
            if not np.all(np.isfinite(x.data)):
                raise ad.NumericError(f"non-finite activations in transformer block {i}")
            if return_attention:
                attention.append(layer_attn)
        out = ad.layer_norm(x, p["final_ln.g"], p["final_ln.b"])
        if return_attention:
            return out, attention
        return out

    def encode(self, features: FeatureSequence | ad.Tensor) -> ad.Tensor:
        return self.forward(self.project(features))
