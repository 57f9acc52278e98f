"""Conditional neural velocity field: cross-attention from query positions
to latent control points, preceded by one self-attention layer over the
latents.

Equivariance: all attention logits and values are built from invariant
attributes and contexts; in the "se2" variant each latent emits a local
2-vector that is rotated into the global frame by the latent orientation
before the attention-weighted sum, so the output transforms as a free
vector. A Gaussian window enters every attention as an additive log-space
bias -||dx||^2 / (2 sigma^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .attributes import (
    pair_attribute_dim,
    pair_attributes,
    query_attribute_dim,
    query_attributes,
    rotate,
)
from .errors import ValidationError


@dataclass
class DecoderConfig:
    n_heads: int = 2
    n_self_layers: int = 1
    hidden_dim: int = 64
    window_sigma: float = 0.1
    rff_query_scale: float = 0.05
    rff_value_scale: float = 0.2
    context_dim: int = 32

    def __post_init__(self):
        if self.window_sigma <= 0:
            raise ValidationError("window_sigma must be positive")
        if self.hidden_dim % self.n_heads:
            raise ValidationError("hidden_dim must be divisible by n_heads")
        if self.rff_query_scale <= 0 or self.rff_value_scale <= 0:
            raise ValidationError("random-feature scales must be positive")


class RFFEmbedding(nn.Module):
    """Random Fourier features. ``scale`` is a Gaussian-kernel length scale:
    frequencies are drawn N(0, (1/scale)^2), so smaller scales resolve finer
    spatial detail."""

    def __init__(self, in_dim: int, out_dim: int, scale: float):
        super().__init__()
        n_freq = out_dim // 2
        freq = torch.randn(in_dim, n_freq) / scale
        self.register_buffer("freq", freq)
        self.norm = math.sqrt(1.0 / max(n_freq, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        ang = x @ self.freq
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1) * self.norm


class LatentSelfAttention(nn.Module):
    """One attribute-aware self-attention + MLP block over latents."""

    def __init__(self, cfg: DecoderConfig, variant: str, non_equivariant: bool):
        super().__init__()
        self.cfg = cfg
        self.variant = variant
        self.non_equivariant = non_equivariant
        h, c = cfg.hidden_dim, cfg.context_dim
        self.dh = h // cfg.n_heads
        a = pair_attribute_dim(variant, non_equivariant)
        self.attr_embed = RFFEmbedding(a, h, cfg.rff_query_scale)
        self.attr_embed_v = RFFEmbedding(a, h, cfg.rff_value_scale)
        self.wq = nn.Linear(c, h)
        self.wk = nn.Linear(c, h)
        self.wk_attr = nn.Linear(h, h, bias=False)
        self.wv = nn.Linear(c, h)
        self.wv_attr = nn.Linear(h, h, bias=False)
        self.wo = nn.Linear(h, c)
        self.mlp = nn.Sequential(nn.Linear(c, h), nn.GELU(), nn.Linear(h, c))

    def forward(self, lat_pos, lat_theta, ctx):
        """lat_pos: (B, M, 2); lat_theta: (B, M); ctx: (B, M, C)."""
        b, m, _ = ctx.shape
        nh, dh = self.cfg.n_heads, self.dh
        attrs = pair_attributes(
            lat_pos.unsqueeze(2), lat_theta.unsqueeze(2),
            lat_pos.unsqueeze(1), lat_theta.unsqueeze(1),
            self.variant, self.non_equivariant,
        )  # (B, M, M, A)
        e_q = self.attr_embed(attrs)
        e_v = self.attr_embed_v(attrs)
        q = self.wq(ctx).reshape(b, m, nh, dh)
        k = self.wk(ctx).reshape(b, 1, m, nh, dh) + self.wk_attr(e_q).reshape(
            b, m, m, nh, dh
        )
        logits = torch.einsum("bihd,bijhd->bhij", q, k) / math.sqrt(dh)
        d2 = ((lat_pos.unsqueeze(2) - lat_pos.unsqueeze(1)) ** 2).sum(-1)
        logits = logits - (d2 / (2 * self.cfg.window_sigma**2)).unsqueeze(1)
        alpha = torch.softmax(logits, dim=-1)
        v = self.wv(ctx).reshape(b, 1, m, nh, dh) + self.wv_attr(e_v).reshape(
            b, m, m, nh, dh
        )
        out = torch.einsum("bhij,bijhd->bihd", alpha, v).reshape(b, m, nh * dh)
        ctx = ctx + self.wo(out)
        return ctx + self.mlp(ctx)


class FieldDecoder(nn.Module):
    """f(x; z): query positions -> velocity vectors, conditioned on latents."""

    def __init__(self, cfg: DecoderConfig, variant: str,
                 non_equivariant: bool = False, zero_init_head: bool = True):
        super().__init__()
        self.cfg = cfg
        self.variant = variant
        self.non_equivariant = non_equivariant
        h, c = cfg.hidden_dim, cfg.context_dim
        nh = cfg.n_heads
        self.dh = h // nh
        self.self_layers = nn.ModuleList(
            LatentSelfAttention(cfg, variant, non_equivariant)
            for _ in range(cfg.n_self_layers)
        )
        a = query_attribute_dim(non_equivariant)
        self.rff_q = RFFEmbedding(a, h, cfg.rff_query_scale)
        self.rff_v = RFFEmbedding(a, h, cfg.rff_value_scale)
        self.wq = nn.Linear(h, h)
        self.wk = nn.Linear(c, h)
        self.wv_ctx = nn.Linear(c, h)
        self.wv_attr = nn.Linear(h, h, bias=False)
        # Per-head local-vector head (the "value head"): dh -> h -> 2.
        self.u_w1 = nn.Parameter(torch.empty(nh, self.dh, h))
        self.u_b1 = nn.Parameter(torch.zeros(nh, h))
        self.u_w2 = nn.Parameter(torch.empty(nh, h, 2))
        self.u_b2 = nn.Parameter(torch.zeros(nh, 2))
        nn.init.uniform_(self.u_w1, -1 / math.sqrt(self.dh), 1 / math.sqrt(self.dh))
        if zero_init_head:
            nn.init.zeros_(self.u_w2)
        else:
            nn.init.uniform_(self.u_w2, -1 / math.sqrt(h), 1 / math.sqrt(h))

    def forward(self, queries, lat_pos, lat_theta, lat_ctx):
        """queries: (B, Q, 2); latents: (B, M, ...). Returns (B, Q, 2)."""
        if queries.ndim != 3 or queries.shape[-1] != 2:
            raise ValidationError("queries must have shape (B, Q, 2)")
        if lat_ctx.shape[-1] != self.cfg.context_dim:
            raise ValidationError(
                f"latent context width {lat_ctx.shape[-1]} does not match "
                f"decoder context_dim {self.cfg.context_dim}"
            )
        b, q, _ = queries.shape
        m = lat_pos.shape[1]
        nh, dh = self.cfg.n_heads, self.dh

        ctx = lat_ctx
        for layer in self.self_layers:
            ctx = layer(lat_pos, lat_theta, ctx)

        attrs = query_attributes(
            queries.unsqueeze(2), lat_pos.unsqueeze(1),
            lat_theta.unsqueeze(1).expand(b, q, m),
            self.variant, self.non_equivariant,
        )  # (B, Q, M, A)
        qe = self.wq(self.rff_q(attrs)).reshape(b, q, m, nh, dh)
        k = self.wk(ctx).reshape(b, 1, m, nh, dh)
        logits = (qe * k).sum(-1) / math.sqrt(dh)  # (B, Q, M, H)
        d2 = ((queries.unsqueeze(2) - lat_pos.unsqueeze(1)) ** 2).sum(-1)
        logits = logits - (d2 / (2 * self.cfg.window_sigma**2)).unsqueeze(-1)
        alpha = torch.softmax(logits, dim=2)  # over latents

        v = self.wv_ctx(ctx).reshape(b, 1, m, nh, dh) + self.wv_attr(
            self.rff_v(attrs)
        ).reshape(b, q, m, nh, dh)
        u = torch.einsum("bqmhd,hde->bqmhe", v, self.u_w1) + self.u_b1
        u = torch.einsum("bqmhe,heo->bqmho", torch.nn.functional.gelu(u), self.u_w2)
        u = u + self.u_b2
        if self.variant == "se2":
            u = rotate(lat_theta.reshape(b, 1, m, 1), u)
        return (alpha.unsqueeze(-1) * u).sum(dim=(2, 3))
