"""Span denoiser: maps noisy spans plus their noise intensity to refined
spans and confidence logits via cross-attention over fusion embeddings.

Span queries carry an additive sinusoidal embedding of the intensity and a
positional code built from their own (center, width) values; queries and
keys are widened by concatenating positional codes while values stay at the
embedding width. The N_r span queries never attend to each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .validation import check_features, check_span_batch


def sinusoidal_embed(values: Tensor, dim: int, max_period: float = 10000.0) -> Tensor:
    """(...,) -> (..., dim): sin/cos of the value over geometric periods 1..max_period."""
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    exponents = torch.arange(half, dtype=values.dtype, device=values.device)
    periods = max_period ** (exponents / max(half - 1, 1))
    angles = values.unsqueeze(-1) / periods
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


@dataclass
class PredictionSet:
    """Per-query prediction: spans as normalized (center, width), confidence logits."""

    spans: np.ndarray  # (N_r, 2)
    confidence: np.ndarray  # (N_r,)

    def top1(self) -> np.ndarray:
        return self.spans[int(np.argmax(self.confidence))]


class CrossAttentionBlock(nn.Module):
    """Masked cross-attention with concat positional codes, then LayerNorm + FFN."""

    def __init__(self, dim: int, n_heads: int, ffn_dim: int):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.norm_attn = nn.LayerNorm(dim)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim))

    def _heads(self, x: Tensor) -> Tensor:
        b, n, dim = x.shape
        return x.view(b, n, self.n_heads, dim // self.n_heads).transpose(1, 2)

    def forward(self, h: Tensor, pos_q: Tensor, memory: Tensor, pos_kv: Tensor, kv_mask: Tensor) -> Tensor:
        d_head = h.shape[-1] // self.n_heads
        q = torch.cat([self._heads(self.q_proj(h)), self._heads(pos_q)], dim=-1)
        k = torch.cat([self._heads(self.k_proj(memory)), self._heads(pos_kv)], dim=-1)
        v = self._heads(self.v_proj(memory))
        logits = q @ k.transpose(-1, -2) / (2 * d_head) ** 0.5
        logits = logits.masked_fill(~kv_mask[:, None, None, :], float("-inf"))
        out = torch.softmax(logits, dim=-1) @ v
        out = out.transpose(1, 2).reshape(h.shape)
        h = self.norm_attn(h + out)
        return self.norm_ffn(h + self.ffn(h))


class SpanDenoiser(nn.Module):
    def __init__(
        self,
        embed_dim: int,
        n_heads: int,
        max_intensity: int,
        n_layers: int = 2,
        ffn_dim: int | None = None,
        use_intensity: bool = True,
        embed_type: str = "fc",
    ):
        super().__init__()
        if embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even")
        if embed_type not in ("fc", "roi"):
            raise ValueError(f"unknown embed_type {embed_type!r}")
        self.embed_dim = embed_dim
        self.max_intensity = max_intensity
        self.use_intensity = use_intensity
        self.embed_type = embed_type
        self.span_in = nn.Linear(2, embed_dim)
        self.blocks = nn.ModuleList(
            CrossAttentionBlock(embed_dim, n_heads, ffn_dim or 4 * embed_dim) for _ in range(n_layers)
        )
        self.span_head = nn.Linear(embed_dim, 2)
        self.conf_head = nn.Linear(embed_dim, 1)

    def _roi_embed(self, spans: Tensor, fusion: Tensor, fusion_mask: Tensor) -> Tensor:
        # mean of fusion rows whose frame center falls inside the span;
        # hard slicing (no gradient to the span coordinates), kept only for
        # the embedding-type comparison.
        n_frames = fusion.shape[1]
        t = (torch.arange(n_frames, device=fusion.device, dtype=spans.dtype) + 0.5) / n_frames
        start = spans[..., 0] - spans[..., 1] / 2
        end = spans[..., 0] + spans[..., 1] / 2
        member = (t >= start.unsqueeze(-1)) & (t <= end.unsqueeze(-1))  # (B, N_r, N_v)
        member = member & fusion_mask[:, None, :]
        empty = ~member.any(-1)
        if empty.any():
            # fall back to the unmasked frame nearest the span center
            dist = (t - spans[..., 0].unsqueeze(-1)).abs()
            dist = dist.masked_fill(~fusion_mask[:, None, :], float("inf"))
            nearest = nn.functional.one_hot(dist.argmin(-1), n_frames).bool()
            member = torch.where(empty.unsqueeze(-1), nearest, member)
        weights = member.to(fusion.dtype)
        weights = weights / weights.sum(-1, keepdim=True)
        return weights @ fusion

    def forward(self, spans: Tensor, intensity: int | Tensor, fusion: Tensor, fusion_mask: Tensor):
        """Denoise one batch of span sets.

        spans: (B, N_r, 2) in [0, 1] (already mapped back from the diffusion
        domain); intensity: int or (B,) tensor in [1, max_intensity];
        fusion: (B, N_v, D) with its (B, N_v) mask.
        Returns (refined spans (B, N_r, 2) in [0, 1], confidence logits (B, N_r)).
        """
        if spans.ndim != 3 or spans.shape[1] < 1:
            raise ValueError(f"spans must be (batch, n_spans >= 1, 2), got {tuple(spans.shape)}")
        check_span_batch(spans)
        check_features(fusion, fusion_mask, "fusion")
        if not isinstance(intensity, Tensor):
            intensity = torch.full((spans.shape[0],), int(intensity), dtype=torch.long, device=spans.device)
        if ((intensity < 1) | (intensity > self.max_intensity)).any():
            raise ValueError(f"intensity out of range [1, {self.max_intensity}]")

        if self.embed_type == "roi":
            h = self._roi_embed(spans, fusion, fusion_mask)
        else:
            h = self.span_in(spans)
        if self.use_intensity:
            h = h + sinusoidal_embed(intensity.to(spans.dtype), self.embed_dim).unsqueeze(1)

        # span coordinates are embedded on the frame-index scale so the
        # query and key position codes live in the same space
        half = self.embed_dim // 2
        n_frames = fusion.shape[1]
        pos_q = torch.cat(
            [
                sinusoidal_embed(spans[..., 0] * n_frames, half),
                sinusoidal_embed(spans[..., 1] * n_frames, half),
            ],
            dim=-1,
        )
        pos_kv = sinusoidal_embed(
            torch.arange(n_frames, dtype=spans.dtype, device=spans.device), self.embed_dim
        ).expand(fusion.shape[0], -1, -1)

        for block in self.blocks:
            h = block(h, pos_q, fusion, pos_kv, fusion_mask)
        return torch.sigmoid(self.span_head(h)), self.conf_head(h).squeeze(-1)
