"""Fuse query features into the frame sequence and supervise per-frame
query-frame similarity.

The encoder projects both modalities to a common width, runs two
cross-attention layers (frames attend to query tokens) and two
self-attention layers over frames. Each layer is the bare residual form
``softmax(Q K^T / sqrt(d)) V + Q`` -- no feed-forward sublayer here.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .denoiser import sinusoidal_embed
from .validation import check_features

SCORE_EPS = 1e-7


class ResidualAttention(nn.Module):
    """Multi-head attention returning attention output plus the projected query."""

    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)

    def forward(self, x_q: Tensor, x_kv: Tensor, kv_mask: Tensor) -> Tensor:
        b, n_q, dim = x_q.shape
        n_kv = x_kv.shape[1]
        d_head = dim // self.n_heads
        q = self.q_proj(x_q).view(b, n_q, self.n_heads, d_head).transpose(1, 2)
        k = self.k_proj(x_kv).view(b, n_kv, self.n_heads, d_head).transpose(1, 2)
        v = self.v_proj(x_kv).view(b, n_kv, self.n_heads, d_head).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / d_head**0.5
        logits = logits.masked_fill(~kv_mask[:, None, None, :], float("-inf"))
        out = torch.softmax(logits, dim=-1) @ v
        out = out.transpose(1, 2).reshape(b, n_q, dim)
        return out + q.transpose(1, 2).reshape(b, n_q, dim)


class FusionEncoder(nn.Module):
    def __init__(
        self,
        d_video: int,
        d_text: int,
        embed_dim: int,
        n_heads: int,
        n_cross_layers: int = 2,
        n_self_layers: int = 2,
        use_frame_positions: bool = True,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.use_frame_positions = use_frame_positions
        self.video_proj = nn.Sequential(nn.Linear(d_video, embed_dim), nn.ReLU(), nn.Linear(embed_dim, embed_dim))
        self.text_proj = nn.Sequential(nn.Linear(d_text, embed_dim), nn.ReLU(), nn.Linear(embed_dim, embed_dim))
        self.cross_layers = nn.ModuleList(ResidualAttention(embed_dim, n_heads) for _ in range(n_cross_layers))
        self.self_layers = nn.ModuleList(ResidualAttention(embed_dim, n_heads) for _ in range(n_self_layers))

    def forward(self, video: Tensor, video_mask: Tensor, query: Tensor, query_mask: Tensor) -> Tensor:
        """(B, N_v, d_video) x (B, N_t, d_text) -> fusion embeddings (B, N_v, embed_dim).

        The output carries the video mask unchanged; masked query tokens are
        excluded from attention.
        """
        check_features(video, video_mask, "video")
        check_features(query, query_mask, "query")
        v = self.video_proj(video)
        t = self.text_proj(query)
        for layer in self.cross_layers:
            v = layer(v, t, query_mask)
        if self.use_frame_positions:
            pos = sinusoidal_embed(
                torch.arange(v.shape[1], dtype=v.dtype, device=v.device), self.embed_dim
            )
            v = v + pos
        for layer in self.self_layers:
            v = layer(v, v, video_mask)
        return v


class SimilarityHead(nn.Module):
    """Per-frame MLP producing a query-frame similarity logit."""

    def __init__(self, embed_dim: int):
        super().__init__()
        hidden = 2 * embed_dim
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, 1)
        )

    def forward(self, fusion: Tensor) -> Tensor:
        return self.mlp(fusion).squeeze(-1)


def similarity_scores(logits: Tensor, mask: Tensor) -> Tensor:
    """Sigmoid scores in (0, 1) for unmasked frames; exactly 0 on masked ones."""
    return torch.sigmoid(logits) * mask.to(logits.dtype)


def sample_score_pairs(
    labels: Tensor, mask: Tensor, n_pairs: int, generator: torch.Generator
) -> tuple[Tensor, Tensor]:
    """Uniform-with-replacement (positive, negative) frame index pairs for one sample."""
    pos = torch.nonzero(labels.bool() & mask, as_tuple=False).squeeze(-1)
    neg = torch.nonzero(~labels.bool() & mask, as_tuple=False).squeeze(-1)
    if pos.numel() == 0 or neg.numel() == 0:
        raise ValueError("pair sampling needs at least one positive and one negative unmasked frame")
    pi = torch.randint(pos.numel(), (n_pairs,), generator=generator)
    ni = torch.randint(neg.numel(), (n_pairs,), generator=generator)
    return pos[pi], neg[ni]


def default_pair_count(labels: Tensor, mask: Tensor, cap: int = 16) -> int:
    """Number of sampled pairs: positive-frame count capped at 16."""
    return int(min(int((labels.bool() & mask).sum()), cap))


def similarity_loss(
    scores: Tensor,
    labels: Tensor,
    mask: Tensor,
    generator: torch.Generator,
    n_pairs: int | None = None,
    margin: float = 0.2,
) -> Tensor:
    """Pointwise cross entropy over unmasked frames plus a pairwise margin term.

    Operates on a single sample: scores (N_v,), labels (N_v,), mask (N_v,).
    Scores are clamped away from {0, 1} before the logs.
    """
    mask = mask.bool()
    y = labels.to(scores.dtype)
    s = scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
    bce_all = -(y * torch.log(s) + (1.0 - y) * torch.log(1.0 - s))
    bce = bce_all[mask].mean()
    if n_pairs is None:
        n_pairs = default_pair_count(labels, mask)
    if n_pairs == 0:
        return bce
    pos_idx, neg_idx = sample_score_pairs(labels, mask, n_pairs, generator)
    hinge = torch.relu(margin + s[neg_idx] - s[pos_idx]).mean()
    return bce + hinge
