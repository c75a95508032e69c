"""Composition of the fusion encoder, similarity head and span denoiser,
with deterministic parameter initialization."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .condition import FusionEncoder, SimilarityHead
from .denoiser import SpanDenoiser


@dataclass
class ModelConfig:
    d_video: int
    d_text: int
    embed_dim: int = 64
    n_heads: int | None = None  # default scales with width: max(1, embed_dim // 32)
    n_spans: int = 5
    num_intensities: int = 1000
    span_scale: float = 2.0
    ffn_dim: int | None = None
    use_intensity: bool = True
    embed_type: str = "fc"
    use_frame_positions: bool = True

    def heads(self) -> int:
        return self.n_heads if self.n_heads is not None else max(1, self.embed_dim // 32)

    def validate(self) -> None:
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be a positive even number")
        if self.n_spans < 1:
            raise ValueError("n_spans must be >= 1")
        if self.num_intensities < 1:
            raise ValueError("num_intensities must be >= 1")
        if self.span_scale <= 0:
            raise ValueError("span_scale must be positive")


class GroundingModel(nn.Module):
    """Fusion encoder + similarity head + span denoiser."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.fusion = FusionEncoder(
            cfg.d_video,
            cfg.d_text,
            cfg.embed_dim,
            cfg.heads(),
            use_frame_positions=cfg.use_frame_positions,
        )
        self.sim_head = SimilarityHead(cfg.embed_dim)
        self.denoiser = SpanDenoiser(
            cfg.embed_dim,
            cfg.heads(),
            cfg.num_intensities,
            ffn_dim=cfg.ffn_dim,
            use_intensity=cfg.use_intensity,
            embed_type=cfg.embed_type,
        )


def init_parameters(model: nn.Module, generator: torch.Generator) -> None:
    """Uniform fan-in initialization for projections, zeros for biases.

    Driven by an explicit generator so construction is reproducible
    independent of global RNG state.
    """
    for module in model.modules():
        if isinstance(module, nn.Linear):
            fan_in = module.weight.shape[1]
            bound = (6.0 / fan_in) ** 0.5
            with torch.no_grad():
                module.weight.uniform_(-bound, bound, generator=generator)
                if module.bias is not None:
                    module.bias.zero_()
        elif isinstance(module, nn.LayerNorm):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()


def build_model(cfg: ModelConfig, seed: int | torch.Generator) -> GroundingModel:
    generator = seed if isinstance(seed, torch.Generator) else torch.Generator().manual_seed(seed)
    model = GroundingModel(cfg)
    init_parameters(model, generator)
    return model
