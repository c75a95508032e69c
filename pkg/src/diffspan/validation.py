"""Input validation helpers shared by the model modules and the estimator."""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor


def check_features(values: Tensor, mask: Tensor, name: str) -> None:
    """Validate a (B, N, d) feature tensor against its (B, N) boolean mask."""
    if values.ndim != 3:
        raise ValueError(f"{name} features must be (batch, length, dim), got shape {tuple(values.shape)}")
    if mask.ndim != 2 or mask.shape != values.shape[:2]:
        raise ValueError(
            f"{name} mask shape {tuple(mask.shape)} does not match features {tuple(values.shape[:2])}"
        )
    if mask.dtype != torch.bool:
        raise ValueError(f"{name} mask must be boolean, got {mask.dtype}")
    if values.shape[1] < 1:
        raise ValueError(f"{name} sequence must hold at least one position")
    if not mask.any(dim=1).all():
        raise ValueError(f"every {name} sequence needs at least one unmasked position")


def check_span_batch(spans: Tensor, lo: float = 0.0, hi: float = 1.0) -> None:
    """Validate a (..., 2) span tensor with components in [lo, hi]."""
    if spans.shape[-1] != 2:
        raise ValueError(f"spans must have trailing dim 2, got shape {tuple(spans.shape)}")
    if ((spans < lo) | (spans > hi)).any():
        raise ValueError(f"span components must lie in [{lo}, {hi}]")


def as_tensor(values, dtype: torch.dtype) -> Tensor:
    if isinstance(values, Tensor):
        return values.to(dtype)
    return torch.as_tensor(np.asarray(values), dtype=dtype)


def as_bool_tensor(values) -> Tensor:
    if isinstance(values, Tensor):
        return values.to(torch.bool)
    return torch.as_tensor(np.asarray(values)).to(torch.bool)
