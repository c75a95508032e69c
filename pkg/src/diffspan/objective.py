"""Training targets, bipartite matching between predictions and ground
truth, and the composite span-denoising loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor
from scipy.optimize import linear_sum_assignment

from . import spans as span_ops
from .diffusion import NoiseSchedule, q_sample


@dataclass
class LossWeights:
    lambda_l1: float = 10.0
    lambda_iou: float = 1.0
    lambda_ce: float = 4.0
    lambda_sim: float = 1.0

    def validate(self) -> None:
        if min(self.lambda_l1, self.lambda_iou, self.lambda_ce, self.lambda_sim) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int], ...]  # (gt_index, pred_index), sorted by gt
    unmatched_pred: tuple[int, ...]


def pad_inputs(
    gt_spans: Tensor,
    n_spans: int,
    m: int,
    schedule: NoiseSchedule,
    scale: float,
    generator: torch.Generator,
) -> Tensor:
    """Noised ground-truth spans padded with pure-noise spans, shuffled.

    gt_spans: (K, 2) in [0, 1] with 1 <= K <= n_spans. Output: (n_spans, 2)
    in [0, 1] (noising happens in the scaled domain, then clamp + rescale).
    """
    k = gt_spans.shape[0]
    if not 1 <= k <= n_spans:
        raise ValueError(f"need 1 <= n_gt <= n_spans, got {k} > {n_spans}")
    eps = torch.randn(k, 2, generator=generator, dtype=gt_spans.dtype)
    noised = q_sample(span_ops.scale_up(gt_spans, scale), m, schedule, eps)
    filler = torch.randn(n_spans - k, 2, generator=generator, dtype=gt_spans.dtype)
    stacked = torch.cat([noised, filler], dim=0)
    perm = torch.randperm(n_spans, generator=generator)
    return span_ops.scale_down(stacked[perm], scale)


def pairwise_match_cost(pred_spans: Tensor, conf_logits: Tensor, gt_spans: Tensor, w: LossWeights) -> Tensor:
    """(K, N_r) matching costs: L1 + gIoU-loss regression terms minus confidence."""
    l1 = (gt_spans[:, None, :] - pred_spans[None, :, :]).abs().sum(-1)
    giou = span_ops.pairwise_giou_loss(gt_spans, pred_spans)
    return w.lambda_l1 * l1 + w.lambda_iou * giou - w.lambda_ce * torch.sigmoid(conf_logits)[None, :]


def _assignment_cost(costs: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    return float(costs[rows, cols].sum())


def hungarian_match(costs: Tensor | np.ndarray) -> MatchResult:
    """Minimum-cost assignment of each gt row to a distinct prediction column.

    Ties between optimal assignments break toward the lexicographically
    smallest (gt_index, pred_index) pair list.
    """
    c = costs.detach().cpu().numpy() if isinstance(costs, Tensor) else np.asarray(costs)
    c = c.astype(np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {c.shape}")
    k, n = c.shape
    if k > n:
        raise ValueError(f"more ground-truth rows ({k}) than predictions ({n})")
    if k == 1:
        p = int(np.argmin(c[0]))
        return MatchResult(((0, p),), tuple(i for i in range(n) if i != p))

    rows, cols = linear_sum_assignment(c)
    optimal = _assignment_cost(c, rows, cols)
    tol = 1e-9 * (1.0 + abs(optimal))

    # fix columns greedily in gt order, keeping the completion optimal
    available = list(range(n))
    chosen: list[int] = []
    fixed = 0.0
    for g in range(k):
        for p in available:
            remaining = [q for q in available if q != p]
            if g + 1 < k:
                sub = c[g + 1 :, remaining]
                sub_rows, sub_cols = linear_sum_assignment(sub)
                completion = _assignment_cost(sub, sub_rows, sub_cols)
            else:
                completion = 0.0
            if fixed + c[g, p] + completion <= optimal + tol:
                chosen.append(p)
                fixed += c[g, p]
                available = remaining
                break
        else:  # pragma: no cover - optimal assignment always completes
            raise RuntimeError("assignment search failed to complete")
    pairs = tuple((g, p) for g, p in enumerate(chosen))
    return MatchResult(pairs, tuple(sorted(available)))


def vmr_loss(pred_spans: Tensor, conf_logits: Tensor, gt_spans: Tensor, w: LossWeights) -> Tensor:
    """Matched L1 + gIoU regression plus confidence cross entropy over all spans.

    Matching is computed on detached costs; the loss is normalized by the
    number of ground-truth spans.
    """
    if gt_spans.shape[0] < 1:
        raise ValueError("need at least one ground-truth span")
    with torch.no_grad():
        costs = pairwise_match_cost(pred_spans, conf_logits, gt_spans, w)
    match = hungarian_match(costs)
    g_idx = torch.tensor([g for g, _ in match.pairs], dtype=torch.long)
    p_idx = torch.tensor([p for _, p in match.pairs], dtype=torch.long)
    matched_pred = pred_spans[p_idx]
    matched_gt = gt_spans[g_idx]
    l1 = (matched_pred - matched_gt).abs().sum()
    giou = span_ops.giou_loss(matched_pred, matched_gt).sum()
    labels = torch.zeros_like(conf_logits)
    labels[p_idx] = 1.0
    ce = torch.nn.functional.binary_cross_entropy_with_logits(conf_logits, labels, reduction="sum")
    k = gt_spans.shape[0]
    return (w.lambda_l1 * l1 + w.lambda_iou * giou + w.lambda_ce * ce) / k


def total_loss(sim: Tensor | float, vmr: Tensor | float, w: LossWeights) -> Tensor | float:
    """Combined objective: lambda_sim * similarity loss + denoising loss."""
    return w.lambda_sim * sim + vmr
