"""Variance schedule, forward q-sampling and the DDIM reverse update.

Spans live in the scaled domain [-scale, scale] here; conversion to and
from [0, 1] span space is the caller's job (see :mod:`diffspan.spans`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor

BETA_CLIP = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative schedule: beta[m-1] and alpha_bar[m] for m in 1..M, alpha_bar[0] = 1."""

    beta: Tensor
    alpha_bar: Tensor

    @property
    def num_steps(self) -> int:
        return int(self.beta.shape[0])


def build_cosine_schedule(num_steps: int, s_offset: float = 0.008) -> NoiseSchedule:
    """Cosine alpha_bar schedule with the usual small-offset and beta clipping."""
    if num_steps <= 0:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if s_offset <= 0:
        raise ValueError(f"s_offset must be > 0, got {s_offset}")
    m = torch.arange(num_steps + 1, dtype=torch.float64)
    f = torch.cos((m / num_steps + s_offset) / (1.0 + s_offset) * math.pi / 2.0) ** 2
    alpha_bar = f / f[0]
    beta = (1.0 - alpha_bar[1:] / alpha_bar[:-1]).clamp(max=BETA_CLIP)
    # re-accumulate so alpha_bar stays consistent with the clipped betas
    alpha_bar = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(1.0 - beta, dim=0)])
    return NoiseSchedule(beta=beta, alpha_bar=alpha_bar)


def _gather_alpha_bar(schedule: NoiseSchedule, m: int | Tensor, ndim: int, ref: Tensor) -> Tensor:
    ab = schedule.alpha_bar.to(ref.dtype)
    if isinstance(m, Tensor):
        out = ab[m]
        return out.reshape(out.shape + (1,) * (ndim - out.ndim))
    return ab[m]


def _check_intensity(m: int | Tensor, num_steps: int, low: int = 1) -> None:
    if isinstance(m, Tensor):
        bad = (m < low) | (m > num_steps)
        if bad.any():
            raise ValueError(f"intensity out of range [{low}, {num_steps}]")
    elif not low <= m <= num_steps:
        raise ValueError(f"intensity {m} out of range [{low}, {num_steps}]")


def q_sample(x0: Tensor, m: int | Tensor, schedule: NoiseSchedule, eps: Tensor) -> Tensor:
    """One-shot forward noising: sqrt(ab_m) * x0 + sqrt(1 - ab_m) * eps.

    Output is pre-clamp; callers clamp to [-scale, scale] before mapping
    back to span space. ``m`` may be a per-sample LongTensor broadcast over
    leading dims of ``x0``.
    """
    _check_intensity(m, schedule.num_steps)
    ab = _gather_alpha_bar(schedule, m, x0.ndim, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def ddim_step(
    x_m: Tensor,
    x0_pred: Tensor,
    m: int,
    m_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    eps: Tensor | None = None,
) -> Tensor:
    """Reverse update from intensity m to m_prev given the model's x0 estimate.

    With eta = 0 the step is deterministic; eta > 0 re-injects noise with the
    usual sigma_m coefficient.
    """
    if not 0 <= m_prev < m <= schedule.num_steps:
        raise ValueError(f"need 0 <= m_prev < m <= {schedule.num_steps}, got m={m}, m_prev={m_prev}")
    ab_m = _gather_alpha_bar(schedule, m, x_m.ndim, x_m)
    ab_prev = _gather_alpha_bar(schedule, m_prev, x_m.ndim, x_m)
    sigma = eta * torch.sqrt((1.0 - ab_prev) / (1.0 - ab_m)) * torch.sqrt(1.0 - ab_m / ab_prev)
    eps_implied = (x_m - torch.sqrt(ab_m) * x0_pred) / torch.sqrt(1.0 - ab_m)
    out = torch.sqrt(ab_prev) * x0_pred + torch.sqrt((1.0 - ab_prev - sigma**2).clamp_min(0.0)) * eps_implied
    if eta > 0:
        if eps is None:
            raise ValueError("eta > 0 requires a noise draw")
        out = out + sigma * eps
    return out


def sample_intensity(num_steps: int, generator: torch.Generator, size: tuple[int, ...] = ()) -> Tensor:
    """Uniform integer intensities in [1, num_steps]."""
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    return torch.randint(1, num_steps + 1, size, generator=generator)


def inference_ladder(num_steps: int, steps: int) -> list[int]:
    """Evenly spaced descending intensities from num_steps down to 1, ``steps`` entries."""
    if not 1 <= steps <= num_steps:
        raise ValueError(f"steps must be in [1, {num_steps}], got {steps}")
    if steps == 1:
        return [num_steps]
    raw = torch.linspace(num_steps, 1, steps, dtype=torch.float64).round().long().tolist()
    # guard strict descent against rounding collisions at small num_steps
    ladder = [raw[0]]
    for v in raw[1:]:
        ladder.append(min(v, ladder[-1] - 1))
    if ladder[-1] < 1:
        raise ValueError(f"steps={steps} too large for num_steps={num_steps}")
    return ladder
