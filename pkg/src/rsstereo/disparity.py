"""Disparity readout from cost volumes and attention maps, uncertainty and range propagation."""
from __future__ import annotations

from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .cost_volume import CostVolume
from .photometric import ContractError


def _scalar_cost(cost: CostVolume) -> torch.Tensor:
    data = cost.data
    if data.dim() == 5:
        if data.shape[1] != 1:
            raise ContractError("soft-argmax needs a scalar cost (feature dimension 1)")
        data = data[:, 0]
    if cost.num_candidates < 2:
        raise ContractError("soft-argmax needs at least two candidates")
    if data.shape[1] != cost.num_candidates:
        raise ContractError("cost volume and candidate list disagree in length")
    return data


def disparity_probability(cost: CostVolume) -> torch.Tensor:
    """``softmax(-c)`` over the candidate axis, ``B x D x H x W``."""
    return F.softmax(-_scalar_cost(cost), dim=1)


def soft_argmax(cost: CostVolume) -> torch.Tensor:
    """Expected signed candidate value under ``softmax(-c)``, ``B x 1 x H x W``."""
    prob = disparity_probability(cost)
    return (prob * cost.candidate_grid()).sum(dim=1, keepdim=True)


def estimate_uncertainty(cost: CostVolume, dhat: torch.Tensor) -> torch.Tensor:
    """Standard deviation of the ``softmax(-c)`` distribution around ``dhat``."""
    prob = disparity_probability(cost)
    var = (prob * (cost.candidate_grid() - dhat) ** 2).sum(dim=1, keepdim=True)
    return torch.sqrt(var.clamp(min=1e-12))


def sample_candidates(d_min, d_max, count: int):
    """``count`` evenly spaced values from ``d_min`` to ``d_max`` inclusive.

    Scalars give a 1-D tensor; ``B x 1 x H x W`` bounds give ``B x count x H x W``.
    """
    if count < 2:
        raise ContractError(f"need at least 2 candidates, got {count}")
    if not torch.is_tensor(d_min):
        n = torch.arange(count, dtype=torch.float64)
        return (d_min + n * (d_max - d_min) / (count - 1)).float()
    n = torch.arange(count, dtype=d_min.dtype, device=d_min.device).view(1, -1, 1, 1)
    return d_min + n * (d_max - d_min) / (count - 1)


def upsample_disparity(d: torch.Tensor, size) -> torch.Tensor:
    """Bilinear resize of a disparity field with values rescaled to the new width."""
    scale = size[-1] / d.shape[-1]
    return F.interpolate(d, size=tuple(size), mode="bilinear", align_corners=False) * scale


def next_stage_range(dhat: torch.Tensor, sigma: torch.Tensor, s, eps, min_width: float = 2.0,
                     bounds: Optional[Tuple[float, float]] = None, upsample: bool = True):
    """Search bounds ``dhat -/+ ((s + 1) * sigma + eps)`` for the next finer stage.

    The half width is clipped at zero so the interval always contains ``dhat``.
    ``bounds`` clips to a global range at the current scale. With ``upsample``
    the bounds are bilinearly resized to twice the resolution and doubled.
    Finally any interval narrower than ``min_width`` (output-scale pixels) is
    widened symmetrically about its midpoint.
    """
    half = ((s + 1) * sigma + eps).clamp(min=0)
    lo = dhat - half
    hi = dhat + half
    if bounds is not None:
        lo = lo.clamp(min=bounds[0], max=bounds[1])
        hi = hi.clamp(min=bounds[0], max=bounds[1])
    if upsample:
        size = (2 * dhat.shape[-2], 2 * dhat.shape[-1])
        lo = upsample_disparity(lo, size)
        hi = upsample_disparity(hi, size)
    mid = 0.5 * (lo + hi)
    width = (hi - lo).clamp(min=min_width)
    return mid - 0.5 * width, mid + 0.5 * width


class UncertaintyRange(nn.Module):
    """Learnable range factors of one cascade stage, both starting at zero."""

    def __init__(self, min_width: float = 2.0):
        super().__init__()
        self.s = nn.Parameter(torch.zeros(()))
        self.eps = nn.Parameter(torch.zeros(()))
        self.min_width = min_width

    def forward(self, dhat, sigma, bounds=None, upsample=True):
        return next_stage_range(dhat, sigma, self.s, self.eps, self.min_width, bounds, upsample)


def check_attention(attention: torch.Tensor, tol: float = 1e-4):
    if attention.dim() != 4 or attention.shape[-1] != attention.shape[-2]:
        raise ContractError("attention map must be B x H x W x W")
    rows = attention.sum(dim=-1)
    if (rows > 1 + tol).any() or (attention < -tol).any():
        raise ContractError("attention rows must be non-negative and sum to at most 1")


def pam_disparity(attention: torch.Tensor, check: bool = True) -> torch.Tensor:
    """Disparity ``j - sum_k k * M[..., j, k]`` from a row-wise matching map.

    ``attention[b, i, j, k]`` is the probability that pixel ``j`` of the
    reference view matches column ``k`` of the other view; the result follows
    the warp convention (match at ``x - d``).
    """
    if check:
        check_attention(attention)
    W = attention.shape[-1]
    k = torch.arange(W, dtype=attention.dtype, device=attention.device)
    matched = (attention * k).sum(dim=-1)
    return (k.view(1, 1, W) - matched).unsqueeze(1)
