"""Matching-cost volumes over explicit signed disparity candidates.

A volume stores its candidates next to the data. Candidates are either a 1-D
tensor shared by every pixel or a ``B x D x H x W`` tensor of per-pixel
hypotheses (the refined cascade stages).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .photometric import ContractError, sample_columns


@dataclass(frozen=True)
class DisparityRange:
    d_min: float
    d_max: float
    count: int

    def __post_init__(self):
        if self.d_min > self.d_max:
            raise ContractError(f"d_min {self.d_min} > d_max {self.d_max}")
        if self.count < 2:
            raise ContractError("a disparity range needs at least 2 candidates")

    def candidates(self, dtype=torch.float32, device=None) -> torch.Tensor:
        n = torch.arange(self.count, dtype=torch.float64)
        values = self.d_min + n * (self.d_max - self.d_min) / (self.count - 1)
        return values.to(dtype=dtype, device=device)

    def scaled(self, factor: float, count: Optional[int] = None) -> "DisparityRange":
        return DisparityRange(self.d_min * factor, self.d_max * factor, count or self.count)


@dataclass
class CostVolume:
    data: torch.Tensor  # B x F x D x H x W, or B x D x H x W for a scalar cost
    candidates: torch.Tensor  # (D,) or B x D x H x W

    @property
    def num_candidates(self) -> int:
        return self.candidates.shape[0] if self.candidates.dim() == 1 else self.candidates.shape[1]

    def candidate_grid(self) -> torch.Tensor:
        """Candidates broadcastable against ``B x D x H x W``."""
        if self.candidates.dim() == 1:
            return self.candidates.view(1, -1, 1, 1)
        return self.candidates


Candidates = Union[torch.Tensor, DisparityRange]


def _as_candidates(candidates: Candidates, ref: torch.Tensor) -> torch.Tensor:
    if isinstance(candidates, DisparityRange):
        return candidates.candidates(dtype=ref.dtype, device=ref.device)
    return candidates.to(dtype=ref.dtype)


def _shifted_right(fl: torch.Tensor, fr: torch.Tensor, cand: torch.Tensor) -> torch.Tensor:
    if fl.shape != fr.shape:
        raise ContractError(f"feature maps differ in shape: {tuple(fl.shape)} vs {tuple(fr.shape)}")
    B, C, H, W = fl.shape
    cols = torch.arange(W, dtype=fl.dtype, device=fl.device).view(1, 1, 1, W)
    if cand.dim() == 1:
        if cand.numel() and cand.abs().max() >= W:
            raise ContractError(f"candidate magnitude must be < feature width {W}")
        x = (cols - cand.view(1, -1, 1, 1)).expand(B, -1, H, W)
    else:
        if cand.shape[0] != B or cand.shape[-2:] != (H, W):
            raise ContractError("per-pixel candidates do not match the feature grid")
        x = cols - cand
    warped, _ = sample_columns(fr, x)
    return warped


def build_concat_volume(fl: torch.Tensor, fr: torch.Tensor, candidates: Candidates) -> CostVolume:
    """``[Fl(x, y), Fr(x - d, y)]`` stacked along features, ``B x 2C x D x H x W``."""
    cand = _as_candidates(candidates, fl)
    warped = _shifted_right(fl, fr, cand)
    left = fl.unsqueeze(2).expand_as(warped)
    return CostVolume(torch.cat([left, warped], dim=1), cand)


def build_gwc_volume(fl: torch.Tensor, fr: torch.Tensor, candidates: Candidates, groups: int) -> CostVolume:
    """Group-wise correlation: per group, the channel-mean of ``Fl * Fr(x - d)``."""
    B, C, H, W = fl.shape
    if groups < 1 or C % groups:
        raise ContractError(f"{C} channels not divisible into {groups} groups")
    cand = _as_candidates(candidates, fl)
    warped = _shifted_right(fl, fr, cand)
    prod = fl.unsqueeze(2) * warped
    D = prod.shape[2]
    cost = prod.view(B, groups, C // groups, D, H, W).mean(dim=2)
    return CostVolume(cost, cand)


def _same_candidates(a: torch.Tensor, b: torch.Tensor) -> bool:
    return a.shape == b.shape and bool(torch.equal(a, b))


def combine_volumes(concat: CostVolume, gwc: CostVolume) -> CostVolume:
    if not _same_candidates(concat.candidates, gwc.candidates):
        raise ContractError("cannot combine volumes built over different candidates")
    if concat.data.shape[0] != gwc.data.shape[0] or concat.data.shape[2:] != gwc.data.shape[2:]:
        raise ContractError("volumes differ in spatial or candidate extent")
    return CostVolume(torch.cat([concat.data, gwc.data], dim=1), concat.candidates)


def upsample_volume(coarse: CostVolume, fine: CostVolume) -> torch.Tensor:
    """Resample a coarse feature volume onto the next finer grid.

    Spatial size doubles and every coarse candidate ``d`` maps to ``2d``; the
    doubled coarse span must coincide with the fine candidate span.
    """
    if coarse.candidates.dim() != 1 or fine.candidates.dim() != 1:
        raise ContractError("volume fusion needs shared 1-D candidate lists")
    if coarse.data.dim() != 5 or fine.data.dim() != 5:
        raise ContractError("volume fusion works on feature volumes B x F x D x H x W")
    cH, cW = coarse.data.shape[-2:]
    fH, fW = fine.data.shape[-2:]
    if (2 * cH, 2 * cW) != (fH, fW) or coarse.data.shape[:2] != fine.data.shape[:2]:
        raise ContractError("coarse volume does not upsample onto the fine grid")
    doubled = 2 * coarse.candidates
    span_ok = torch.allclose(doubled[[0, -1]], fine.candidates[[0, -1]].to(doubled.dtype), atol=1e-5)
    if not span_ok:
        raise ContractError("doubled coarse candidates do not span the fine candidate range")
    size = (fine.num_candidates, fH, fW)
    return F.interpolate(coarse.data, size=size, mode="trilinear", align_corners=True)


class ChannelAttentionFusion(nn.Module):
    """Blend adjacent-scale volumes with per-channel weights ``alpha`` and ``1 - alpha``.

    ``alpha`` comes from a squeeze-style block (global pooling, two linear
    layers, sigmoid) applied to the sum of the upsampled coarse and fine volumes.
    """

    def __init__(self, channels: int, reduction: int = 2):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc = nn.Sequential(
            nn.Linear(channels, hidden),
            nn.ReLU(inplace=True),
            nn.Linear(hidden, channels),
        )

    def forward(self, coarse: CostVolume, fine: CostVolume, alpha=None) -> CostVolume:
        up = upsample_volume(coarse, fine)
        if alpha is None:
            squeezed = (up + fine.data).mean(dim=(2, 3, 4))
            alpha = torch.sigmoid(self.fc(squeezed))[:, :, None, None, None]
        elif not torch.is_tensor(alpha):
            alpha = torch.full_like(up[:, :, :1, :1, :1], float(alpha))
        return CostVolume(alpha * up + (1 - alpha) * fine.data, fine.candidates)


def fuse_adjacent_volumes(coarse: CostVolume, fine: CostVolume, attention: ChannelAttentionFusion,
                          alpha=None) -> CostVolume:
    return attention(coarse, fine, alpha=alpha)
