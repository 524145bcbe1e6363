"""Lightweight Siamese pyramid with adjacent-volume fusion and gradient-guided refinement."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ModelConfig
from ..cost_volume import ChannelAttentionFusion, CostVolume, DisparityRange, build_gwc_volume
from ..disparity import soft_argmax, upsample_disparity
from ..photometric import ContractError, image_gradients
from .blocks import CostRegularization, ResBlock, ResidualRefinement, conv3d, convbn
from .output import ModelOutput

FACTORS = (16, 8, 4)  # coarse -> fine


class SiameseFeatures(nn.Module):
    def __init__(self, in_ch, width):
        super().__init__()
        self.stem = nn.Sequential(
            convbn(in_ch, width, stride=2),
            convbn(width, width, stride=2),
            ResBlock(width, dilation=1),
            ResBlock(width, dilation=2),
        )
        self.heads = nn.ModuleList(convbn(width, width) for _ in FACTORS)

    def forward(self, x):
        x4 = self.stem(x)
        pooled = {16: F.avg_pool2d(x4, 4), 8: F.avg_pool2d(x4, 2), 4: x4}
        return [head(pooled[f]) for head, f in zip(self.heads, FACTORS)]


class PyramidNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.family != "pyramid":
            raise ContractError(f"PyramidNet built from a {cfg.family} config")
        self.cfg = cfg
        width = cfg.channel_widths[0]
        F_ = cfg.reg_width
        self.features = SiameseFeatures(cfg.in_channels, width)
        self.aggregate = nn.ModuleList(
            nn.Sequential(conv3d(cfg.groups, F_), conv3d(F_, F_)) for _ in FACTORS
        )
        self.fusion = nn.ModuleList(ChannelAttentionFusion(F_) for _ in FACTORS[1:])
        self.heads = nn.ModuleList(CostRegularization(F_, F_, cfg.reg_depth) for _ in FACTORS)
        self.refine = ResidualRefinement(3 * cfg.in_channels + 1) if cfg.refinement else None

    def scale_range(self, factor: int) -> DisparityRange:
        lo, hi = self.cfg.base_range
        count = max(3, int(round((hi - lo) / factor)) + 1)
        return DisparityRange(lo / factor, hi / factor, count)

    def forward(self, left, right) -> ModelOutput:
        if left.shape[-2] % 16 or left.shape[-1] % 16:
            raise ContractError(f"input size {tuple(left.shape[-2:])} not divisible by 16")
        fl = self.features(left)
        fr = self.features(right)
        out = ModelOutput()
        prev = None
        for i, factor in enumerate(FACTORS):
            cand = self.scale_range(factor).candidates(dtype=left.dtype, device=left.device)
            gwc = build_gwc_volume(fl[i], fr[i], cand, self.cfg.groups)
            vol = CostVolume(self.aggregate[i](gwc.data), cand)
            if prev is not None:
                vol = self.fusion[i - 1](prev, vol)
            prev = vol
            cost = CostVolume(self.heads[i](vol.data), cand)
            out.disparities.append(soft_argmax(cost))
            out.candidates.append(cand)
        if self.refine is not None:
            d_up = upsample_disparity(out.disparities[-1], left.shape[-2:])
            g = image_gradients(left)
            out.disparities.append(self.refine(torch.cat([left, g.gx, g.gy], dim=1), d_up))
        return out
