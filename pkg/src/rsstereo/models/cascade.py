"""Cascaded coarse-to-fine matcher with uncertainty-driven search ranges."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ModelConfig
from ..cost_volume import CostVolume, DisparityRange, build_concat_volume, build_gwc_volume, combine_volumes
from ..disparity import UncertaintyRange, estimate_uncertainty, sample_candidates, soft_argmax
from ..photometric import ContractError
from .blocks import CostRegularization, ResBlock, convbn
from .output import ModelOutput


class FeaturePyramid(nn.Module):
    """Shared-weight encoder with a top-down path; returns features fine -> coarse."""

    def __init__(self, in_ch, widths, concat_channels):
        super().__init__()
        self.enc = nn.ModuleList()
        prev = in_ch
        for level, w in enumerate(widths):
            stride = 1 if level == 0 else 2
            self.enc.append(nn.Sequential(convbn(prev, w, stride=stride), ResBlock(w)))
            prev = w
        self.lateral = nn.ModuleList(
            convbn(widths[l] + widths[l + 1], widths[l]) for l in range(len(widths) - 1)
        )
        self.concat_heads = nn.ModuleList(nn.Conv2d(w, concat_channels, 1) for w in widths)

    def forward(self, x):
        skips = []
        for layer in self.enc:
            x = layer(x)
            skips.append(x)
        outs = [None] * len(skips)
        outs[-1] = skips[-1]
        for l in range(len(skips) - 2, -1, -1):
            up = F.interpolate(outs[l + 1], size=skips[l].shape[-2:], mode="bilinear", align_corners=False)
            outs[l] = self.lateral[l](torch.cat([skips[l], up], dim=1))
        concat = [head(f) for head, f in zip(self.concat_heads, outs)]
        return outs, concat


class CascadeNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.family != "cascade":
            raise ContractError(f"CascadeNet built from a {cfg.family} config")
        self.cfg = cfg
        S = cfg.scales
        widths = cfg.channel_widths[:S]
        self.features = FeaturePyramid(cfg.in_channels, widths, cfg.concat_channels)
        # stage s runs at level S-1-s (coarse -> fine)
        self.regularizers = nn.ModuleList(
            CostRegularization(2 * cfg.concat_channels + cfg.groups, cfg.reg_width, cfg.reg_depth)
            for _ in range(S)
        )
        self.ranges = nn.ModuleList(UncertaintyRange(cfg.min_range_width) for _ in range(S - 1))

    def level_range(self, level: int) -> DisparityRange:
        lo, hi = self.cfg.base_range
        return DisparityRange(lo / 2 ** level, hi / 2 ** level, self.cfg.stage_candidates[0])

    def forward(self, left, right) -> ModelOutput:
        S = self.cfg.scales
        d = self.cfg.divisor
        if left.shape[-2] % d or left.shape[-1] % d:
            raise ContractError(f"input size {tuple(left.shape[-2:])} not divisible by {d}")
        feats_l, cat_l = self.features(left)
        feats_r, cat_r = self.features(right)

        out = ModelOutput()
        dhat = sigma = None
        for s in range(S):
            level = S - 1 - s
            if s == 0:
                cand = self.level_range(level).candidates(dtype=left.dtype, device=left.device)
            else:
                prev = self.level_range(level + 1)
                lo, hi = self.ranges[s - 1](dhat, sigma, bounds=(prev.d_min, prev.d_max))
                cand = sample_candidates(lo, hi, self.cfg.stage_candidates[s])
            volume = combine_volumes(
                build_concat_volume(cat_l[level], cat_r[level], cand),
                build_gwc_volume(feats_l[level], feats_r[level], cand, self.cfg.groups),
            )
            cost = CostVolume(self.regularizers[s](volume.data), cand)
            dhat = soft_argmax(cost)
            sigma = estimate_uncertainty(cost, dhat)
            out.disparities.append(dhat)
            out.sigmas.append(sigma)
            out.candidates.append(cand)
        return out
