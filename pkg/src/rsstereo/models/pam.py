"""Parallax-attention matcher: hourglass features, cascaded PAM blocks, attention readout."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..config import ModelConfig
from ..disparity import pam_disparity, upsample_disparity
from ..photometric import ContractError
from .blocks import ResBlock, ResidualRefinement, convbn
from .output import ModelOutput


class Hourglass(nn.Module):
    """Encoder down to 1/16 and decoder back to 1/4; returns features at 1/16, 1/8, 1/4."""

    def __init__(self, in_ch, widths):
        super().__init__()
        c4, c8, c16 = widths
        self.down2 = convbn(in_ch, c4, stride=2)
        self.down4 = nn.Sequential(convbn(c4, c4, stride=2), ResBlock(c4))
        self.down8 = nn.Sequential(convbn(c4, c8, stride=2), ResBlock(c8))
        self.down16 = nn.Sequential(convbn(c8, c16, stride=2), ResBlock(c16))
        self.up8 = convbn(c16 + c8, c8)
        self.up4 = convbn(c8 + c4, c4)

    def forward(self, x):
        e4 = self.down4(self.down2(x))
        e8 = self.down8(e4)
        e16 = self.down16(e8)
        d8 = self.up8(torch.cat([F.interpolate(e16, scale_factor=2, mode="bilinear", align_corners=False), e8], 1))
        d4 = self.up4(torch.cat([F.interpolate(d8, scale_factor=2, mode="bilinear", align_corners=False), e4], 1))
        return [e16, d8, d4]


class PAMBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.head = nn.Sequential(convbn(channels, channels), nn.Conv2d(channels, channels, 3, 1, 1))
        self.query = nn.Conv2d(channels, channels, 1)
        self.key = nn.Conv2d(channels, channels, 1)

    def _cost(self, fa, fb):
        # cost[b, i, j, k] between pixel j of view a and column k of view b on row i
        q = self.query(fa).permute(0, 2, 3, 1)
        k = self.key(fb).permute(0, 2, 1, 3)
        return torch.matmul(q, k) / fa.shape[1]

    def forward(self, fl, fr, cost_rl, cost_lr):
        fl = fl + self.head(fl)
        fr = fr + self.head(fr)
        return fl, fr, cost_rl + self._cost(fl, fr), cost_lr + self._cost(fr, fl)


def upsample_cost(cost):
    """Double the row, column and matching axes of a ``B x H x W x W`` cost."""
    return F.interpolate(cost.unsqueeze(1), scale_factor=2, mode="trilinear", align_corners=False).squeeze(1)


class PAMNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.family != "pam":
            raise ContractError(f"PAMNet built from a {cfg.family} config")
        self.cfg = cfg
        c4, c8, c16 = cfg.channel_widths[:3]
        self.features = Hourglass(cfg.in_channels, (c4, c8, c16))
        self.stages = nn.ModuleList(
            nn.ModuleList(PAMBlock(c) for _ in range(cfg.pam_blocks)) for c in (c16, c8, c4)
        )
        self.refine = ResidualRefinement(c4 + 1) if cfg.refinement else None

    def forward(self, left, right) -> ModelOutput:
        if left.shape[-2] % 16 or left.shape[-1] % 16:
            raise ContractError(f"input size {tuple(left.shape[-2:])} not divisible by 16")
        fls = self.features(left)
        frs = self.features(right)
        out = ModelOutput()
        cost_rl = cost_lr = None
        for s, blocks in enumerate(self.stages):
            fl, fr = fls[s], frs[s]
            B, _, H, W = fl.shape
            if cost_rl is None:
                cost_rl = fl.new_zeros(B, H, W, W)
                cost_lr = fl.new_zeros(B, H, W, W)
            else:
                cost_rl, cost_lr = upsample_cost(cost_rl), upsample_cost(cost_lr)
            for block in blocks:
                fl, fr, cost_rl, cost_lr = block(fl, fr, cost_rl, cost_lr)
            att_rl = F.softmax(cost_rl, dim=-1)
            att_lr = F.softmax(cost_lr, dim=-1)
            out.att_rl.append(att_rl)
            out.att_lr.append(att_lr)
            out.disparities.append(pam_disparity(att_rl, check=False))
        d4 = out.disparities[-1]
        if self.refine is not None:
            d4 = self.refine(fls[-1], d4)
        out.disparities.append(upsample_disparity(d4, left.shape[-2:]))
        return out
