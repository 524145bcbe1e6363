from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def convbn(in_ch, out_ch, kernel=3, stride=1, dilation=1):
    pad = dilation * (kernel // 2)
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, kernel, stride, pad, dilation=dilation),
        nn.LeakyReLU(0.1, inplace=True),
    )


def conv3d(in_ch, out_ch, kernel=3, stride=1):
    return nn.Sequential(
        nn.Conv3d(in_ch, out_ch, kernel, stride, kernel // 2),
        nn.LeakyReLU(0.1, inplace=True),
    )


class ResBlock(nn.Module):
    def __init__(self, channels, dilation=1):
        super().__init__()
        self.conv1 = convbn(channels, channels, dilation=dilation)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, dilation, dilation=dilation)

    def forward(self, x):
        return F.leaky_relu(x + self.conv2(self.conv1(x)), 0.1)


class CostRegularization(nn.Module):
    """Stack of ``depth`` 3D convolutions mapping a feature volume to a scalar cost."""

    def __init__(self, in_ch, width, depth=4):
        super().__init__()
        layers = [conv3d(in_ch, width)]
        for _ in range(depth - 2):
            layers.append(conv3d(width, width))
        self.body = nn.Sequential(*layers)
        self.head = nn.Conv3d(width, 1, 3, 1, 1)

    def forward(self, volume):
        return self.head(self.body(volume))[:, 0]


class ResidualRefinement(nn.Module):
    """Predicts a disparity residual from guidance maps; the last layer starts at zero."""

    def __init__(self, in_ch, width=16, dilations=(1, 2, 4, 1)):
        super().__init__()
        layers = [convbn(in_ch, width)]
        for d in dilations:
            layers.append(convbn(width, width, dilation=d))
        self.body = nn.Sequential(*layers)
        self.out = nn.Conv2d(width, 1, 3, 1, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, guidance, disparity):
        return disparity + self.out(self.body(torch.cat([guidance, disparity], dim=1)))


def downsample_images(image, factor):
    if factor == 1:
        return image
    return F.avg_pool2d(image, factor)
