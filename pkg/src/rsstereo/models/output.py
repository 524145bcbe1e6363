from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import torch


@dataclass
class ModelOutput:
    """Per-scale predictions, coarse -> fine. The last disparity is at input resolution."""

    disparities: List[torch.Tensor] = field(default_factory=list)
    sigmas: List[torch.Tensor] = field(default_factory=list)
    candidates: List[torch.Tensor] = field(default_factory=list)
    att_rl: List[torch.Tensor] = field(default_factory=list)  # left pixel -> right column
    att_lr: List[torch.Tensor] = field(default_factory=list)  # right pixel -> left column

    @property
    def final(self) -> torch.Tensor:
        return self.disparities[-1]
