from __future__ import annotations

import torch

from ..config import ModelConfig
from .cascade import CascadeNet
from .output import ModelOutput
from .pam import PAMNet
from .pyramid import PyramidNet

FAMILIES = {"cascade": CascadeNet, "pyramid": PyramidNet, "pam": PAMNet}


def build_model(cfg: ModelConfig) -> torch.nn.Module:
    return FAMILIES[cfg.family](cfg)


def mirror(t: torch.Tensor) -> torch.Tensor:
    return torch.flip(t, dims=[-1])


def right_view_output(out: ModelOutput) -> ModelOutput:
    """Convert an output computed on the mirrored, swapped pair into right-view fields."""
    return ModelOutput(
        disparities=[-mirror(d) for d in out.disparities],
        sigmas=[mirror(s) for s in out.sigmas],
        candidates=[],
    )


def forward_both(model, left, right):
    """Run the model for both reference views in one batch.

    The right-view disparity is obtained by mirroring and swapping the pair,
    which keeps the warp convention: the right pixel at ``x`` matches the left
    image at ``x - d_right``.
    """
    B = left.shape[0]
    both = model(torch.cat([left, mirror(right)]), torch.cat([right, mirror(left)]))

    def split(items, part):
        return [t[:B] if part == 0 else t[B:] for t in items]

    out_l = ModelOutput(split(both.disparities, 0), split(both.sigmas, 0),
                        [c if c.dim() == 1 else c[:B] for c in both.candidates],
                        split(both.att_rl, 0), split(both.att_lr, 0))
    out_r = right_view_output(ModelOutput(split(both.disparities, 1), split(both.sigmas, 1)))
    return out_l, out_r


@torch.no_grad()
def predict_pair(model, left, right):
    out_l, out_r = forward_both(model, left, right)
    return out_l.final, out_r.final


__all__ = ["CascadeNet", "PyramidNet", "PAMNet", "ModelOutput", "build_model", "forward_both",
           "predict_pair", "mirror"]
