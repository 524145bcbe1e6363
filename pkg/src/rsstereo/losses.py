"""Supervised and unsupervised objectives.

Occlusion maps are ``B x 1 x H x W`` float tensors with 1 marking occluded
pixels. They are always detached. Masked means over an empty support return
zero and set the ``collapsed`` flag of the returned :class:`LossBreakdown`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import torch
import torch.nn.functional as F

from .config import LossWeights
from .photometric import (
    charbonnier,
    image_gradients,
    soft_census_signature,
    soft_hamming_distance,
    ssim_map,
    warp_horizontal,
)


@dataclass
class LossBreakdown:
    total: torch.Tensor
    terms: Dict[str, float] = field(default_factory=dict)
    collapsed: bool = False

    def add(self, name: str, value: torch.Tensor):
        self.terms[name] = self.terms.get(name, 0.0) + float(value.detach())


def masked_mean(values: torch.Tensor, keep: torch.Tensor):
    """Mean of ``values`` over pixels where ``keep`` is 1; returns (mean, empty)."""
    keep = keep.expand_as(values)
    count = keep.sum()
    if count == 0:
        return (values * 0).sum(), True
    return (values * keep).sum() / count, False


def occlusion_from_fb(d_forward: torch.Tensor, d_backward: torch.Tensor, tau: float) -> torch.Tensor:
    """Forward-backward check: occluded where ``|dF + W(dB, dF)|^2 >= tau`` or the sample left the frame."""
    with torch.no_grad():
        back, oob = warp_horizontal(d_backward, d_forward)
        residual = (d_forward + back) ** 2
        occluded = (residual >= tau) | oob
    return occluded.to(d_forward.dtype)


def _photometric_map(image, recon, keep, alpha, window):
    a = image * keep
    b = recon * keep
    ssim_term = (1 - ssim_map(a, b, window)) / 2
    l1 = (a - b).abs().mean(dim=1, keepdim=True)
    return alpha * ssim_term + (1 - alpha) * l1


def photometric_loss(image, recon, occlusion, alpha: float = 0.85, window: int = 3,
                     return_empty: bool = False):
    """SSIM + L1 reconstruction error averaged over non-occluded pixels."""
    keep = 1 - occlusion
    value, empty = masked_mean(_photometric_map(image, recon, keep, alpha, window), keep)
    return (value, empty) if return_empty else value


def census_loss(image, recon, occlusion, patch_size: int = 7, c: float = 1e-2,
                epsilon: float = 1e-3, alpha: float = 0.45, return_empty: bool = False):
    """Charbonnier-penalised soft Hamming distance of census signatures.

    Both images are masked before the transform so that occluded neighbours
    cannot leak into the signatures of visible pixels.
    """
    keep = 1 - occlusion
    sa = soft_census_signature(image * keep, patch_size, c)
    sb = soft_census_signature(recon * keep, patch_size, c)
    dist = charbonnier(soft_hamming_distance(sa, sb), epsilon, alpha)
    value, empty = masked_mean(dist, keep)
    return (value, empty) if return_empty else value


def smoothness_loss(disparity, image) -> torch.Tensor:
    """Edge-aware first-order smoothness ``|d_x| exp(-|I_x|) + |d_y| exp(-|I_y|)``."""
    gd = image_gradients(disparity)
    gi = image_gradients(image)
    wx = torch.exp(-gi.gx.abs().mean(dim=1, keepdim=True))
    wy = torch.exp(-gi.gy.abs().mean(dim=1, keepdim=True))
    return (gd.gx.abs() * wx + gd.gy.abs() * wy).mean()


def smooth_l1(x: torch.Tensor) -> torch.Tensor:
    a = x.abs()
    return torch.where(a < 1, 0.5 * x * x, a - 0.5)


def downsample_disparity(gt: torch.Tensor, valid: torch.Tensor, size):
    """Block-average a full-resolution field (ignoring invalid pixels) and rescale its values."""
    H, W = gt.shape[-2:]
    h, w = size
    if (h, w) == (H, W):
        return gt, valid
    if H % h or W % w:
        raise ValueError(f"cannot block-average {H}x{W} onto {h}x{w}")
    fy, fx = H // h, W // w
    v = valid.to(gt.dtype)
    g = torch.where(valid, gt, torch.zeros_like(gt))
    num = F.avg_pool2d(g * v, (fy, fx))
    den = F.avg_pool2d(v, (fy, fx))
    out = torch.where(den > 0, num / den.clamp(min=1e-12), torch.zeros_like(num)) * (w / W)
    return out, den > 0


def supervised_loss(disparities: Sequence[torch.Tensor], gt: torch.Tensor, valid: torch.Tensor,
                    scale_weights: Sequence[float]) -> LossBreakdown:
    """Weighted sum over scales of the smooth-L1 error averaged over valid pixels."""
    if len(scale_weights) != len(disparities):
        raise ValueError(f"{len(scale_weights)} weights for {len(disparities)} scales")
    valid = valid.bool() & torch.isfinite(gt)
    total = disparities[-1].sum() * 0
    out = LossBreakdown(total)
    for j, (d, w) in enumerate(zip(disparities, scale_weights)):
        g, v = downsample_disparity(gt, valid, d.shape[-2:])
        value, empty = masked_mean(smooth_l1(d - g), v.to(d.dtype))
        out.collapsed |= empty
        out.add(f"sup_{j}", value)
        total = total + w * value
    out.total = total
    return out


def _pool_to(image, size):
    H = image.shape[-2]
    f = H // size[0]
    return image if f == 1 else F.avg_pool2d(image, f)


def unsupervised_scale_loss(left, right, d_left, d_right, weights: LossWeights, tau: float,
                            prefix: str = "") -> LossBreakdown:
    """Photometric + census + smoothness loss at one scale, averaged over both reference views."""
    size = d_left.shape[-2:]
    left = _pool_to(left, size)
    right = _pool_to(right, size)
    total = d_left.sum() * 0
    out = LossBreakdown(total)
    views = ((left, right, d_left, d_right), (right, left, d_right, d_left))
    for image, other, d, d_other in views:
        occ = occlusion_from_fb(d, d_other, tau)
        recon, _ = warp_horizontal(other, d)
        lp, e1 = photometric_loss(image, recon, occ, weights.alpha, weights.ssim_window, return_empty=True)
        lc, e2 = census_loss(image, recon, occ, weights.census_patch, weights.soft_census_c,
                             weights.charbonnier_eps, weights.charbonnier_alpha, return_empty=True)
        ls = smoothness_loss(d, image)
        out.collapsed |= e1 or e2
        out.add(prefix + "photometric", lp / 2)
        out.add(prefix + "census", lc / 2)
        out.add(prefix + "smoothness", ls / 2)
        out.add(prefix + "occluded", occ.mean() / 2)
        total = total + 0.5 * (weights.lambda_p * lp + weights.lambda_census * lc + weights.lambda_sm * ls)
    out.total = total
    return out


def unsupervised_loss(left, right, d_lefts: Sequence[torch.Tensor], d_rights: Sequence[torch.Tensor],
                      weights: LossWeights, scale_weights: Sequence[float]) -> LossBreakdown:
    """Scale-weighted sum of :func:`unsupervised_scale_loss` (outputs ordered coarse -> fine)."""
    n = len(d_lefts)
    total = d_lefts[-1].sum() * 0
    out = LossBreakdown(total)
    for j, (dl, dr, w) in enumerate(zip(d_lefts, d_rights, scale_weights)):
        part = unsupervised_scale_loss(left, right, dl, dr, weights, weights.threshold_for(n - 1 - j),
                                       prefix=f"s{j}_")
        out.terms.update(part.terms)
        out.collapsed |= part.collapsed
        total = total + w * part.total
    out.total = total
    return out


# ---- attention losses ---------------------------------------------------------
# att_rl[b, i, j, k]: left pixel j matches right column k (reconstructs the left view)
# att_lr[b, i, j, k]: right pixel j matches left column k (reconstructs the right view)

def pam_occlusion(att_other_to_ref: torch.Tensor, threshold: float = 0.1) -> torch.Tensor:
    """A reference pixel is occluded when the other view sends it at most ``threshold`` mass."""
    with torch.no_grad():
        received = att_other_to_ref.sum(dim=-2)  # B x H x W
        return (received <= threshold).to(att_other_to_ref.dtype).unsqueeze(1)


def attention_reconstruct(att: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
    """Row-wise matrix product: ``out[b, c, i, j] = sum_k att[b, i, j, k] source[b, c, i, k]``."""
    src = source.permute(0, 2, 3, 1)  # B x H x W x C
    return torch.matmul(att, src).permute(0, 3, 1, 2)


def pam_photometric(left, right, att_rl, att_lr, occ_left, occ_right) -> torch.Tensor:
    size = att_rl.shape[1:3]
    left = _pool_to(left, size)
    right = _pool_to(right, size)
    total = att_rl.sum() * 0
    for image, other, att, occ in ((left, right, att_rl, occ_left), (right, left, att_lr, occ_right)):
        err = (image - attention_reconstruct(att, other)).abs().mean(dim=1, keepdim=True)
        total = total + masked_mean(err, 1 - occ)[0]
    return total


def pam_smoothness(att_rl, att_lr) -> torch.Tensor:
    total = att_rl.sum() * 0
    for m in (att_rl, att_lr):
        vertical = (m[:, :-1] - m[:, 1:]).abs().mean()
        diagonal = (m[:, :, :-1, :-1] - m[:, :, 1:, 1:]).abs().mean()
        total = total + vertical + diagonal
    return total


def pam_cycle(att_rl, att_lr, occ_left, occ_right) -> torch.Tensor:
    """Deviation of the round-trip attention maps from the identity, per non-occluded pixel."""
    W = att_rl.shape[-1]
    eye = torch.eye(W, dtype=att_rl.dtype, device=att_rl.device)
    total = att_rl.sum() * 0
    for first, second, occ in ((att_rl, att_lr, occ_left), (att_lr, att_rl, occ_right)):
        cycle = torch.matmul(first, second)
        err = (cycle - eye).abs().mean(dim=-1).unsqueeze(1)
        total = total + masked_mean(err, 1 - occ)[0]
    return total


def pam_total(left, right, out, weights: LossWeights) -> LossBreakdown:
    """Full attention-family objective on the output of :class:`~rsstereo.models.PAMNet`."""
    thr = weights.pam_occlusion_threshold
    occ_left = pam_occlusion(out.att_lr[-1], thr)
    occ_full = F.interpolate(occ_left, size=left.shape[-2:], mode="nearest")
    d = out.final
    recon, oob = warp_horizontal(right, d)
    occ_full = torch.maximum(occ_full, oob.to(occ_full.dtype))
    lp, empty = photometric_loss(left, recon, occ_full, weights.alpha, weights.ssim_window, return_empty=True)
    ls = smoothness_loss(d, left)
    total = lp + weights.lambda_sm * ls
    res = LossBreakdown(total, collapsed=empty)
    res.add("photometric", lp)
    res.add("smoothness", ls)
    if len(weights.pam_scale_weights) != len(out.att_rl):
        raise ValueError(f"{len(weights.pam_scale_weights)} weights for {len(out.att_rl)} attention scales")
    for s, (w, a_rl, a_lr) in enumerate(zip(weights.pam_scale_weights, out.att_rl, out.att_lr)):
        o_l = pam_occlusion(a_lr, thr)
        o_r = pam_occlusion(a_rl, thr)
        p = pam_photometric(left, right, a_rl, a_lr, o_l, o_r)
        sm = pam_smoothness(a_rl, a_lr)
        cy = pam_cycle(a_rl, a_lr, o_l, o_r)
        res.add(f"pam{s}_p", p)
        res.add(f"pam{s}_s", sm)
        res.add(f"pam{s}_c", cy)
        total = total + weights.lambda_pam * w * (p + weights.lambda_pam_s * sm + weights.lambda_pam_c * cy)
    res.total = total
    return res
