"""Differentiable image-space primitives shared by the losses and the CE criterion.

Tensors follow the NCHW layout: images are ``B x C x H x W``, disparity fields
``B x 1 x H x W`` (or ``B x K x H x W`` when a stack of candidate shifts is
sampled at once). Disparity is signed and in pixels; a left pixel at column
``x`` samples the other view at column ``x - d``.
"""
from __future__ import annotations

from typing import NamedTuple

import torch
import torch.nn.functional as F


class ContractError(ValueError):
    """Raised when an operation receives inputs violating its contract."""


class GradientPair(NamedTuple):
    gx: torch.Tensor
    gy: torch.Tensor
    border: torch.Tensor  # B x 1 x H x W, True where a one-sided difference was used


class CensusCodes(NamedTuple):
    bits: torch.Tensor  # B x K x H x W bool, K = patch_size**2 - 1
    valid: torch.Tensor  # B x 1 x H x W bool, False within patch_size // 2 of the border

    @property
    def code_length(self) -> int:
        return self.bits.shape[1]


def sample_columns(source: torch.Tensor, x: torch.Tensor):
    """Linearly interpolate ``source`` along the width axis at columns ``x``.

    ``source`` is ``B x C x H x W`` and ``x`` is ``B x K x H x W``. Returns the
    samples as ``B x C x K x H x W`` together with a ``B x K x H x W`` boolean
    mask that is True where ``x`` fell outside ``[0, W - 1]``. Out-of-bounds
    samples are zero.
    """
    B, C, H, W = source.shape
    K = x.shape[1]
    x0 = torch.floor(x)
    frac = (x - x0).unsqueeze(1)
    i0 = x0.long()
    i1 = i0 + 1
    in0 = ((i0 >= 0) & (i0 <= W - 1)).unsqueeze(1)
    in1 = ((i1 >= 0) & (i1 <= W - 1)).unsqueeze(1)
    oob = (x < 0) | (x > W - 1)

    src = source.unsqueeze(2).expand(B, C, K, H, W)
    idx0 = i0.clamp(0, W - 1).unsqueeze(1).expand(B, C, K, H, W)
    idx1 = i1.clamp(0, W - 1).unsqueeze(1).expand(B, C, K, H, W)
    v0 = torch.gather(src, 4, idx0)
    v1 = torch.gather(src, 4, idx1)
    zero = source.new_zeros(())
    v0 = torch.where(in0, v0, zero)
    v1 = torch.where(in1, v1, zero)
    out = v0 * (1 - frac) + v1 * frac
    out = torch.where(oob.unsqueeze(1), zero, out)
    return out, oob


def _columns(ref: torch.Tensor) -> torch.Tensor:
    W = ref.shape[-1]
    return torch.arange(W, dtype=ref.dtype, device=ref.device).view(1, 1, 1, W)


def warp_horizontal(source: torch.Tensor, disparity: torch.Tensor):
    """Reconstruct the reference view by sampling ``source`` at ``x - d``.

    Returns ``(warped, oob)`` where ``oob`` is a ``B x 1 x H x W`` bool flag
    marking samples that fell outside the source frame (those are zero-filled).
    """
    if source.dim() != 4 or disparity.dim() != 4 or disparity.shape[1] != 1:
        raise ContractError("expected source B x C x H x W and disparity B x 1 x H x W")
    if source.shape[0] != disparity.shape[0] or source.shape[-2:] != disparity.shape[-2:]:
        raise ContractError(
            f"shape mismatch: source {tuple(source.shape)} vs disparity {tuple(disparity.shape)}"
        )
    x = _columns(disparity) - disparity
    out, oob = sample_columns(source, x)
    return out[:, :, 0], oob


def _check_window(a: torch.Tensor, window: int):
    if window % 2 == 0 or window < 1:
        raise ContractError(f"SSIM window must be a positive odd integer, got {window}")
    if window > min(a.shape[-2:]):
        raise ContractError(f"SSIM window {window} larger than image {tuple(a.shape[-2:])}")


def ssim_map(a: torch.Tensor, b: torch.Tensor, window: int = 3,
             c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> torch.Tensor:
    """Per-pixel SSIM averaged over channels, ``B x 1 x H x W``.

    Local statistics are box means over ``window x window`` neighbourhoods with
    reflection padding at the border.
    """
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    _check_window(a, window)
    pad = window // 2

    def pool(t):
        if pad:
            t = F.pad(t, (pad, pad, pad, pad), mode="reflect")
        return F.avg_pool2d(t, window, stride=1)

    mu_a = pool(a)
    mu_b = pool(b)
    var_a = pool(a * a) - mu_a ** 2
    var_b = pool(b * b) - mu_b ** 2
    cov = pool(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return (num / den).mean(dim=1, keepdim=True)


def to_luminance(image: torch.Tensor) -> torch.Tensor:
    if image.shape[1] == 1:
        return image
    if image.shape[1] == 3:
        w = image.new_tensor([0.299, 0.587, 0.114]).view(1, 3, 1, 1)
        return (image * w).sum(dim=1, keepdim=True)
    return image.mean(dim=1, keepdim=True)


def _neighbour_differences(image: torch.Tensor, patch_size: int) -> torch.Tensor:
    # B x K x H x W of (neighbour - centre), neighbours in row-major order, centre excluded
    if patch_size % 2 == 0 or patch_size < 3:
        raise ContractError(f"census patch size must be odd and >= 3, got {patch_size}")
    gray = to_luminance(image)
    B, _, H, W = gray.shape
    r = patch_size // 2
    padded = F.pad(gray, (r, r, r, r), mode="replicate")
    patches = F.unfold(padded, patch_size).view(B, patch_size * patch_size, H, W)
    centre = patch_size * patch_size // 2
    keep = [k for k in range(patch_size * patch_size) if k != centre]
    return patches[:, keep] - gray


def _border_valid(image: torch.Tensor, r: int) -> torch.Tensor:
    B, _, H, W = image.shape
    valid = torch.zeros(B, 1, H, W, dtype=torch.bool, device=image.device)
    valid[..., r:H - r, r:W - r] = True
    return valid


def census_transform(image: torch.Tensor, patch_size: int = 7) -> CensusCodes:
    """Hard census codes: bit k is set iff neighbour k is darker than the centre."""
    diff = _neighbour_differences(image, patch_size)
    return CensusCodes(diff < 0, _border_valid(image, patch_size // 2))


def soft_census_signature(image: torch.Tensor, patch_size: int = 7, c: float = 1e-2) -> torch.Tensor:
    """Differentiable census surrogate with entries ``diff / sqrt(diff**2 + c)``.

    Negative entries correspond to set bits of :func:`census_transform`.
    """
    if c <= 0:
        raise ContractError("soft census constant must be positive")
    diff = _neighbour_differences(image, patch_size)
    return diff / torch.sqrt(diff * diff + c)


def hamming_distance(a: CensusCodes, b: CensusCodes) -> torch.Tensor:
    if a.code_length != b.code_length:
        raise ContractError(f"code length mismatch: {a.code_length} vs {b.code_length}")
    if a.bits.shape != b.bits.shape:
        raise ContractError("census maps differ in shape")
    return (a.bits ^ b.bits).sum(dim=1, keepdim=True)


def soft_hamming_distance(sa: torch.Tensor, sb: torch.Tensor) -> torch.Tensor:
    """Half the L1 distance between soft signatures; equals Hamming on saturated codes."""
    if sa.shape != sb.shape:
        raise ContractError("soft census signatures differ in shape")
    return 0.5 * (sa - sb).abs().sum(dim=1, keepdim=True)


def charbonnier(x: torch.Tensor, epsilon: float = 1e-3, alpha: float = 0.45) -> torch.Tensor:
    if epsilon <= 0 or alpha <= 0:
        raise ContractError(f"charbonnier needs epsilon > 0 and alpha > 0, got {epsilon}, {alpha}")
    return (x * x + epsilon * epsilon) ** alpha


def image_gradients(image: torch.Tensor) -> GradientPair:
    """Central differences ``I(x+1) - I(x-1)``; borders use a doubled one-sided difference."""
    B, C, H, W = image.shape
    if H < 3 or W < 3:
        raise ContractError("image_gradients needs H, W >= 3")
    gx = torch.cat([
        2 * (image[..., :, 1:2] - image[..., :, 0:1]),
        image[..., :, 2:] - image[..., :, :-2],
        2 * (image[..., :, -1:] - image[..., :, -2:-1]),
    ], dim=3)
    gy = torch.cat([
        2 * (image[..., 1:2, :] - image[..., 0:1, :]),
        image[..., 2:, :] - image[..., :-2, :],
        2 * (image[..., -1:, :] - image[..., -2:-1, :]),
    ], dim=2)
    border = ~_border_valid(image, 1)
    return GradientPair(gx, gy, border)
