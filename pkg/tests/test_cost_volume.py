import numpy as np
import pytest
import torch

from rsstereo import cost_volume as cv
from rsstereo.photometric import ContractError
from rsstereo.verification import oracles as orc

from conftest import as_t


def _feats(rng, C=4, H=6, W=6):
    return rng.normal(size=(C, H, W)), rng.normal(size=(C, H, W))


def test_disparity_range_candidates_keep_sign():
    r = cv.DisparityRange(-2, 2, 5)
    assert r.candidates().tolist() == [-2, -1, 0, 1, 2]
    assert r.scaled(0.5).candidates().tolist() == [-1, -0.5, 0, 0.5, 1]
    with pytest.raises(ValueError):
        cv.DisparityRange(3, -3, 4)


def test_concat_volume_matches_loop_oracle(rng):
    fl, fr = _feats(rng)
    cands = torch.arange(-2, 3, dtype=torch.float64)
    vol = cv.build_concat_volume(as_t(fl), as_t(fr), cands)
    np.testing.assert_allclose(vol.data[0].numpy(), orc.concat_volume(fl, fr, cands.numpy()), atol=1e-12)
    assert vol.candidates.tolist() == cands.tolist()


def test_concat_volume_out_of_frame_is_zero(rng):
    fl, fr = _feats(rng)
    vol = cv.build_concat_volume(as_t(fl), as_t(fr), torch.tensor([2.0], dtype=torch.float64))
    # left pixel x samples the other view at x - 2; columns 0 and 1 fall outside
    assert torch.all(vol.data[0, 4:, 0, :, :2] == 0)


def test_gwc_self_inner_product(rng):
    f = rng.normal(size=(8, 5, 5))
    vol = cv.build_gwc_volume(as_t(f), as_t(f), torch.zeros(1, dtype=torch.float64), 1)
    np.testing.assert_allclose(vol.data[0, 0, 0].numpy(), (f ** 2).sum(0) / 8, atol=1e-12)


def test_gwc_matches_triple_loop(rng):
    fl, fr = _feats(rng, C=8)
    cands = np.array([-1.5, -0.25, 0.0, 2.0])
    vol = cv.build_gwc_volume(as_t(fl), as_t(fr), torch.as_tensor(cands), 4)
    np.testing.assert_allclose(vol.data[0].numpy(), orc.gwc_volume(fl, fr, cands, 4), atol=1e-12)


def test_gwc_rotation_invariance(rng):
    fl, fr = _feats(rng, C=6)
    q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    cands = torch.arange(-2, 3, dtype=torch.float64)
    base = cv.build_gwc_volume(as_t(fl), as_t(fr), cands, 1).data
    rot = cv.build_gwc_volume(as_t(np.einsum("ij,jhw->ihw", q, fl)), as_t(np.einsum("ij,jhw->ihw", q, fr)),
                              cands, 1).data
    assert torch.allclose(base, rot, atol=1e-10)


def test_gwc_group_divisibility():
    with pytest.raises(ContractError):
        cv.build_gwc_volume(torch.zeros(1, 6, 4, 4), torch.zeros(1, 6, 4, 4), torch.zeros(1), 4)


def test_combine_volumes_slices(rng):
    fl, fr = _feats(rng)
    cands = torch.arange(-2, 3, dtype=torch.float64)
    a = cv.build_concat_volume(as_t(fl), as_t(fr), cands)
    b = cv.build_gwc_volume(as_t(fl), as_t(fr), cands, 2)
    c = cv.combine_volumes(a, b)
    for _ in range(10):
        d, y, x = rng.integers(0, 5), rng.integers(0, 6), rng.integers(0, 6)
        assert torch.equal(c.data[0, :8, d, y, x], a.data[0, :, d, y, x])
        assert torch.equal(c.data[0, 8:, d, y, x], b.data[0, :, d, y, x])
    with pytest.raises(ContractError):
        cv.combine_volumes(a, cv.build_gwc_volume(as_t(fl), as_t(fr), cands[:3], 2))


def _pair(rng, Fc=2):
    coarse = cv.CostVolume(torch.as_tensor(rng.normal(size=(1, Fc, 3, 2, 3))), torch.linspace(-1, 1, 3, dtype=torch.float64))
    fine = cv.CostVolume(torch.as_tensor(rng.normal(size=(1, Fc, 5, 4, 6))), torch.linspace(-2, 2, 5, dtype=torch.float64))
    return coarse, fine


def test_fuse_half_alpha_is_mean(rng):
    coarse, fine = _pair(rng)
    block = cv.ChannelAttentionFusion(2).double()
    out = cv.fuse_adjacent_volumes(coarse, fine, block, alpha=0.5)
    up = cv.upsample_volume(coarse, fine)
    assert torch.allclose(out.data, 0.5 * (up + fine.data), atol=1e-12)
    assert torch.equal(out.candidates, fine.candidates)


def test_fuse_learned_alpha_matches_oracle(rng):
    coarse, fine = _pair(rng)
    block = cv.ChannelAttentionFusion(2).double()
    alpha = torch.tensor([0.2, 0.9], dtype=torch.float64).view(1, 2, 1, 1, 1)
    out = cv.fuse_adjacent_volumes(coarse, fine, block, alpha=alpha)
    ref = orc.fuse(coarse.data[0].numpy(), fine.data[0].numpy(), [0.2, 0.9])
    np.testing.assert_allclose(out.data[0].numpy(), ref, atol=1e-12)
    learned = block(coarse, fine)  # sigmoid weights stay in (0, 1)
    assert learned.data.shape == fine.data.shape


def test_fuse_rejects_mismatched_span(rng):
    coarse, fine = _pair(rng)
    bad = cv.CostVolume(fine.data, torch.linspace(-3, 3, 5, dtype=torch.float64))
    with pytest.raises(ContractError):
        cv.upsample_volume(coarse, bad)
