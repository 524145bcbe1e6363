import pytest
import torch

from rsstereo.config import TrainConfig, desk_model
from rsstereo.data import SynthSpec, generate_dataset, to_batch
from rsstereo.models import build_model, forward_both, mirror, predict_pair
from rsstereo.photometric import ContractError
from rsstereo.training import compute_loss

FAMILIES = ["cascade", "pyramid", "pam"]


def _inputs(seed=0, H=32, W=64, B=2):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(B, 1, H, W, generator=g), torch.rand(B, 1, H, W, generator=g)


def _model(family, seed=0):
    torch.manual_seed(seed)
    return build_model(desk_model(family))


@pytest.mark.parametrize("family", FAMILIES)
def test_output_shapes_and_finest_last(family):
    model = _model(family)
    left, right = _inputs()
    out = model(left, right)
    assert out.final.shape == (2, 1, 32, 64)
    sizes = [d.shape[-1] for d in out.disparities]
    assert sizes == sorted(sizes)
    if family == "pam":
        assert len(out.att_rl) == len(out.att_lr) == 3
        for a in out.att_rl:
            assert torch.allclose(a.sum(-1), torch.ones_like(a[..., 0]), atol=1e-5)
    if family == "cascade":
        assert len(out.sigmas) == len(out.candidates) == 3


@pytest.mark.parametrize("family", FAMILIES)
def test_deterministic_forward(family):
    left, right = _inputs()
    a = _model(family, seed=3)(left, right).final
    b = _model(family, seed=3)(left, right).final
    assert torch.equal(a, b)


@pytest.mark.parametrize("family", FAMILIES)
def test_parameter_shapes_stable(family):
    a = [p.shape for p in _model(family, 0).parameters()]
    b = [p.shape for p in _model(family, 1).parameters()]
    assert a == b


@pytest.mark.parametrize("family", FAMILIES)
def test_one_step_descends(family):
    samples = generate_dataset(SynthSpec(height=32, width=64, seed=11), 2)
    batch = to_batch(samples)
    model = _model(family)
    manner = "unsupervised" if family == "pam" else "supervised"
    cfg = TrainConfig(manner=manner, crop_size=64)
    opt = torch.optim.Adam(model.parameters(), lr=1e-4)
    before = compute_loss(model, batch, cfg).total
    opt.zero_grad()
    before.backward()
    opt.step()
    after = compute_loss(model, batch, cfg).total
    assert float(after.detach()) < float(before.detach())


def test_pyramid_gradient_reaches_both_views():
    model = _model("pyramid")
    left, right = _inputs()
    left.requires_grad_(True)
    right.requires_grad_(True)
    loss = (model(left, right).final * torch.randn(2, 1, 32, 64)).sum()
    loss.backward()
    assert left.grad.abs().sum() > 0 and right.grad.abs().sum() > 0
    assert all(p.grad is not None for p in model.features.parameters())


def test_pam_identical_views_are_symmetric():
    model = _model("pam")
    x, _ = _inputs()
    out = model(x, x)
    for rl, lr in zip(out.att_rl, out.att_lr):
        assert float((rl - lr).abs().max()) < 1e-6


def test_forward_both_matches_mirrored_call():
    model = _model("cascade").eval()
    left, right = _inputs()
    out_l, out_r = forward_both(model, left, right)
    with torch.no_grad():
        direct = model(mirror(right), mirror(left)).final
    assert torch.allclose(out_r.final, -mirror(direct), atol=1e-5)
    dl, dr = predict_pair(model, left, right)
    assert torch.allclose(dl, out_l.final.detach(), atol=1e-5)


def test_input_size_contract():
    with pytest.raises(ContractError):
        _model("pam")(*_inputs(H=24, W=40))
