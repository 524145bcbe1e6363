import json

import numpy as np
import pytest
import tifffile
from PIL import Image

from rsstereo.data import (
    DatasetError,
    DomainDescriptor,
    NormalizationStats,
    StereoSample,
    SynthSpec,
    compute_stats,
    crop_sample,
    generate_dataset,
    generate_synthetic,
    iterate_crops,
    load_dataset,
    normalize,
    split_holdout,
    to_batch,
    write_dataset,
)
from rsstereo.data.sample import pad_to
from rsstereo.losses import occlusion_from_fb

from conftest import as_t

DOM = DomainDescriptor("toy", "nowhere", "cam")


def _toy(rng, H=5, W=6, C=2, dom=DOM, gt=True):
    disp = rng.uniform(-3, 3, (H, W)) if gt else None
    return StereoSample(rng.normal(size=(H, W, C)), rng.normal(loc=1.0, size=(H, W, C)), dom, disp)


def test_stats_match_two_pass_oracle(rng):
    samples = [_toy(rng), _toy(rng, H=7, W=3)]
    stats = compute_stats(samples)
    pixels = np.concatenate([a.reshape(-1, 2) for s in samples for a in (s.left, s.right)])
    mean = pixels.sum(0) / len(pixels)
    var = ((pixels - mean) ** 2).sum(0) / len(pixels)
    np.testing.assert_allclose(stats.mean, mean, atol=1e-10)
    np.testing.assert_allclose(stats.variance, var, atol=1e-10)
    assert stats.dataset_id == "toy" and stats.sample_count == 2


def test_stats_serialization(tmp_path, rng):
    stats = compute_stats([_toy(rng)])
    stats.save(tmp_path / "stats.json")
    raw = json.loads((tmp_path / "stats.json").read_text())
    assert set(raw) == {"datasetId", "mean", "variance", "sampleCount"}
    assert NormalizationStats.load(tmp_path / "stats.json") == stats


def test_normalize_guards_dataset_identity(rng):
    train = [_toy(rng) for _ in range(3)]
    other = DomainDescriptor("other")
    test = _toy(rng, dom=other)
    train_stats = compute_stats(train)
    with pytest.raises(ValueError):
        normalize(test, train_stats)
    self_norm = normalize(test, compute_stats([test]))
    forced = normalize(test, train_stats, override=True)
    assert not np.allclose(self_norm.left, forced.left)
    normed = normalize(train[0], train_stats)
    assert np.allclose(normed.disparity, train[0].disparity)  # disparity is never rescaled


def test_crop_matches_manual_slice(rng):
    s = _toy(rng, H=10, W=12)
    c = crop_sample(s, 2, 3, 4)
    assert np.array_equal(c.left, s.left[2:6, 3:7])
    assert np.array_equal(c.disparity, s.disparity[2:6, 3:7])


def test_pad_marks_invalid(rng):
    s = _toy(rng, H=4, W=4)
    s.valid = np.ones((4, 4), bool)
    s.occlusion = np.zeros((4, 4), bool)
    p = pad_to(s, 8)
    assert p.shape == (8, 8)
    assert not p.valid[0].any() and p.valid[2:6, 2:6].all()
    assert np.isnan(p.disparity[0, 0]) and p.occlusion[0, 0]


def test_iterate_crops_reproducible(rng):
    samples = [_toy(rng, H=10, W=10) for _ in range(4)]
    a = [c.left for c in iterate_crops(samples, 6, seed=7)]
    b = [c.left for c in iterate_crops(samples, 6, seed=7)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert len(a) == 4 and a[0].shape == (6, 6, 2)


def test_to_batch_masks_nan(rng):
    s = _toy(rng, H=4, W=4, C=1)
    s.disparity[0, 0] = np.nan
    b = to_batch([s])
    assert b["left"].shape == (1, 1, 4, 4)
    assert float(b["disparity"][0, 0, 0, 0]) == 0.0 and not bool(b["valid"][0, 0, 0, 0])


def test_split_holdout_strips_labels(rng):
    samples = [_toy(rng) for _ in range(20)]
    train, held = split_holdout(samples, 0.1, seed=0)
    assert len(train) == 18 and len(held) == 2
    assert all(not s.has_gt for s in held)
    again = split_holdout(samples, 0.1, seed=0)[1]
    assert all(np.array_equal(a.left, b.left) for a, b in zip(held, again))


def test_mirrored_sample_negates_disparity(rng):
    s = _toy(rng)
    m = s.mirrored()
    assert np.array_equal(m.left, s.left[:, ::-1])
    assert np.array_equal(m.disparity, -s.disparity[:, ::-1])


@pytest.mark.parametrize("target", [0.0, 0.1, 0.2])
def test_generator_occlusion_share(target):
    spec = SynthSpec(occlusion_fraction=target, seed=21)
    shares = [generate_synthetic(spec, i).occlusion.mean() for i in range(6)]
    if target == 0.1:
        assert max(abs(s - target) for s in shares) <= 0.03
    assert abs(np.mean(shares) - target) <= 0.03


def test_generator_fb_check_recovers_occlusion():
    samples = generate_dataset(SynthSpec(seed=8), 6)
    inter = union = 0
    for s in samples:
        occ = occlusion_from_fb(as_t(s.disparity), as_t(s.disparity_right), 1.0)[0, 0].numpy().astype(bool)
        inter += (occ & s.occlusion).sum()
        union += (occ | s.occlusion).sum()
    assert inter / union >= 0.9


def test_generator_properties():
    spec = SynthSpec(seed=2, channels=3)
    a, b = generate_synthetic(spec, 4), generate_synthetic(spec, 4)
    assert np.array_equal(a.left, b.left) and np.array_equal(a.disparity, b.disparity)
    assert a.left.shape == (64, 64, 3)
    lo, hi = spec.disparity_range
    assert a.disparity.min() >= lo - 1e-6 and a.disparity.max() <= hi + 1e-6
    assert (a.disparity < 0).any() or (a.disparity > 0).any()
    # smooth planted field: most horizontal steps are small
    assert np.median(np.abs(np.diff(a.disparity, axis=1))) < 0.5


def test_generator_perturbations_change_right_view_only():
    clean = generate_synthetic(SynthSpec(seed=4), 0)
    bright = generate_synthetic(SynthSpec(seed=4, brightness_delta=0.3), 0)
    assert np.array_equal(clean.left, bright.left)
    assert bright.right.mean() == pytest.approx(clean.right.mean() + 0.3, abs=1e-5)


def test_dataset_roundtrip(tmp_path):
    samples = generate_dataset(SynthSpec(seed=1, height=32, width=32), 3)
    samples[0].disparity[0, 0] = np.nan
    samples[0].valid[0, 0] = False
    write_dataset(tmp_path / "ds", samples, stats=compute_stats(samples), disp_sign=-1)
    ds = load_dataset(tmp_path / "ds", require_stats=True)
    assert len(ds) == 3 and ds.has_gt and ds.domain.dataset_id == "synth"
    back = ds[0]
    assert np.isnan(back.disparity[0, 0]) and not back.valid[0, 0]
    np.testing.assert_allclose(back.disparity[1:], samples[0].disparity[1:], atol=1e-5)
    np.testing.assert_allclose(back.left, samples[0].left, atol=1e-6)
    assert tifffile.imread(tmp_path / "ds" / "disp" / f"{back.name}.tif").dtype == np.float32


def test_dataset_png_and_errors(tmp_path):
    root = tmp_path / "png"
    for sub in ("left", "right"):
        (root / sub).mkdir(parents=True)
        Image.fromarray(np.full((8, 8), 128, np.uint8)).save(root / sub / "a.png")
    with pytest.raises(DatasetError):
        load_dataset(root)  # metadata.json missing
    (root / "metadata.json").write_text(json.dumps({"datasetId": "p", "city": "c", "sensor": "s"}))
    ds = load_dataset(root)
    assert not ds.has_gt and ds[0].left.shape[:2] == (8, 8)
    with pytest.raises(DatasetError):
        load_dataset(root, require_stats=True)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "absent")
