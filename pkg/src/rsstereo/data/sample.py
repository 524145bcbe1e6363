"""Stereo samples, per-dataset normalization statistics and random crops.

Arrays here are numpy and channel-last: images ``H x W x C`` float32,
disparities ``H x W`` float32 with NaN marking invalid pixels.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np
import torch

NORM_EPS = 1e-6


@dataclass(frozen=True)
class DomainDescriptor:
    dataset_id: str
    city: str = "unknown"
    sensor: str = "unknown"

    @property
    def key(self):
        """Two samples belong to the same domain iff their (city, sensor) keys match."""
        return (self.city, self.sensor)

    def same_domain(self, other: "DomainDescriptor") -> bool:
        return self.key == other.key


@dataclass
class StereoSample:
    left: np.ndarray
    right: np.ndarray
    domain: DomainDescriptor
    disparity: Optional[np.ndarray] = None  # left-referenced
    valid: Optional[np.ndarray] = None
    occlusion: Optional[np.ndarray] = None  # left pixels not visible in the right view
    disparity_right: Optional[np.ndarray] = None
    occlusion_right: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        if self.left.ndim == 2:
            self.left = self.left[..., None]
        if self.right.ndim == 2:
            self.right = self.right[..., None]
        if self.left.shape != self.right.shape:
            raise ValueError(f"left {self.left.shape} and right {self.right.shape} differ")
        hw = self.left.shape[:2]
        for name in ("disparity", "valid", "occlusion", "disparity_right", "occlusion_right"):
            a = getattr(self, name)
            if a is not None and a.shape != hw:
                raise ValueError(f"{name} shape {a.shape} does not match image {hw}")
        if self.disparity is not None and self.valid is None:
            self.valid = np.isfinite(self.disparity)

    @property
    def shape(self):
        return self.left.shape[:2]

    @property
    def has_gt(self) -> bool:
        return self.disparity is not None

    def without_gt(self) -> "StereoSample":
        return StereoSample(self.left, self.right, self.domain, name=self.name)

    def mirrored(self) -> "StereoSample":
        """Horizontally mirror both views; disparities are mirrored and negated."""
        def flip(a):
            return None if a is None else np.ascontiguousarray(a[:, ::-1])

        def neg(a):
            return None if a is None else -flip(a)

        return StereoSample(flip(self.left), flip(self.right), self.domain, neg(self.disparity),
                            flip(self.valid), flip(self.occlusion), neg(self.disparity_right),
                            flip(self.occlusion_right), self.name)


@dataclass(frozen=True)
class NormalizationStats:
    dataset_id: str
    mean: tuple
    variance: tuple
    sample_count: int

    def to_dict(self):
        return {"datasetId": self.dataset_id, "mean": list(self.mean), "variance": list(self.variance),
                "sampleCount": self.sample_count}

    @classmethod
    def from_dict(cls, d):
        return cls(d["datasetId"], tuple(float(v) for v in d["mean"]),
                   tuple(float(v) for v in d["variance"]), int(d["sampleCount"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def compute_stats(samples: Iterable[StereoSample], dataset_id: Optional[str] = None) -> NormalizationStats:
    """Per-channel mean and population variance over both views, merged image by image."""
    count = 0
    mean = m2 = None
    n_samples = 0
    for s in samples:
        n_samples += 1
        dataset_id = dataset_id or s.domain.dataset_id
        for img in (s.left, s.right):
            x = img.reshape(-1, img.shape[-1]).astype(np.float64)
            n_b = x.shape[0]
            mean_b = x.mean(axis=0)
            m2_b = ((x - mean_b) ** 2).sum(axis=0)
            if mean is None:
                count, mean, m2 = n_b, mean_b, m2_b
                continue
            delta = mean_b - mean
            total = count + n_b
            mean = mean + delta * n_b / total
            m2 = m2 + m2_b + delta ** 2 * count * n_b / total
            count = total
    if n_samples == 0:
        raise ValueError("cannot compute normalization statistics of an empty dataset")
    var = np.maximum(m2 / count, 0.0)
    return NormalizationStats(dataset_id, tuple(mean.tolist()), tuple(var.tolist()), n_samples)


def _check_stats(sample: StereoSample, stats: Optional[NormalizationStats], override: bool):
    if stats is None:
        raise ValueError("normalization statistics are required")
    if not override and stats.dataset_id != sample.domain.dataset_id:
        raise ValueError(
            f"stats belong to {stats.dataset_id!r} but the sample comes from {sample.domain.dataset_id!r}"
        )
    if len(stats.mean) != sample.left.shape[-1]:
        raise ValueError(f"stats have {len(stats.mean)} channels, sample has {sample.left.shape[-1]}")


def normalize(sample: StereoSample, stats: NormalizationStats, override: bool = False) -> StereoSample:
    _check_stats(sample, stats, override)
    mean = np.asarray(stats.mean)
    scale = np.sqrt(np.asarray(stats.variance) + NORM_EPS)
    f = lambda a: ((a - mean) / scale).astype(np.float32)
    return replace(sample, left=f(sample.left), right=f(sample.right))


def denormalize(sample: StereoSample, stats: NormalizationStats, override: bool = False) -> StereoSample:
    _check_stats(sample, stats, override)
    mean = np.asarray(stats.mean)
    scale = np.sqrt(np.asarray(stats.variance) + NORM_EPS)
    f = lambda a: (a * scale + mean).astype(np.float32)
    return replace(sample, left=f(sample.left), right=f(sample.right))


def crop_sample(sample: StereoSample, top: int, left: int, size: int) -> StereoSample:
    """Slice a ``size x size`` window; images smaller than ``size`` are centre-padded first."""
    sample = pad_to(sample, size)
    sl = (slice(top, top + size), slice(left, left + size))

    def cut(a):
        return None if a is None else a[sl]

    return StereoSample(sample.left[sl], sample.right[sl], sample.domain, cut(sample.disparity),
                        cut(sample.valid), cut(sample.occlusion), cut(sample.disparity_right),
                        cut(sample.occlusion_right), sample.name)


def pad_to(sample: StereoSample, size: int) -> StereoSample:
    H, W = sample.shape
    ph, pw = max(0, size - H), max(0, size - W)
    if ph == 0 and pw == 0:
        return sample
    pads = ((ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2))

    def pad(a, value):
        if a is None:
            return None
        extra = ((0, 0),) if a.ndim == 3 else ()
        return np.pad(a, pads + extra, constant_values=value)

    valid = sample.valid if sample.valid is not None else np.ones(sample.shape, bool)
    disp = sample.disparity
    if disp is None:
        disp_p = None
    else:
        disp_p = pad(disp, np.nan)
    return StereoSample(pad(sample.left, 0), pad(sample.right, 0), sample.domain, disp_p,
                        pad(valid, False), pad(sample.occlusion, True), pad(sample.disparity_right, np.nan),
                        pad(sample.occlusion_right, True), sample.name)


def iterate_crops(samples: Sequence[StereoSample], crop_size: int = 512, seed: int = 0,
                  shuffle: bool = True) -> Iterator[StereoSample]:
    """One pass of reproducible random crops; the same window is applied to every channel."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples)) if shuffle else np.arange(len(samples))
    for i in order:
        s = pad_to(samples[int(i)], crop_size)
        H, W = s.shape
        top = int(rng.integers(0, H - crop_size + 1))
        left = int(rng.integers(0, W - crop_size + 1))
        yield crop_sample(s, top, left, crop_size)


def to_batch(samples: Sequence[StereoSample], dtype=torch.float32) -> dict:
    """Stack samples into NCHW tensors. ``disparity`` has invalid pixels set to 0."""
    def img(a):
        return torch.from_numpy(np.stack([np.ascontiguousarray(x.transpose(2, 0, 1)) for x in a])).to(dtype)

    batch = {"left": img([s.left for s in samples]), "right": img([s.right for s in samples])}
    if all(s.has_gt for s in samples):
        d = np.stack([s.disparity for s in samples])[:, None]
        v = np.stack([s.valid & np.isfinite(s.disparity) for s in samples])[:, None]
        batch["disparity"] = torch.from_numpy(np.nan_to_num(d, nan=0.0)).to(dtype)
        batch["valid"] = torch.from_numpy(v)
    return batch


def split_holdout(samples: List[StereoSample], fraction: float, seed: int = 0):
    """Deterministic (train, held-out) split; the held-out part has ground truth stripped."""
    n = len(samples)
    k = int(round(n * fraction))
    if fraction > 0 and n > 1:
        k = max(1, k)
    k = min(k, n - 1)
    order = np.random.default_rng(seed).permutation(n)
    hold = set(order[:k].tolist())
    train = [s for i, s in enumerate(samples) if i not in hold]
    held = [samples[i].without_gt() for i in sorted(hold)]
    return train, held
