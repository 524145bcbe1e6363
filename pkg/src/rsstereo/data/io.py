"""On-disk dataset layout.

::

    <root>/metadata.json   datasetId, city, sensor, dispSign
    <root>/stats.json      per-channel mean/variance of the training images
    <root>/left/*.tif      images (tif or png)
    <root>/right/*.tif
    <root>/disp/*.tif      optional float32 left disparity, NaN = invalid
    <root>/disp_right/*.tif, <root>/occ/*.tif, <root>/occ_right/*.tif   optional extras

Stored disparity times ``dispSign`` gives the internal convention, where a
left pixel at column ``x`` matches the right image at ``x - d``.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, List, Optional

import numpy as np
import tifffile
from PIL import Image

from .sample import DomainDescriptor, NormalizationStats, StereoSample

IMAGE_SUFFIXES = (".tif", ".tiff", ".png")


class DatasetError(ValueError):
    pass


def _read_raster(path: Path) -> np.ndarray:
    try:
        if path.suffix.lower() in (".tif", ".tiff"):
            arr = tifffile.imread(path)
        else:
            with Image.open(path) as im:
                arr = np.asarray(im)
    except Exception as exc:  # any decoder failure is reported with the file name
        raise DatasetError(f"cannot read raster {path}: {exc}") from exc
    return np.asarray(arr, dtype=np.float32)


def _write_tif(path: Path, arr: np.ndarray):
    tifffile.imwrite(path, np.ascontiguousarray(arr, dtype=np.float32))


class StereoDataset:
    """Lazily loaded dataset directory; samples are read on indexing."""

    def __init__(self, root, require_stats: bool = False):
        self.root = Path(root)
        if not self.root.is_dir():
            raise DatasetError(f"dataset directory {self.root} does not exist")
        meta_path = self.root / "metadata.json"
        try:
            meta = json.loads(meta_path.read_text())
        except FileNotFoundError:
            raise DatasetError(f"missing {meta_path}") from None
        except json.JSONDecodeError as exc:
            raise DatasetError(f"malformed {meta_path}: {exc}") from None
        for key in ("datasetId", "city", "sensor"):
            if not isinstance(meta.get(key), str):
                raise DatasetError(f"{meta_path}: field {key!r} missing or not a string")
        sign = meta.get("dispSign", 1)
        if sign not in (1, -1):
            raise DatasetError(f"{meta_path}: dispSign must be 1 or -1, got {sign!r}")
        self.metadata = meta
        self.disp_sign = sign
        self.domain = DomainDescriptor(meta["datasetId"], meta["city"], meta["sensor"])
        left_dir, right_dir = self.root / "left", self.root / "right"
        if not left_dir.is_dir() or not right_dir.is_dir():
            raise DatasetError(f"{self.root} needs left/ and right/ directories")
        self.names = sorted(p.stem for p in left_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not self.names:
            raise DatasetError(f"{left_dir} contains no images")
        self._files = {}
        for sub in ("left", "right", "disp", "disp_right", "occ", "occ_right"):
            d = self.root / sub
            self._files[sub] = {p.stem: p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES} if d.is_dir() else None
        missing = [n for n in self.names if n not in self._files["right"]]
        if missing:
            raise DatasetError(f"{right_dir} lacks images for {missing[:3]}")
        self.stats: Optional[NormalizationStats] = None
        stats_path = self.root / "stats.json"
        if stats_path.exists():
            try:
                self.stats = NormalizationStats.load(stats_path)
            except (KeyError, ValueError) as exc:
                raise DatasetError(f"malformed {stats_path}: {exc}") from None
        elif require_stats:
            raise DatasetError(f"{stats_path} is missing; statistics are never computed from test data")

    @property
    def has_gt(self) -> bool:
        return self._files["disp"] is not None

    def __len__(self):
        return len(self.names)

    def _optional(self, sub, name):
        files = self._files[sub]
        if files is None or name not in files:
            return None
        return _read_raster(files[name])

    def __getitem__(self, i) -> StereoSample:
        name = self.names[i]
        left = _read_raster(self._files["left"][name])
        right = _read_raster(self._files["right"][name])
        disp = self._optional("disp", name)
        disp_r = self._optional("disp_right", name)
        occ = self._optional("occ", name)
        occ_r = self._optional("occ_right", name)
        if disp is not None:
            disp = disp * self.disp_sign
        if disp_r is not None:
            disp_r = disp_r * self.disp_sign
        try:
            return StereoSample(left, right, self.domain, disp, None,
                                None if occ is None else occ > 0.5, disp_r,
                                None if occ_r is None else occ_r > 0.5, name)
        except ValueError as exc:
            raise DatasetError(f"{self.root}/{name}: {exc}") from None

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def samples(self) -> List[StereoSample]:
        return list(self)


def load_dataset(root, require_stats: bool = False) -> StereoDataset:
    return StereoDataset(root, require_stats)


def write_dataset(root, samples: Iterable[StereoSample], stats: Optional[NormalizationStats] = None,
                  disp_sign: int = 1) -> Path:
    """Write samples in the dataset layout; ``stats`` is written to ``stats.json`` when given."""
    root = Path(root)
    samples = list(samples)
    if not samples:
        raise DatasetError("refusing to write an empty dataset")
    domain = samples[0].domain
    for sub in ("left", "right"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        name = s.name or f"{i:05d}"
        _write_tif(root / "left" / f"{name}.tif", s.left)
        _write_tif(root / "right" / f"{name}.tif", s.right)
        extras = {
            "disp": None if s.disparity is None else np.where(s.valid, s.disparity, np.nan) * disp_sign,
            "disp_right": None if s.disparity_right is None else s.disparity_right * disp_sign,
            "occ": s.occlusion,
            "occ_right": s.occlusion_right,
        }
        for sub, arr in extras.items():
            if arr is not None:
                (root / sub).mkdir(exist_ok=True)
                _write_tif(root / sub / f"{name}.tif", arr)
    meta = {"datasetId": domain.dataset_id, "city": domain.city, "sensor": domain.sensor,
            "dispSign": disp_sign}
    (root / "metadata.json").write_text(json.dumps(meta, indent=2))
    if stats is not None:
        stats.save(root / "stats.json")
    return root
