"""Random-dot stereograms with planted signed disparity and exact occlusion ground truth.

The right view is a random texture. The scene is a smooth background
disparity field plus elliptical foreground objects (larger disparity = closer)
defined in left-image coordinates. The left view is rendered by sampling the
right view at ``x - d``; left pixels whose surface is hidden in the right view
receive fresh texture instead.

A left pixel is marked occluded when its match leaves the right frame, when
its surface is hidden in the right view, or when either bilinear tap of its
match lands on a different surface. The last rule makes the mask agree with
what a forward-backward check on the true disparities can see.
"""
from __future__ import annotations

from typing import List, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.ndimage import gaussian_filter

from ..photometric import warp_horizontal
from .sample import DomainDescriptor, StereoSample


class SynthSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    height: int = Field(64, ge=16)
    width: int = Field(64, ge=16)
    channels: int = Field(1, ge=1)
    disparity_range: Tuple[float, float] = (-8.0, 8.0)
    occlusion_fraction: float = Field(0.1, ge=0, lt=1)
    object_delta: Tuple[float, float] = (4.0, 7.0)
    noise_sigma: float = Field(0.0, ge=0)
    brightness_delta: float = 0.0
    consistency_violation_fraction: float = Field(0.0, ge=0, lt=1)
    flip_prob: float = Field(0.0, ge=0, le=1)
    n_bumps: int = Field(4, ge=0)
    max_slope: float = Field(0.4, gt=0, lt=1)
    seed: int = 0
    dataset_id: str = "synth"
    city: str = "synthetic"
    sensor: str = "random-dot"

    @model_validator(mode="after")
    def _check(self):
        lo, hi = self.disparity_range
        if lo > hi:
            raise ValueError("disparity_range must be (low, high)")
        if max(abs(lo), abs(hi)) >= self.width / 2:
            raise ValueError("disparity_range must lie within (-W/2, W/2)")
        if self.object_delta[0] <= 0 or self.object_delta[0] > self.object_delta[1]:
            raise ValueError("object_delta must be a positive (low, high) pair")
        return self

    def with_seed(self, seed: int) -> "SynthSpec":
        return self.model_copy(update={"seed": seed})


def random_texture(rng, H, W, C=1):
    """Random dots with a little blur plus a low-frequency component, values roughly in [0, 1]."""
    out = []
    for _ in range(C):
        fine = gaussian_filter(rng.random((H, W)), 0.6)
        coarse = gaussian_filter(rng.random((H, W)), 3.0)
        t = fine + 2.0 * (coarse - coarse.mean())
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        out.append(t)
    return np.stack(out, axis=-1)


def _background(rng, spec: SynthSpec, top_room: float):
    H, W = spec.height, spec.width
    lo, hi = spec.disparity_range
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    field = np.zeros((H, W))
    for _ in range(spec.n_bumps):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        s = rng.uniform(0.2, 0.5) * min(H, W)
        field += rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    room = max(hi - top_room - lo, 0.0)
    if np.ptp(field) > 1e-9:
        field = (field - field.min()) / np.ptp(field)
        span = rng.uniform(0.3, 1.0) * room
        slope = np.abs(np.diff(field, axis=1)).max() * span
        if slope > spec.max_slope:
            span *= spec.max_slope / slope
    else:
        field[:] = 0
        span = 0.0
    base = rng.uniform(lo, lo + room - span)
    return base + span * field


def _object_rows(obj, H):
    cy, cx, ry, rx, _ = obj
    rows = {}
    for y in range(H):
        t = (y - cy) / ry
        if abs(t) < 1:
            half = rx * np.sqrt(1 - t * t)
            rows[y] = (cx - half, cx + half)
    return rows


class _Scene:
    """Background field plus objects; computes both disparity maps and occlusion masks."""

    def __init__(self, db: np.ndarray):
        self.db = db
        self.H, self.W = db.shape
        self.objects: List[tuple] = []
        self.rows: List[dict] = []

    def add(self, obj):
        self.objects.append(obj)
        self.rows.append(_object_rows(obj, self.H))

    def solve(self):
        H, W, db = self.H, self.W, self.db
        xs = np.arange(W, dtype=np.float64)
        dL = db.copy()
        sidL = np.zeros((H, W), int)
        dR = np.zeros((H, W))
        sidR = np.zeros((H, W), int)
        hiddenR = np.zeros((H, W), bool)  # right pixel on background that the left view cannot see
        oobR = np.zeros((H, W), bool)
        for y in range(H):
            g = xs - db[y]  # right position of each background column, increasing
            spans = []  # (k, a, b, right_a, right_b, delta)
            for k, (obj, rows) in enumerate(zip(self.objects, self.rows), start=1):
                if y not in rows:
                    continue
                a, b = rows[y]
                delta = obj[4]
                inside = (xs >= a) & (xs <= b)
                dL[y, inside] = db[y, inside] + delta
                sidL[y, inside] = k
                ra = a - np.interp(a, xs, db[y]) - delta
                rb = b - np.interp(b, xs, db[y]) - delta
                spans.append((k, a, b, ra, rb, delta))
            # background seen from the right view
            xstar = np.interp(xs, g, xs, left=np.nan, right=np.nan)
            oob = np.isnan(xstar)
            # extrapolate with the border disparity outside the frame
            xstar = np.where(np.isnan(xstar), xs + np.where(xs < g[0], db[y, 0], db[y, -1]), xstar)
            dR[y] = -np.interp(xstar, xs, db[y])
            oobR[y] = oob | (xstar < 0) | (xstar > W - 1)
            for k, a, b, ra, rb, delta in spans:
                hiddenR[y] |= (xstar >= a) & (xstar <= b)
            for k, a, b, ra, rb, delta in spans:
                cover = (xs >= ra) & (xs <= rb)
                if cover.any():
                    xo = np.interp(xs[cover] + delta, g, xs)
                    dR[y, cover] = -(np.interp(xo, xs, db[y]) + delta)
                    sidR[y, cover] = k
                    hiddenR[y, cover] = False
                    oobR[y, cover] = False
        self.dL, self.sidL, self.dR, self.sidR = dL, sidL, dR, sidR
        self.hiddenR, self.oobR = hiddenR, oobR
        self.occL, self.centreL = self._occlusion(dL, sidL, sidR, None)
        self.occR, _ = self._occlusion(dR, sidR, sidL, hiddenR | oobR)
        return self

    def _occlusion(self, d, sid_ref, sid_other, hidden_ref):
        """Footprint occlusion of the reference view given the other view's surface ids."""
        H, W = d.shape
        xs = np.arange(W)[None, :]
        u = xs - d
        oob = (u < 0) | (u > W - 1)
        i0 = np.clip(np.floor(u).astype(int), 0, W - 1)
        frac = u - np.floor(u)
        i1 = np.clip(i0 + 1, 0, W - 1)
        rows = np.arange(H)[:, None]
        s0 = sid_other[rows, i0]
        s1 = sid_other[rows, i1]
        mixed = (s0 != sid_ref) | ((frac > 1e-9) & (s1 != sid_ref))
        if hidden_ref is None:
            # a left pixel is hidden when another surface covers its match in the right view
            centre = self._covered_continuous(u, sid_ref)
        else:
            centre = hidden_ref
        return oob | centre | mixed, centre | oob

    def _covered_continuous(self, u, sid_ref):
        H, W = u.shape
        out = np.zeros((H, W), bool)
        for k, (obj, rows) in enumerate(zip(self.objects, self.rows), start=1):
            delta = obj[4]
            xs = np.arange(W, dtype=np.float64)
            for y, (a, b) in rows.items():
                ra = a - np.interp(a, xs, self.db[y]) - delta
                rb = b - np.interp(b, xs, self.db[y]) - delta
                out[y] |= (sid_ref[y] != k) & (u[y] >= ra) & (u[y] <= rb)
        return out


def _sample_object(rng, spec: SynthSpec, db, scene: _Scene):
    H, W = spec.height, spec.width
    hi = spec.disparity_range[1]
    ry = rng.uniform(0.08, 0.22) * H
    rx = rng.uniform(0.06, 0.16) * W
    cy = rng.uniform(ry, H - ry)
    cx = rng.uniform(rx, W - rx)
    y0, y1 = int(max(0, cy - ry)), int(min(H, cy + ry + 1))
    x0, x1 = int(max(0, cx - rx)), int(min(W, cx + rx + 1))
    room = hi - db[y0:y1, x0:x1].max()
    dmax = min(spec.object_delta[1], room)
    if dmax < spec.object_delta[0]:
        return None
    delta = rng.uniform(spec.object_delta[0], dmax)
    obj = (cy, cx, ry, rx, delta)
    # keep objects and their occlusion shadows apart
    margin = delta + 4
    for (oy, ox, ory, orx, od) in scene.objects:
        if abs(cy - oy) < ry + ory + 2 and abs(cx - ox) < rx + orx + max(margin, od + 4):
            return None
    return obj


def _build_scene(rng, spec: SynthSpec) -> _Scene:
    target = spec.occlusion_fraction
    top_room = spec.object_delta[0] if target > 0 else 0.0
    db = _background(rng, spec, top_room)
    scene = _Scene(db).solve()
    # shrink the background towards zero while frame-border losses alone overshoot
    for _ in range(40):
        if scene.occL.mean() <= target + 0.015:
            break
        db = db * 0.8
        scene = _Scene(db).solve()
    if scene.occL.mean() > target + 0.015:
        # a nearly flat field still loses a border column; a flat zero field loses none
        db = np.zeros_like(db)
        scene = _Scene(db).solve()
    attempts = 0
    while scene.occL.mean() < target - 0.015 and attempts < 200:
        attempts += 1
        obj = _sample_object(rng, spec, db, scene)
        if obj is None:
            continue
        trial = _Scene(db)
        for o in scene.objects:
            trial.add(o)
        trial.add(obj)
        trial.solve()
        if trial.occL.mean() <= target + 0.02:
            scene = trial
    return scene


def generate_synthetic(spec: SynthSpec, index: int = 0) -> StereoSample:
    """Generate one stereogram; ``index`` selects a sample within the seeded stream."""
    rng = np.random.default_rng([spec.seed, index])
    H, W, C = spec.height, spec.width, spec.channels
    scene = _build_scene(rng, spec)

    right = random_texture(rng, H, W, C)
    r_t = torch.from_numpy(right.transpose(2, 0, 1)[None].astype(np.float32))
    d_t = torch.from_numpy(scene.dL[None, None].astype(np.float32))
    warped = warp_horizontal(r_t, d_t)[0][0].numpy().transpose(1, 2, 0)
    fresh = random_texture(rng, H, W, C)
    left = np.where(scene.centreL[..., None], fresh, warped).astype(np.float32)
    right = right.astype(np.float32)

    if spec.consistency_violation_fraction > 0:
        right = _inject_violations(rng, right, spec.consistency_violation_fraction)
    if spec.brightness_delta:
        right = right + np.float32(spec.brightness_delta)
    if spec.noise_sigma > 0:
        left = left + rng.normal(0, spec.noise_sigma, left.shape).astype(np.float32)
        right = right + rng.normal(0, spec.noise_sigma, right.shape).astype(np.float32)

    sample = StereoSample(
        left=left, right=right,
        domain=DomainDescriptor(spec.dataset_id, spec.city, spec.sensor),
        disparity=scene.dL.astype(np.float32),
        valid=np.ones((H, W), bool),
        occlusion=scene.occL,
        disparity_right=scene.dR.astype(np.float32),
        occlusion_right=scene.occR,
        name=f"{spec.dataset_id}_{index:05d}",
    )
    if spec.flip_prob > 0 and rng.random() < spec.flip_prob:
        sample = sample.mirrored()
    return sample


def _inject_violations(rng, right, fraction):
    """Replace random rectangles of the right view with unrelated texture."""
    H, W, C = right.shape
    out = right.copy()
    hit = np.zeros((H, W), bool)
    noise = random_texture(rng, H, W, C).astype(np.float32)
    while hit.mean() < fraction:
        h = int(rng.integers(4, max(5, H // 4)))
        w = int(rng.integers(4, max(5, W // 4)))
        y = int(rng.integers(0, H - h + 1))
        x = int(rng.integers(0, W - w + 1))
        hit[y:y + h, x:x + w] = True
    out[hit] = noise[hit]
    return out


def generate_dataset(spec: SynthSpec, count: int) -> List[StereoSample]:
    return [generate_synthetic(spec, i) for i in range(count)]
