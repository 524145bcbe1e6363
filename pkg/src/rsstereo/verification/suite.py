"""Oracle and finite-difference suites.

Every registered operation pairs the library implementation with a naive
reference from :mod:`.oracles` on random small double-precision instances.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import torch

from .. import cost_volume as cv
from .. import disparity as dsp
from .. import evaluation as ev
from .. import losses as ls
from .. import photometric as ph
from ..config import LossWeights
from ..models.output import ModelOutput
from ..training import ce_from_disparities
from . import oracles as orc

ABS_TOL = 1e-6
REL_TOL = 1e-4
GRAD_TOL = 1e-3


@dataclass
class OracleReport:
    operation: str
    max_abs_error: float
    max_rel_error: float
    instances: int
    passed: bool
    kind: str = "float"
    seconds: float = 0.0

    def to_record(self):
        return asdict(self)


@dataclass
class OracleOp:
    name: str
    kind: str  # "exact" (absolute 1e-6) or "float" (relative 1e-4)
    make: Callable  # rng -> instance dict
    impl: Callable  # instance -> array
    oracle: Callable  # instance -> array


REGISTRY: Dict[str, OracleOp] = {}


def register(name, kind, make, impl, oracle):
    if name in REGISTRY:
        raise ValueError(f"oracle {name!r} registered twice")
    REGISTRY[name] = OracleOp(name, kind, make, impl, oracle)


def T(a):
    """numpy -> float64 tensor with a leading batch axis (and a channel axis for 2-D arrays)."""
    t = torch.as_tensor(np.asarray(a, dtype=np.float64))
    if t.dim() == 2:
        t = t[None]
    return t[None]


def N(t):
    return t.detach().double().numpy()


def _size(rng, lo=8, hi=11):
    return int(rng.integers(lo, hi)), int(rng.integers(lo, hi))


# ---- photometric ops ----------------------------------------------------------------

def _mk_warp(rng):
    H, W = _size(rng)
    return {"src": rng.normal(size=(2, H, W)), "d": rng.uniform(-4, 4, (H, W))}


register("warp_horizontal", "float", _mk_warp,
         lambda i: np.concatenate([N(ph.warp_horizontal(T(i["src"]), T(i["d"]))[0][0]).ravel(),
                                   N(ph.warp_horizontal(T(i["src"]), T(i["d"]))[1][0, 0]).ravel()]),
         lambda i: np.concatenate([orc.warp(i["src"], i["d"])[0].ravel(),
                                   orc.warp(i["src"], i["d"])[1].ravel().astype(float)]))


def _mk_ramp(rng):
    H, W = _size(rng)
    k = int(rng.integers(-3, 4))
    return {"H": H, "W": W, "k": k}


def _ramp_impl(i):
    src = np.tile(np.arange(i["W"], dtype=float), (i["H"], 1))
    out, oob = ph.warp_horizontal(T(src), T(np.full((i["H"], i["W"]), float(i["k"]))))
    return np.concatenate([N(out[0, 0]).ravel(), N(oob[0, 0]).ravel()])


def _ramp_oracle(i):
    # index arithmetic: output(x) = x - k when the source column exists, else 0 and flagged
    H, W, k = i["H"], i["W"], i["k"]
    out = np.zeros((H, W))
    oob = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            if 0 <= x - k <= W - 1:
                out[y, x] = x - k
            else:
                oob[y, x] = 1
    return np.concatenate([out.ravel(), oob.ravel()])


register("warp_integer_ramp", "exact", _mk_ramp, _ramp_impl, _ramp_oracle)


def _mk_pair(rng, C=2):
    H, W = _size(rng)
    return {"a": rng.uniform(0, 1, (C, H, W)), "b": rng.uniform(0, 1, (C, H, W)),
            "window": int(rng.choice([3, 5]))}


register("ssim_map", "float", _mk_pair,
         lambda i: N(ph.ssim_map(T(i["a"]), T(i["b"]), i["window"])[0, 0]),
         lambda i: orc.ssim(i["a"], i["b"], i["window"]))


def _mk_const(rng):
    H, W = _size(rng)
    return {"H": H, "W": W, "p": rng.uniform(0, 1), "q": rng.uniform(0, 1)}


register("ssim_two_constants", "float", _mk_const,
         lambda i: N(ph.ssim_map(T(np.full((i["H"], i["W"]), i["p"])), T(np.full((i["H"], i["W"]), i["q"])))[0, 0]),
         lambda i: np.full((i["H"], i["W"]), orc.ssim_constant(i["p"], i["q"])))


def _mk_gray(rng):
    H, W = _size(rng)
    # quantized values create ties, exercising the strict comparison
    return {"img": rng.integers(0, 6, (H, W)).astype(float), "img2": rng.integers(0, 6, (H, W)).astype(float)}


register("census_transform", "exact", _mk_gray,
         lambda i: np.concatenate([N(ph.census_transform(T(i["img"])).bits[0]).transpose(1, 2, 0).ravel(),
                                   N(ph.census_transform(T(i["img"])).valid[0, 0]).ravel()]),
         lambda i: np.concatenate([orc.census(i["img"])[0].ravel(), orc.census(i["img"])[1].ravel()]).astype(float))


def _mk_spot(rng):
    H, W = _size(rng, 9, 12)
    return {"H": H, "W": W, "y": int(rng.integers(3, H - 3)), "x": int(rng.integers(3, W - 3))}


def _spot_impl(i):
    img = np.zeros((i["H"], i["W"]))
    img[i["y"], i["x"]] = 1.0
    return np.array([N(ph.census_transform(T(img)).bits[0, :, i["y"], i["x"]]).sum()])


register("census_bright_centre", "exact", _mk_spot, _spot_impl, lambda i: np.array([48.0]))

register("soft_census_signature", "float", lambda rng: {"img": rng.normal(size=_size(rng))},
         lambda i: N(ph.soft_census_signature(T(i["img"]))[0]).transpose(1, 2, 0),
         lambda i: orc.soft_census(i["img"]))


def _soft_limit_impl(i):
    sig = N(ph.soft_census_signature(T(i["img"]), c=1e-12)[0]).transpose(1, 2, 0)
    return (sig < 0).astype(float)


register("soft_census_sign_limit", "exact", lambda rng: {"img": rng.normal(size=_size(rng))},
         _soft_limit_impl, lambda i: orc.census(i["img"])[0].astype(float))


def _mk_codes(rng):
    H, W = _size(rng)
    return {"a": rng.random((H, W, 48)) < 0.5, "b": rng.random((H, W, 48)) < 0.5}


def _codes(bits):
    t = torch.from_numpy(np.ascontiguousarray(bits.transpose(2, 0, 1)))[None]
    return ph.CensusCodes(t, torch.ones_like(t[:, :1]))


register("hamming_distance", "exact", _mk_codes,
         lambda i: N(ph.hamming_distance(_codes(i["a"]), _codes(i["b"]))[0, 0]),
         lambda i: orc.hamming(i["a"], i["b"]).astype(float))


def _mk_soft_codes(rng):
    H, W = _size(rng)
    return {"a": rng.uniform(-1, 1, (H, W, 48)), "b": rng.uniform(-1, 1, (H, W, 48))}


register("soft_hamming_distance", "float", _mk_soft_codes,
         lambda i: N(ph.soft_hamming_distance(T(i["a"].transpose(2, 0, 1)), T(i["b"].transpose(2, 0, 1)))[0, 0]),
         lambda i: orc.soft_hamming(i["a"], i["b"]))


def _mk_charb(rng):
    return {"x": rng.normal(scale=3, size=20), "eps": float(rng.uniform(1e-4, 1e-1)),
            "alpha": float(rng.uniform(0.2, 1.0))}


register("charbonnier", "float", _mk_charb,
         lambda i: N(ph.charbonnier(torch.as_tensor(i["x"]), i["eps"], i["alpha"])),
         lambda i: np.array([orc.charbonnier(v, i["eps"], i["alpha"]) for v in i["x"]]))

register("image_gradients", "float", lambda rng: {"img": rng.normal(size=_size(rng))},
         lambda i: np.stack([N(g[0, 0]) for g in ph.image_gradients(T(i["img"]))[:2]]),
         lambda i: np.stack(orc.gradients(i["img"])))


# ---- cost volumes ----------------------------------------------------------------------

def _mk_feats(rng):
    H, W = _size(rng, 6, 9)
    C = int(rng.choice([4, 8]))
    if rng.random() < 0.5:
        cands = np.arange(-2, 3, dtype=float)
    else:
        cands = np.sort(rng.uniform(-3, 3, int(rng.integers(2, 6))))
    return {"fl": rng.normal(size=(C, H, W)), "fr": rng.normal(size=(C, H, W)), "cands": cands,
            "groups": int(rng.choice([1, 2, 4]))}


register("build_concat_volume", "float", _mk_feats,
         lambda i: N(cv.build_concat_volume(T(i["fl"]), T(i["fr"]), torch.as_tensor(i["cands"])).data[0]),
         lambda i: orc.concat_volume(i["fl"], i["fr"], i["cands"]))

register("build_gwc_volume", "float", _mk_feats,
         lambda i: N(cv.build_gwc_volume(T(i["fl"]), T(i["fr"]), torch.as_tensor(i["cands"]), i["groups"]).data[0]),
         lambda i: orc.gwc_volume(i["fl"], i["fr"], i["cands"], i["groups"]))


def _gwc_self_impl(i):
    return N(cv.build_gwc_volume(T(i["fl"]), T(i["fl"]), torch.zeros(1, dtype=torch.float64), 1).data[0, 0, 0])


def _gwc_self_oracle(i):
    C, H, W = i["fl"].shape
    out = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            out[y, x] = sum(i["fl"][c, y, x] ** 2 for c in range(C)) / C
    return out


register("gwc_self_inner_product", "float", _mk_feats, _gwc_self_impl, _gwc_self_oracle)


def _combine_impl(i):
    cand = torch.as_tensor(i["cands"])
    a = cv.build_concat_volume(T(i["fl"]), T(i["fr"]), cand)
    b = cv.build_gwc_volume(T(i["fl"]), T(i["fr"]), cand, i["groups"])
    return N(cv.combine_volumes(a, b).data[0])


register("combine_volumes", "exact", _mk_feats, _combine_impl,
         lambda i: np.concatenate([orc.concat_volume(i["fl"], i["fr"], i["cands"]),
                                   orc.gwc_volume(i["fl"], i["fr"], i["cands"], i["groups"])]))


def _mk_fuse(rng):
    h, w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    Fc = int(rng.integers(1, 4))
    Dc = int(rng.integers(2, 4))
    span = float(rng.uniform(0.5, 3))
    return {"coarse": rng.normal(size=(Fc, Dc, h, w)), "fine": rng.normal(size=(Fc, 2 * Dc - 1, 2 * h, 2 * w)),
            "alpha": rng.uniform(0, 1, Fc), "span": span}


def _fuse_impl(i):
    Fc, Dc = i["coarse"].shape[:2]
    Df = i["fine"].shape[1]
    cc = torch.linspace(-i["span"], i["span"], Dc, dtype=torch.float64)
    cf = torch.linspace(-2 * i["span"], 2 * i["span"], Df, dtype=torch.float64)
    block = cv.ChannelAttentionFusion(Fc).double()
    alpha = torch.as_tensor(i["alpha"]).view(1, -1, 1, 1, 1)
    out = cv.fuse_adjacent_volumes(cv.CostVolume(T(i["coarse"])[0][None], cc),
                                   cv.CostVolume(torch.as_tensor(i["fine"])[None], cf), block, alpha=alpha)
    return N(out.data[0])


register("fuse_adjacent_volumes", "float", _mk_fuse, _fuse_impl,
         lambda i: orc.fuse(i["coarse"], i["fine"], i["alpha"]))


# ---- disparity readout ------------------------------------------------------------------

def _mk_cost(rng):
    H, W = _size(rng, 3, 7)
    D = int(rng.integers(2, 8))
    cands = np.sort(rng.uniform(-5, 5, D)) if rng.random() < 0.5 else np.arange(-(D // 2), D - D // 2, dtype=float)
    return {"cost": rng.normal(scale=2, size=(D, H, W)), "cands": cands}


def _cost_vol(i):
    return cv.CostVolume(torch.as_tensor(i["cost"])[None], torch.as_tensor(i["cands"]))


register("soft_argmax", "float", _mk_cost, lambda i: N(dsp.soft_argmax(_cost_vol(i))[0, 0]),
         lambda i: orc.soft_argmax(i["cost"], i["cands"]))


def _unc_impl(i):
    vol = _cost_vol(i)
    return N(dsp.estimate_uncertainty(vol, dsp.soft_argmax(vol))[0, 0])


register("estimate_uncertainty", "float", _mk_cost, _unc_impl, lambda i: orc.uncertainty(i["cost"], i["cands"]))


def _mk_two_point(rng):
    k = int(rng.integers(1, 6))
    return {"k": k}


def _two_point_impl(i):
    k = i["k"]
    cands = torch.arange(-k, k + 1, dtype=torch.float64)
    cost = torch.full((1, 2 * k + 1, 1, 1), 1e4, dtype=torch.float64)
    cost[0, 0] = 0
    cost[0, -1] = 0
    vol = cv.CostVolume(cost, cands)
    return N(dsp.estimate_uncertainty(vol, dsp.soft_argmax(vol))[0, 0]).ravel()


register("uncertainty_two_point", "float", _mk_two_point, _two_point_impl, lambda i: np.array([float(i["k"])]))


def _mk_range(rng):
    H, W = _size(rng, 3, 6)
    return {"dhat": rng.normal(scale=3, size=(H, W)), "sigma": rng.uniform(0, 2, (H, W)),
            "s": float(rng.normal()), "eps": float(rng.normal())}


def _range_impl(i):
    lo, hi = dsp.next_stage_range(T(i["dhat"]), T(i["sigma"]), i["s"], i["eps"], min_width=0.0, upsample=False)
    return np.stack([N(lo[0, 0]), N(hi[0, 0])])


def _range_oracle(i):
    # the half-width is clipped at zero so the interval always contains the estimate
    lo, hi = orc.stage_bounds(i["dhat"], i["sigma"], i["s"], i["eps"])
    flip = lo > hi
    lo[flip] = hi[flip] = i["dhat"][flip]
    return np.stack([lo, hi])


register("next_stage_range", "float", _mk_range, _range_impl, _range_oracle)


def _mk_sampler(rng):
    lo = float(rng.uniform(-10, 5))
    return {"lo": lo, "hi": lo + float(rng.uniform(0, 10)), "n": int(rng.integers(2, 20))}


register("sample_candidates", "float", _mk_sampler,
         lambda i: N(dsp.sample_candidates(torch.tensor([[[[i["lo"]]]]], dtype=torch.float64),
                                           torch.tensor([[[[i["hi"]]]]], dtype=torch.float64), i["n"])).ravel(),
         lambda i: np.array(orc.candidates(i["lo"], i["hi"], i["n"])))


def _mk_att(rng, H=None, W=None):
    if H is None:
        H, W = int(rng.integers(2, 5)), int(rng.integers(4, 8))
    logits = rng.normal(scale=2, size=(H, W, W))
    e = np.exp(logits - logits.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


register("pam_disparity", "float", lambda rng: {"att": _mk_att(rng)},
         lambda i: N(dsp.pam_disparity(torch.as_tensor(i["att"])[None])[0, 0]),
         lambda i: orc.pam_disparity(i["att"]))


# ---- losses ------------------------------------------------------------------------------

def _mk_fb(rng):
    H, W = _size(rng)
    df = rng.uniform(-3, 3, (H, W))
    db = -df[:, ::-1] + rng.normal(scale=1.5, size=(H, W))
    return {"df": df, "db": db, "tau": float(rng.choice([1.0, 2.0, 5.0]))}


register("occlusion_from_fb", "exact", _mk_fb,
         lambda i: N(ls.occlusion_from_fb(T(i["df"]), T(i["db"]), i["tau"])[0, 0]),
         lambda i: orc.fb_occlusion(i["df"], i["db"], i["tau"]).astype(float))


def _mk_photo(rng, C=2):
    H, W = _size(rng)
    occ = rng.random((H, W)) < rng.uniform(0, 0.5)
    return {"img": rng.uniform(0, 1, (C, H, W)), "rec": rng.uniform(0, 1, (C, H, W)), "occ": occ,
            "alpha": float(rng.uniform(0, 1))}


register("photometric_loss", "float", _mk_photo,
         lambda i: np.array([float(ls.photometric_loss(T(i["img"]), T(i["rec"]), T(i["occ"]), i["alpha"]))]),
         lambda i: np.array([orc.photometric(i["img"], i["rec"], i["occ"], i["alpha"])]))


def _mk_census_loss(rng):
    i = _mk_photo(rng, C=1)
    i["img"], i["rec"] = i["img"][0], i["rec"][0]
    return i


register("census_loss", "float", _mk_census_loss,
         lambda i: np.array([float(ls.census_loss(T(i["img"]), T(i["rec"]), T(i["occ"])))]),
         lambda i: np.array([orc.census_loss(i["img"], i["rec"], i["occ"])]))


def _mk_smooth(rng):
    H, W = _size(rng)
    return {"d": rng.normal(size=(H, W)), "img": rng.normal(size=(2, H, W))}


register("smoothness_loss", "float", _mk_smooth,
         lambda i: np.array([float(ls.smoothness_loss(T(i["d"]), T(i["img"])))]),
         lambda i: np.array([orc.smoothness(i["d"], i["img"])]))


def _mk_sup(rng):
    H, W = 8, int(rng.choice([8, 12]))
    gt = rng.uniform(-6, 6, (H, W))
    valid = rng.random((H, W)) < 0.8
    preds = [rng.uniform(-3, 3, (H // f, W // f)) for f in (4, 2, 1)]
    return {"gt": gt, "valid": valid, "preds": preds, "w": list(rng.uniform(0, 2, 3))}


def _sup_oracle(i):
    H, W = i["gt"].shape
    gts, valids = [], []
    for p in i["preds"]:
        h, w = p.shape
        fy, fx = H // h, W // w
        g = np.zeros((h, w))
        v = np.zeros((h, w), bool)
        for y in range(h):
            for x in range(w):
                vals = [i["gt"][y * fy + a, x * fx + b] for a in range(fy) for b in range(fx)
                        if i["valid"][y * fy + a, x * fx + b]]
                if vals:
                    g[y, x] = sum(vals) / len(vals) * w / W
                    v[y, x] = True
        gts.append(g)
        valids.append(v)
    return np.array([orc.supervised(i["preds"], gts, valids, i["w"])])


register("supervised_loss", "float", _mk_sup,
         lambda i: np.array([float(ls.supervised_loss([T(p) for p in i["preds"]], T(i["gt"]),
                                                      T(i["valid"]).bool(), i["w"]).total)]),
         _sup_oracle)


def _mk_unsup(rng):
    H, W = _size(rng)
    dl = rng.uniform(-2, 2, (H, W))
    dr = -dl[:, ::-1] + rng.normal(scale=0.5, size=(H, W))
    return {"l": rng.uniform(0, 1, (H, W)), "r": rng.uniform(0, 1, (H, W)), "dl": dl, "dr": dr,
            "tau": float(rng.choice([1.0, 2.0, 5.0]))}


def _unsup_impl(i):
    w = LossWeights()
    return np.array([float(ls.unsupervised_scale_loss(T(i["l"]), T(i["r"]), T(i["dl"]), T(i["dr"]), w, i["tau"]).total)])


def _unsup_oracle(i):
    w = LossWeights()
    total = 0.0
    for img, other, d, d_other in ((i["l"], i["r"], i["dl"], i["dr"]), (i["r"], i["l"], i["dr"], i["dl"])):
        occ = orc.fb_occlusion(d, d_other, i["tau"])
        rec = orc.warp(other[None], d)[0][0]
        lp = orc.photometric(img[None], rec[None], occ, w.alpha, w.ssim_window)
        lc = orc.census_loss(img, rec, occ)
        lsm = orc.smoothness(d, img[None])
        total += 0.5 * (w.lambda_p * lp + w.lambda_census * lc + w.lambda_sm * lsm)
    return np.array([total])


register("unsupervised_scale_loss", "float", _mk_unsup, _unsup_impl, _unsup_oracle)


def _mk_pam(rng):
    H, W = int(rng.integers(2, 5)), int(rng.integers(4, 8))
    return {"l": rng.normal(size=(2, H, W)), "r": rng.normal(size=(2, H, W)),
            "rl": _mk_att(rng, H, W), "lr": _mk_att(rng, H, W),
            "ol": rng.random((H, W)) < 0.3, "or": rng.random((H, W)) < 0.3}


def _att(a):
    return torch.as_tensor(a)[None]


register("pam_photometric", "float", _mk_pam,
         lambda i: np.array([float(ls.pam_photometric(T(i["l"]), T(i["r"]), _att(i["rl"]), _att(i["lr"]),
                                                      T(i["ol"]), T(i["or"])))]),
         lambda i: np.array([orc.pam_photometric(i["l"], i["r"], i["rl"], i["lr"], i["ol"], i["or"])]))


def _mk_pam_occ(rng):
    att = _mk_att(rng)
    # drive some columns towards zero received mass
    att[:, :, rng.integers(0, att.shape[-1])] *= 0.01
    return {"att": att, "thr": float(rng.uniform(0.05, 0.9))}


register("pam_occlusion", "exact", _mk_pam_occ,
         lambda i: N(ls.pam_occlusion(_att(i["att"]), i["thr"])[0, 0]),
         lambda i: orc.pam_occlusion(i["att"], i["thr"]).astype(float))

register("pam_smoothness", "float", _mk_pam,
         lambda i: np.array([float(ls.pam_smoothness(_att(i["rl"]), _att(i["lr"])))]),
         lambda i: np.array([orc.pam_smoothness(i["rl"], i["lr"])]))

register("pam_cycle", "float", _mk_pam,
         lambda i: np.array([float(ls.pam_cycle(_att(i["rl"]), _att(i["lr"]), T(i["ol"]), T(i["or"])))]),
         lambda i: np.array([orc.pam_cycle(i["rl"], i["lr"], i["ol"], i["or"])]))


def _mk_pam_total(rng):
    H, W = 16, int(rng.choice([16, 32]))
    atts = []
    for f in (4, 2, 1):
        h, w = H // 2 // f, W // 2 // f
        atts.append((_mk_att(rng, h, w), _mk_att(rng, h, w)))
    return {"l": rng.uniform(0, 1, (1, H, W)), "r": rng.uniform(0, 1, (1, H, W)), "atts": atts,
            "d": rng.uniform(-2, 2, (H, W))}


def _pam_total_impl(i):
    out = ModelOutput(disparities=[T(i["d"])], att_rl=[_att(a) for a, _ in i["atts"]],
                      att_lr=[_att(b) for _, b in i["atts"]])
    return np.array([float(ls.pam_total(T(i["l"]), T(i["r"]), out, LossWeights()).total)])


def _pool(img, f):
    C, H, W = img.shape
    out = np.zeros((C, H // f, W // f))
    for c in range(C):
        for y in range(H // f):
            for x in range(W // f):
                out[c, y, x] = img[c, y * f:(y + 1) * f, x * f:(x + 1) * f].mean()
    return out


def _pam_total_oracle(i):
    w = LossWeights()
    H, W = i["d"].shape
    a_rl, a_lr = i["atts"][-1]
    occ_small = orc.pam_occlusion(a_lr, w.pam_occlusion_threshold)
    h, wd = occ_small.shape
    occ = np.zeros((H, W), bool)
    for y in range(H):
        for x in range(W):
            occ[y, x] = occ_small[y * h // H, x * wd // W]
    rec, oob = orc.warp(i["r"], i["d"])
    occ |= oob
    total = orc.photometric(i["l"], rec, occ, w.alpha, w.ssim_window) + w.lambda_sm * orc.smoothness(i["d"], i["l"])
    for ws, (rl, lr) in zip(w.pam_scale_weights, i["atts"]):
        f = H // rl.shape[0]
        l, r = _pool(i["l"], f), _pool(i["r"], f)
        ol = orc.pam_occlusion(lr, w.pam_occlusion_threshold)
        or_ = orc.pam_occlusion(rl, w.pam_occlusion_threshold)
        block = (orc.pam_photometric(l, r, rl, lr, ol, or_) + w.lambda_pam_s * orc.pam_smoothness(rl, lr)
                 + w.lambda_pam_c * orc.pam_cycle(rl, lr, ol, or_))
        total += w.lambda_pam * ws * block
    return np.array([total])


register("pam_total", "float", _mk_pam_total, _pam_total_impl, _pam_total_oracle)


# ---- criterion and metrics ----------------------------------------------------------------

def _mk_ce(rng):
    H, W = _size(rng)
    dl = rng.uniform(-3, 3, (H, W))
    return {"dl": dl, "dr": -dl[:, ::-1] + rng.normal(size=(H, W))}


register("consistency_criterion", "float", _mk_ce,
         lambda i: N(ce_from_disparities(T(i["dl"]), T(i["dr"]))),
         lambda i: np.array([orc.ce(i["dl"], i["dr"])]))


def _mk_metric(rng):
    H, W = _size(rng)
    gt = rng.uniform(-20, 20, (H, W))
    gt[rng.random((H, W)) < 0.1] = np.nan
    return {"pred": gt + rng.normal(scale=3, size=(H, W)), "gt": gt, "mask": rng.random((H, W)) < 0.9}


register("epe", "float", _mk_metric, lambda i: np.array([ev.epe(i["pred"], i["gt"], i["mask"])]),
         lambda i: np.array([orc.epe(i["pred"], i["gt"], i["mask"])]))
register("d1", "exact", _mk_metric, lambda i: np.array([ev.d1(i["pred"], i["gt"], i["mask"])]),
         lambda i: np.array([orc.d1(i["pred"], i["gt"], i["mask"])]))


def _mk_d1_cases(rng):
    H, W = _size(rng)
    return {"H": H, "W": W}


def _d1_cases_impl(i):
    shape = (i["H"], i["W"])
    return np.array([ev.d1(np.full(shape, 104.0), np.full(shape, 100.0)),
                     ev.d1(np.full(shape, 14.0), np.full(shape, 10.0)),
                     ev.d1(np.full(shape, -14.0), np.full(shape, -10.0))])


register("d1_constructed_cases", "exact", _mk_d1_cases, _d1_cases_impl, lambda i: np.array([0.0, 100.0, 100.0]))


# ---- runner -------------------------------------------------------------------------------

def compare(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        return math.inf, math.inf
    diff = np.abs(a - b)
    rel = diff / np.maximum(np.abs(b), 1e-6)
    return float(diff.max(initial=0.0)), float(rel.max(initial=0.0))


def run_oracle_suite(seed: int = 0, instances: int = 100, overrides: Optional[Dict[str, Callable]] = None,
                     names: Optional[List[str]] = None) -> List[OracleReport]:
    """Compare every registered implementation against its oracle on random instances.

    ``overrides`` maps operation names to replacement implementations, which
    lets tests check that a corrupted operation is reported as failing.
    """
    import time

    overrides = overrides or {}
    reports = []
    for name, op in REGISTRY.items():
        if names is not None and name not in names:
            continue
        impl = overrides.get(name, op.impl)
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        max_abs = max_rel = 0.0
        t0 = time.time()
        for _ in range(instances):
            inst = op.make(rng)
            try:
                a, r = compare(impl(inst), op.oracle(inst))
            except Exception:  # a crashing implementation fails its own report only
                a, r = math.inf, math.inf
            max_abs, max_rel = max(max_abs, a), max(max_rel, r)
        if op.kind == "exact":
            ok = max_abs <= ABS_TOL
        else:
            ok = max_abs <= ABS_TOL or max_rel <= REL_TOL
        reports.append(OracleReport(name, max_abs, max_rel, instances, bool(ok), op.kind, time.time() - t0))
    return reports


# ---- finite-difference gradients -------------------------------------------------------

@dataclass
class GradOp:
    name: str
    make: Callable  # rng -> dict of numpy inputs (all differentiated) and "const" extras
    fn: Callable  # dict of tensors -> tensor


GRADIENTS: Dict[str, GradOp] = {}

# hard census codes, Hamming counts, occlusion masks and the metrics are piecewise
# constant in their inputs and have no gradient to check
NON_DIFFERENTIABLE = ("census_transform", "hamming_distance", "occlusion_from_fb", "pam_occlusion", "epe", "d1")


def register_gradient(name, make, fn):
    GRADIENTS[name] = GradOp(name, make, fn)


def _img(rng, C=1, H=8, W=8):
    return rng.uniform(0, 1, (1, C, H, W))


def _soft_att(x):
    return torch.softmax(x, dim=-1)


register_gradient("warp_horizontal", lambda r: {"src": _img(r, 2), "d": r.uniform(-3, 3, (1, 1, 8, 8))},
                  lambda t: ph.warp_horizontal(t["src"], t["d"])[0])
register_gradient("ssim_map", lambda r: {"a": _img(r, 2), "b": _img(r, 2)}, lambda t: ph.ssim_map(t["a"], t["b"]))
register_gradient("soft_census_signature", lambda r: {"img": _img(r)}, lambda t: ph.soft_census_signature(t["img"]))
register_gradient("soft_hamming_distance", lambda r: {"a": r.uniform(-1, 1, (1, 48, 4, 4)), "b": r.uniform(-1, 1, (1, 48, 4, 4))},
                  lambda t: ph.soft_hamming_distance(t["a"], t["b"]))
register_gradient("charbonnier", lambda r: {"x": r.normal(size=(1, 1, 8, 8))}, lambda t: ph.charbonnier(t["x"]))
register_gradient("image_gradients", lambda r: {"img": _img(r)}, lambda t: torch.cat(ph.image_gradients(t["img"])[:2], 1))

_CANDS = torch.linspace(-2.5, 2.5, 4, dtype=torch.float64)
register_gradient("build_concat_volume", lambda r: {"fl": r.normal(size=(1, 2, 6, 8)), "fr": r.normal(size=(1, 2, 6, 8))},
                  lambda t: cv.build_concat_volume(t["fl"], t["fr"], _CANDS).data)
register_gradient("build_gwc_volume", lambda r: {"fl": r.normal(size=(1, 4, 6, 8)), "fr": r.normal(size=(1, 4, 6, 8))},
                  lambda t: cv.build_gwc_volume(t["fl"], t["fr"], _CANDS, 2).data)


def _fuse_grad(t):
    torch.manual_seed(0)
    block = cv.ChannelAttentionFusion(2).double()
    coarse = cv.CostVolume(t["coarse"], torch.linspace(-1, 1, 3, dtype=torch.float64))
    fine = cv.CostVolume(t["fine"], torch.linspace(-2, 2, 5, dtype=torch.float64))
    return cv.fuse_adjacent_volumes(coarse, fine, block).data


register_gradient("fuse_adjacent_volumes",
                  lambda r: {"coarse": r.normal(size=(1, 2, 3, 2, 3)), "fine": r.normal(size=(1, 2, 5, 4, 6))}, _fuse_grad)
register_gradient("soft_argmax", lambda r: {"cost": r.normal(size=(1, 5, 4, 4))},
                  lambda t: dsp.soft_argmax(cv.CostVolume(t["cost"], torch.linspace(-3, 1, 5, dtype=torch.float64))))


def _unc_grad(t):
    vol = cv.CostVolume(t["cost"], torch.linspace(-3, 1, 5, dtype=torch.float64))
    return dsp.estimate_uncertainty(vol, dsp.soft_argmax(vol))


register_gradient("estimate_uncertainty", lambda r: {"cost": r.normal(size=(1, 5, 4, 4))}, _unc_grad)
register_gradient("next_stage_range",
                  lambda r: {"dhat": r.normal(size=(1, 1, 4, 4)), "sigma": r.uniform(0.5, 2, (1, 1, 4, 4))},
                  lambda t: torch.cat(dsp.next_stage_range(t["dhat"], t["sigma"], 1.3, 0.2, min_width=0.0, upsample=False), 1))
register_gradient("pam_disparity", lambda r: {"logits": r.normal(size=(1, 3, 6, 6))},
                  lambda t: dsp.pam_disparity(_soft_att(t["logits"]), check=False))


def _occ_const(r):
    return (r.random((1, 1, 8, 8)) < 0.2).astype(float)


def _photo_grad(t):
    rec, _ = ph.warp_horizontal(t["src"], t["d"])
    return ls.photometric_loss(t["img"], rec, torch.zeros_like(t["d"]).masked_fill(t["d"] > 2.5, 1.0).detach())


register_gradient("photometric_loss", lambda r: {"img": _img(r, 2), "src": _img(r, 2), "d": r.uniform(-3, 3, (1, 1, 8, 8))},
                  _photo_grad)


def _census_grad(t):
    rec, _ = ph.warp_horizontal(t["src"], t["d"])
    return ls.census_loss(t["img"], rec, torch.zeros_like(t["d"]))


register_gradient("census_loss", lambda r: {"img": _img(r), "src": _img(r), "d": r.uniform(-3, 3, (1, 1, 8, 8))}, _census_grad)
register_gradient("smoothness_loss", lambda r: {"d": r.normal(size=(1, 1, 8, 8)), "img": _img(r, 2)},
                  lambda t: ls.smoothness_loss(t["d"], t["img"]))


def _sup_grad(t):
    gt = torch.linspace(-4, 4, 64, dtype=torch.float64).view(1, 1, 8, 8)
    valid = torch.ones_like(gt, dtype=torch.bool)
    valid[..., 0, :3] = False
    return ls.supervised_loss([t["p4"], t["p2"], t["p1"]], gt, valid, [0.5, 1.0, 2.0]).total


register_gradient("supervised_loss", lambda r: {"p4": r.normal(size=(1, 1, 2, 2)), "p2": r.normal(size=(1, 1, 4, 4)),
                                                "p1": r.normal(size=(1, 1, 8, 8))}, _sup_grad)
register_gradient("unsupervised_scale_loss",
                  lambda r: {"dl": r.uniform(-2, 2, (1, 1, 8, 8)), "dr": r.uniform(-2, 2, (1, 1, 8, 8))},
                  lambda t: ls.unsupervised_scale_loss(
                      torch.linspace(0, 1, 64, dtype=torch.float64).sin().view(1, 1, 8, 8) ** 2,
                      torch.linspace(0, 1, 64, dtype=torch.float64).cos().view(1, 1, 8, 8),
                      t["dl"], t["dr"], LossWeights(), 5.0).total)


def _pam_inputs(r):
    return {"l": _img(r, 2, 3, 6)[0], "r": _img(r, 2, 3, 6)[0], "a": r.normal(size=(1, 3, 6, 6)),
            "b": r.normal(size=(1, 3, 6, 6))}


def _pam_occ(shape):
    occ = torch.zeros(shape, dtype=torch.float64)
    occ[..., 0, 1] = 1
    return occ


register_gradient("pam_photometric", _pam_inputs,
                  lambda t: ls.pam_photometric(t["l"][None], t["r"][None], _soft_att(t["a"]), _soft_att(t["b"]),
                                               _pam_occ((1, 1, 3, 6)), _pam_occ((1, 1, 3, 6))))
register_gradient("pam_smoothness", lambda r: {"a": r.normal(size=(1, 3, 6, 6)), "b": r.normal(size=(1, 3, 6, 6))},
                  lambda t: ls.pam_smoothness(_soft_att(t["a"]), _soft_att(t["b"])))
register_gradient("pam_cycle", lambda r: {"a": r.normal(size=(1, 3, 6, 6)), "b": r.normal(size=(1, 3, 6, 6))},
                  lambda t: ls.pam_cycle(_soft_att(t["a"]), _soft_att(t["b"]), _pam_occ((1, 1, 3, 6)),
                                         _pam_occ((1, 1, 3, 6))))
register_gradient("consistency_criterion", lambda r: {"dl": r.uniform(-2, 2, (1, 1, 8, 8)), "dr": r.uniform(-2, 2, (1, 1, 8, 8))},
                  lambda t: ce_from_disparities(t["dl"], t["dr"]))


def finite_difference_check(op: GradOp, rng, h: float = 1e-6):
    """(max abs, max relative) error between autograd and central differences over all inputs.

    The relative error is normalized by the largest numeric gradient entry of each input.
    """
    arrays = op.make(rng)
    tensors = {k: torch.tensor(v, dtype=torch.float64, requires_grad=True) for k, v in arrays.items()}
    out = op.fn(tensors)
    probe = torch.as_tensor(np.random.default_rng(1).normal(size=tuple(out.shape)))
    (out * probe).sum().backward()
    worst_abs = worst_rel = 0.0
    for k, arr in arrays.items():
        analytic = tensors[k].grad.numpy().ravel() if tensors[k].grad is not None else np.zeros(arr.size)
        numeric = np.zeros(arr.size)
        flat = arr.ravel()
        for j in range(arr.size):
            vals = []
            for sgn in (1.0, -1.0):
                pert = flat.copy()
                pert[j] += sgn * h
                inp = {kk: torch.tensor(pert.reshape(arr.shape) if kk == k else vv, dtype=torch.float64)
                       for kk, vv in arrays.items()}
                with torch.no_grad():
                    vals.append(float((op.fn(inp) * probe).sum()))
            numeric[j] = (vals[0] - vals[1]) / (2 * h)
        err = float(np.abs(analytic - numeric).max())
        worst_abs = max(worst_abs, err)
        worst_rel = max(worst_rel, err / max(float(np.abs(numeric).max()), 1e-8))
    return worst_abs, worst_rel


def run_gradient_suite(seed: int = 0, names: Optional[List[str]] = None) -> List[OracleReport]:
    """Central finite differences in double precision against autograd for every differentiable op."""
    import time

    reports = []
    for name, op in GRADIENTS.items():
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        t0 = time.time()
        err_abs, err_rel = finite_difference_check(op, rng)
        reports.append(OracleReport(name, err_abs, err_rel, 1, err_rel <= GRAD_TOL, "gradient", time.time() - t0))
    return reports
