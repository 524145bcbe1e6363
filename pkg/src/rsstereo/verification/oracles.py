"""Naive reference implementations written with explicit Python loops.

Nothing here imports the main implementation; arrays are plain numpy,
images are ``H x W`` (single channel) or ``C x H x W`` and every quantity is
computed pixel by pixel straight from its definition.
"""
from __future__ import annotations

import math

import numpy as np


def warp(src, d):
    """src C x H x W, d H x W -> (out C x H x W, oob H x W)."""
    C, H, W = src.shape
    out = np.zeros_like(src, dtype=np.float64)
    oob = np.zeros((H, W), bool)
    for y in range(H):
        for x in range(W):
            p = x - d[y, x]
            if p < 0 or p > W - 1:
                oob[y, x] = True
                continue
            x0 = math.floor(p)
            f = p - x0
            for c in range(C):
                v = (1 - f) * src[c, y, x0]
                if x0 + 1 <= W - 1:
                    v += f * src[c, y, x0 + 1]
                out[c, y, x] = v
    return out, oob


def _reflect(i, n):
    if i < 0:
        return -i
    if i > n - 1:
        return 2 * (n - 1) - i
    return i


def ssim(a, b, window=3, c1=0.01 ** 2, c2=0.03 ** 2):
    """a, b C x H x W -> H x W, channel-averaged, reflect-padded box windows."""
    C, H, W = a.shape
    r = window // 2
    out = np.zeros((H, W))
    n = window * window
    for y in range(H):
        for x in range(W):
            acc = 0.0
            for c in range(C):
                sa = sb = saa = sbb = sab = 0.0
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        yy, xx = _reflect(y + dy, H), _reflect(x + dx, W)
                        va, vb = a[c, yy, xx], b[c, yy, xx]
                        sa += va
                        sb += vb
                        saa += va * va
                        sbb += vb * vb
                        sab += va * vb
                ma, mb = sa / n, sb / n
                va_ = saa / n - ma * ma
                vb_ = sbb / n - mb * mb
                cov = sab / n - ma * mb
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va_ + vb_ + c2))
            out[y, x] = acc / C
    return out


def ssim_constant(p, q, c1=0.01 ** 2):
    """SSIM of two constant images with levels p and q (variances vanish)."""
    return (2 * p * q + c1) / (p * p + q * q + c1)


def _neighbours(img, y, x, patch):
    H, W = img.shape
    r = patch // 2
    vals = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == 0 and dx == 0:
                continue
            yy = min(max(y + dy, 0), H - 1)
            xx = min(max(x + dx, 0), W - 1)
            vals.append(img[yy, xx])
    return vals


def census(img, patch=7):
    """img H x W -> (codes H x W x K bool, valid H x W)."""
    H, W = img.shape
    K = patch * patch - 1
    codes = np.zeros((H, W, K), bool)
    valid = np.zeros((H, W), bool)
    r = patch // 2
    for y in range(H):
        for x in range(W):
            for k, v in enumerate(_neighbours(img, y, x, patch)):
                codes[y, x, k] = v < img[y, x]
            valid[y, x] = r <= y < H - r and r <= x < W - r
    return codes, valid


def soft_census(img, patch=7, c=1e-2):
    H, W = img.shape
    out = np.zeros((H, W, patch * patch - 1))
    for y in range(H):
        for x in range(W):
            for k, v in enumerate(_neighbours(img, y, x, patch)):
                diff = v - img[y, x]
                out[y, x, k] = diff / math.sqrt(diff * diff + c)
    return out


def hamming(a, b):
    H, W, K = a.shape
    out = np.zeros((H, W), int)
    for y in range(H):
        for x in range(W):
            n = 0
            for k in range(K):
                if bool(a[y, x, k]) != bool(b[y, x, k]):
                    n += 1
            out[y, x] = n
    return out


def soft_hamming(a, b):
    H, W, K = a.shape
    out = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            out[y, x] = 0.5 * sum(abs(a[y, x, k] - b[y, x, k]) for k in range(K))
    return out


def charbonnier(x, eps=1e-3, alpha=0.45):
    return math.pow(x * x + eps * eps, alpha)


def gradients(img):
    """img H x W -> (gx, gy) with doubled one-sided differences on the border."""
    H, W = img.shape
    gx = np.zeros((H, W))
    gy = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            if x == 0:
                gx[y, x] = 2 * (img[y, 1] - img[y, 0])
            elif x == W - 1:
                gx[y, x] = 2 * (img[y, W - 1] - img[y, W - 2])
            else:
                gx[y, x] = img[y, x + 1] - img[y, x - 1]
            if y == 0:
                gy[y, x] = 2 * (img[1, x] - img[0, x])
            elif y == H - 1:
                gy[y, x] = 2 * (img[H - 1, x] - img[H - 2, x])
            else:
                gy[y, x] = img[y + 1, x] - img[y - 1, x]
    return gx, gy


def _sample_row(row, p):
    W = len(row)
    if p < 0 or p > W - 1:
        return 0.0
    x0 = math.floor(p)
    f = p - x0
    v = (1 - f) * row[x0]
    if x0 + 1 <= W - 1:
        v += f * row[x0 + 1]
    return v


def concat_volume(fl, fr, cands):
    """fl, fr C x H x W -> 2C x D x H x W."""
    C, H, W = fl.shape
    out = np.zeros((2 * C, len(cands), H, W))
    for i, d in enumerate(cands):
        for y in range(H):
            for x in range(W):
                for c in range(C):
                    out[c, i, y, x] = fl[c, y, x]
                    out[C + c, i, y, x] = _sample_row(fr[c, y], x - d)
    return out


def gwc_volume(fl, fr, cands, groups):
    C, H, W = fl.shape
    per = C // groups
    out = np.zeros((groups, len(cands), H, W))
    for g in range(groups):
        for i, d in enumerate(cands):
            for y in range(H):
                for x in range(W):
                    s = 0.0
                    for c in range(g * per, (g + 1) * per):
                        s += fl[c, y, x] * _sample_row(fr[c, y], x - d)
                    out[g, i, y, x] = s / per
    return out


def _softmax_neg(costs):
    m = min(costs)
    e = [math.exp(-(c - m)) for c in costs]
    z = sum(e)
    return [v / z for v in e]


def soft_argmax(cost, cands):
    """cost D x H x W -> H x W."""
    D, H, W = cost.shape
    out = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            p = _softmax_neg([cost[i, y, x] for i in range(D)])
            out[y, x] = sum(p[i] * cands[i] for i in range(D))
    return out


def uncertainty(cost, cands):
    D, H, W = cost.shape
    out = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            p = _softmax_neg([cost[i, y, x] for i in range(D)])
            mean = sum(p[i] * cands[i] for i in range(D))
            var = sum(p[i] * (cands[i] - mean) ** 2 for i in range(D))
            out[y, x] = math.sqrt(max(var, 1e-12))
    return out


def stage_bounds(dhat, sigma, s, eps):
    """Pre-upsampling next-stage bounds from the formula, before any clamping."""
    H, W = dhat.shape
    lo = np.zeros((H, W))
    hi = np.zeros((H, W))
    for y in range(H):
        for x in range(W):
            half = (s + 1) * sigma[y, x] + eps
            lo[y, x] = dhat[y, x] - half
            hi[y, x] = dhat[y, x] + half
    return lo, hi


def candidates(dmin, dmax, n):
    return [dmin + k * (dmax - dmin) / (n - 1) for k in range(n)]


def pam_disparity(att):
    """att H x W x W -> H x W disparity (own column minus expected matched column)."""
    H, W, _ = att.shape
    out = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            out[i, j] = j - sum(k * att[i, j, k] for k in range(W))
    return out


def fb_occlusion(df, db, tau):
    H, W = df.shape
    out = np.zeros((H, W), bool)
    for y in range(H):
        for x in range(W):
            p = x - df[y, x]
            if p < 0 or p > W - 1:
                out[y, x] = True
                continue
            r = df[y, x] + _sample_row(db[y], p)
            out[y, x] = r * r >= tau
    return out


def photometric(img, rec, occ, alpha=0.85, window=3):
    """img, rec C x H x W; occ H x W bool."""
    C, H, W = img.shape
    keep = (~occ).astype(np.float64)
    a = img * keep
    b = rec * keep
    s = ssim(a, b, window)
    total = 0.0
    n = 0
    for y in range(H):
        for x in range(W):
            if occ[y, x]:
                continue
            l1 = sum(abs(a[c, y, x] - b[c, y, x]) for c in range(C)) / C
            total += alpha * (1 - s[y, x]) / 2 + (1 - alpha) * l1
            n += 1
    return total / n if n else 0.0


def census_loss(img, rec, occ, patch=7, c=1e-2, eps=1e-3, alpha=0.45):
    """img, rec H x W (single channel)."""
    keep = (~occ).astype(np.float64)
    sa = soft_census(img * keep, patch, c)
    sb = soft_census(rec * keep, patch, c)
    d = soft_hamming(sa, sb)
    H, W = img.shape
    total = 0.0
    n = 0
    for y in range(H):
        for x in range(W):
            if not occ[y, x]:
                total += charbonnier(d[y, x], eps, alpha)
                n += 1
    return total / n if n else 0.0


def smoothness(d, img):
    """d H x W, img C x H x W."""
    gdx, gdy = gradients(d)
    C, H, W = img.shape
    gis = [gradients(img[c]) for c in range(C)]
    total = 0.0
    for y in range(H):
        for x in range(W):
            ix = sum(abs(g[0][y, x]) for g in gis) / C
            iy = sum(abs(g[1][y, x]) for g in gis) / C
            total += abs(gdx[y, x]) * math.exp(-ix) + abs(gdy[y, x]) * math.exp(-iy)
    return total / (H * W)


def smooth_l1(v):
    a = abs(v)
    return 0.5 * v * v if a < 1 else a - 0.5


def supervised(preds, gts, valids, weights):
    """Per-scale lists of H_j x W_j arrays (gt already at each scale)."""
    total = 0.0
    for p, g, v, w in zip(preds, gts, valids, weights):
        s = 0.0
        n = 0
        for y in range(p.shape[0]):
            for x in range(p.shape[1]):
                if v[y, x]:
                    s += smooth_l1(p[y, x] - g[y, x])
                    n += 1
        total += w * (s / n if n else 0.0)
    return total


def pam_occlusion(att_other_to_ref, thr):
    """att[i, k, j]: other-view pixel k to reference column j; occluded if column mass <= thr."""
    H, W, _ = att_other_to_ref.shape
    out = np.zeros((H, W), bool)
    for i in range(H):
        for j in range(W):
            out[i, j] = sum(att_other_to_ref[i, k, j] for k in range(W)) <= thr
    return out


def attention_reconstruct(att, src):
    """att H x W x W, src C x H x W."""
    C, H, W = src.shape
    out = np.zeros((C, H, W))
    for c in range(C):
        for i in range(H):
            for j in range(W):
                out[c, i, j] = sum(att[i, j, k] * src[c, i, k] for k in range(W))
    return out


def _masked_l1(img, rec, occ):
    C, H, W = img.shape
    s = 0.0
    n = 0
    for i in range(H):
        for j in range(W):
            if not occ[i, j]:
                s += sum(abs(img[c, i, j] - rec[c, i, j]) for c in range(C)) / C
                n += 1
    return s / n if n else 0.0


def pam_photometric(left, right, att_rl, att_lr, occ_l, occ_r):
    return (_masked_l1(left, attention_reconstruct(att_rl, right), occ_l)
            + _masked_l1(right, attention_reconstruct(att_lr, left), occ_r))


def pam_smoothness(att_rl, att_lr):
    total = 0.0
    for m in (att_rl, att_lr):
        H, W, _ = m.shape
        v = [abs(m[i, j, k] - m[i + 1, j, k]) for i in range(H - 1) for j in range(W) for k in range(W)]
        d = [abs(m[i, j, k] - m[i, j + 1, k + 1]) for i in range(H) for j in range(W - 1) for k in range(W - 1)]
        total += sum(v) / len(v) + sum(d) / len(d)
    return total


def pam_cycle(att_rl, att_lr, occ_l, occ_r):
    total = 0.0
    for first, second, occ in ((att_rl, att_lr, occ_l), (att_lr, att_rl, occ_r)):
        H, W, _ = first.shape
        s = 0.0
        n = 0
        for i in range(H):
            for j in range(W):
                if occ[i, j]:
                    continue
                row = 0.0
                for jj in range(W):
                    comp = sum(first[i, j, k] * second[i, k, jj] for k in range(W))
                    row += abs(comp - (1.0 if jj == j else 0.0))
                s += row / W
                n += 1
        total += s / n if n else 0.0
    return total


def ce(dl, dr):
    """dl, dr H x W; bidirectional mean residual with out-of-frame pixels dropped."""
    total = 0.0
    for a, b in ((dl, dr), (dr, dl)):
        H, W = a.shape
        s = 0.0
        n = 0
        for y in range(H):
            for x in range(W):
                p = x - a[y, x]
                if p < 0 or p > W - 1:
                    continue
                s += abs(a[y, x] + _sample_row(b[y], p))
                n += 1
        total += s / n if n else 0.0
    return total


def epe(pred, gt, mask):
    s = 0.0
    n = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            if mask[y, x] and not math.isnan(gt[y, x]):
                s += abs(pred[y, x] - gt[y, x])
                n += 1
    return s / n


def d1(pred, gt, mask):
    bad = 0
    n = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            if mask[y, x] and not math.isnan(gt[y, x]):
                e = abs(pred[y, x] - gt[y, x])
                if e > 3 and e > 0.05 * abs(gt[y, x]):
                    bad += 1
                n += 1
    return 100.0 * bad / n


def _linear_weights(n_in, n_out, i):
    """Corner-aligned linear interpolation taps for output index ``i``."""
    if n_in == 1 or n_out == 1:
        return [(0, 1.0)]
    p = i * (n_in - 1) / (n_out - 1)
    i0 = min(int(math.floor(p)), n_in - 1)
    f = p - i0
    taps = [(i0, 1 - f)]
    if f > 0 and i0 + 1 < n_in:
        taps.append((i0 + 1, f))
    return taps


def upsample_volume(vol, size):
    """vol F x D x H x W -> F x D' x H' x W' by separable corner-aligned linear interpolation."""
    Fc, D, H, W = vol.shape
    D2, H2, W2 = size
    out = np.zeros((Fc, D2, H2, W2))
    for f in range(Fc):
        for a in range(D2):
            for b in range(H2):
                for c in range(W2):
                    v = 0.0
                    for ia, wa in _linear_weights(D, D2, a):
                        for ib, wb in _linear_weights(H, H2, b):
                            for ic, wc in _linear_weights(W, W2, c):
                                v += wa * wb * wc * vol[f, ia, ib, ic]
                    out[f, a, b, c] = v
    return out


def fuse(coarse, fine, alpha):
    """``alpha * up(coarse) + (1 - alpha) * fine`` with one alpha per feature channel."""
    up = upsample_volume(coarse, fine.shape[1:])
    out = np.zeros_like(fine)
    for idx in np.ndindex(*fine.shape):
        c = idx[0]
        out[idx] = alpha[c] * up[idx] + (1 - alpha[c]) * fine[idx]
    return out
