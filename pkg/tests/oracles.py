"""Independent reference implementations the real code is tested against.

Everything here is deliberately slow and literal: plain Python loops, 64-bit
accumulation, no shared helpers with the package. If a fast path and one of
these disagree, the fast path is wrong.
"""

import math

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, dilation=1, padding=0):
    """Direct sextuple-loop convolution (cross-correlation), float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, c_in, h, wd = x.shape
    c_out, c_in_w, kh, kw = w.shape
    assert c_in == c_in_w
    xp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    h_out = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    w_out = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for ni in range(n):
        for co in range(c_out):
            for oy in range(h_out):
                for ox in range(w_out):
                    acc = 0.0
                    for ci in range(c_in):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride + ky * dilation
                                ix = ox * stride + kx * dilation
                                acc += xp[ni, ci, iy, ix] * w[co, ci, ky, kx]
                    out[ni, co, oy, ox] = acc
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(1, c_out, 1, 1)
    return out


def rel_err(a, b, floor=1e-8):
    """max |a-b| scaled by the larger magnitude (with an absolute floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def fd_gradients(loss_fn, arrays, h=1e-3, sample_limit=None, sample_seed=0):
    """Central-difference gradients of a scalar loss w.r.t. float64 arrays.

    loss_fn takes no arguments and reads the arrays in place, so the caller
    hands in the exact storage the model computes from.  Returns one
    (flat_indices, fd_values) pair per array; with sample_limit set, at most
    that many entries per array are probed (deterministic choice), which keeps
    whole-model checks inside their runtime budget.
    """
    out = []
    pick = np.random.default_rng(sample_seed)
    for arr in arrays:
        assert arr.dtype == np.float64, "finite differences need float64 storage"
        flat = arr.reshape(-1)
        if sample_limit is not None and flat.size > sample_limit:
            idx = np.sort(pick.choice(flat.size, size=sample_limit, replace=False))
        else:
            idx = np.arange(flat.size)
        vals = np.zeros(idx.size)
        for j, i in enumerate(idx):
            keep = flat[i]
            flat[i] = keep + h
            lp = loss_fn()
            flat[i] = keep - h
            lm = loss_fn()
            flat[i] = keep
            vals[j] = (lp - lm) / (2.0 * h)
        out.append((idx, vals))
    return out


def psnr_ref(a, b, max_val=1.0, cap=99.0):
    """PSNR by explicit accumulation loops."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    total = 0.0
    count = 0
    for c in range(a.shape[0]):
        for y in range(a.shape[1]):
            for x in range(a.shape[2]):
                va = min(max(a[c, y, x], 0.0), max_val)
                vb = min(max(b[c, y, x], 0.0), max_val)
                total += (va - vb) ** 2
                count += 1
    mse = total / count
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(max_val * max_val / mse))


def _luma_ref(img):
    img = np.asarray(img, dtype=np.float64)
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def ssim_ref(a, b, max_val=1.0, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """SSIM with explicit per-window loops (valid windows only, luma plane)."""
    ya = np.clip(_luma_ref(a), 0.0, max_val)
    yb = np.clip(_luma_ref(b), 0.0, max_val)
    half = window // 2
    kern = np.zeros((window, window))
    for i in range(window):
        for j in range(window):
            kern[i, j] = math.exp(-((i - half) ** 2 + (j - half) ** 2)
                                  / (2.0 * sigma * sigma))
    kern /= kern.sum()
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    h, w = ya.shape
    vals = []
    for y in range(h - window + 1):
        for x in range(w - window + 1):
            pa = ya[y:y + window, x:x + window]
            pb = yb[y:y + window, x:x + window]
            mu_a = (kern * pa).sum()
            mu_b = (kern * pb).sum()
            var_a = (kern * pa * pa).sum() - mu_a * mu_a
            var_b = (kern * pb * pb).sum() - mu_b * mu_b
            cov = (kern * pa * pb).sum() - mu_a * mu_b
            num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
            den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
            vals.append(num / den)
    return float(np.mean(vals))
