"""Full-reference image quality metrics on (3, H, W) arrays in [0, max_val].

PSNR: inputs clamped to [0, max_val], MSE in float64 over all channels; identical
images hit the 99 dB cap. SSIM: single scale on Rec.601 luma, 11x11 Gaussian window
(sigma 1.5), K1=0.01, K2=0.03, means over the valid (unpadded) window positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

PSNR_CAP_DB = 99.0
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 3 or a.shape[0] != 3:
        raise DimensionError(f"expected (3,H,W) images, got {a.shape}")


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    _check_pair(a, b)
    if max_val <= 0:
        raise ConfigurationError(f"max_val must be positive, got {max_val}")
    a64 = np.clip(a.astype(np.float64), 0.0, max_val)
    b64 = np.clip(b.astype(np.float64), 0.0, max_val)
    mse = np.mean((a64 - b64) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(max_val * max_val / mse))


def luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma from an RGB (3,H,W) image, in float64."""
    r, g, b = img.astype(np.float64)
    return 0.299 * r + 0.587 * g + 0.114 * b


def _gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g1 = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g1, g1)
    return win / win.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    views = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", views, win, optimize=True)


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    _check_pair(a, b)
    if a.shape[1] < _SSIM_WINDOW or a.shape[2] < _SSIM_WINDOW:
        raise ConfigurationError(
            f"ssim needs H,W >= {_SSIM_WINDOW}, got {a.shape[1]}x{a.shape[2]}")
    x = luma(np.clip(a.astype(np.float64), 0.0, max_val))
    y = luma(np.clip(b.astype(np.float64), 0.0, max_val))
    win = _gaussian_window()
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    var_x = _filter_valid(x * x, win) - mu_x ** 2
    var_y = _filter_valid(y * y, win) - mu_y ** 2
    cov = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    ids: tuple
    psnr_db: tuple
    ssim: tuple

    @property
    def mean_psnr_db(self) -> float:
        return float(np.mean(np.asarray(self.psnr_db, dtype=np.float64)))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(np.asarray(self.ssim, dtype=np.float64)))

    def __len__(self):
        return len(self.ids)


def evaluate_pairs(pairs) -> MetricReport:
    """pairs: iterable of (id, image_a, image_b). Order is preserved."""
    ids, psnrs, ssims = [], [], []
    for pair_id, a, b in pairs:
        ids.append(str(pair_id))
        psnrs.append(psnr(a, b))
        ssims.append(ssim(a, b))
    return MetricReport(tuple(ids), tuple(psnrs), tuple(ssims))


def report_lines(report: MetricReport, label_a: str = "a", label_b: str = "b"):
    """Delimited per-image rows followed by key = value summary records."""
    lines = [f"# per-image metrics ({label_a} vs {label_b})",
             "# id psnr_db ssim"]
    for pair_id, p, s in zip(report.ids, report.psnr_db, report.ssim):
        lines.append(f"{pair_id} {p:.6f} {s:.6f}")
    lines.append("# summary")
    lines.append(f"count = {len(report)}")
    lines.append(f"mean_psnr_db = {report.mean_psnr_db:.6f}")
    lines.append(f"mean_ssim = {report.mean_ssim:.6f}")
    return lines
