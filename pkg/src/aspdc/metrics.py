"""PSNR, SSIM, and difference-map reporting.

PSNR uses peak 1.0 in the float domain; identical images yield the "inf"
marker. SSIM runs on Rec.601 luma with the standard 11x11 Gaussian
window (sigma 1.5, K1=0.01, K2=0.03, L=1), averaging local scores over
valid window positions only. Difference-map statistics (mean and variance
of |a-b|) are reported on the 0-255 scale.
"""

import csv
import math

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    pass


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image shapes disagree: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10*log10(1 / MSE); math.inf when the images are identical."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return math.inf
    return float(10.0 * math.log10(1.0 / mse))


def rec601_luma(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[..., 0] * 0.299 + img[..., 1] * 0.587 + img[..., 2] * 0.114


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def _local_means(img, win):
    k = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", view, win)


def ssim(a, b):
    """Mean local SSIM over valid window positions, on luma."""
    a, b = _check_pair(a, b)
    ya, yb = rec601_luma(a), rec601_luma(b)
    if min(ya.shape) < SSIM_WINDOW:
        raise MetricError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window: {ya.shape}")
    win = gaussian_window()
    mu_a = _local_means(ya, win)
    mu_b = _local_means(yb, win)
    var_a = _local_means(ya * ya, win) - mu_a**2
    var_b = _local_means(yb * yb, win) - mu_b**2
    cov = _local_means(ya * yb, win) - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    score = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    return float(score.mean())


def diff_stats(a, b):
    """(mean, variance) of |a - b| on the 0-255 scale."""
    a, b = _check_pair(a, b)
    diff = np.abs(a - b) * 255.0
    return float(diff.mean()), float(diff.var())


class MetricReport:
    """Per-image rows of (psnr, ssim, diff mean, diff variance) plus
    aggregate means; aggregates are plain means of the rows."""

    COLUMNS = ("name", "psnr_db", "ssim", "diff_mean", "diff_var")

    def __init__(self):
        self.rows = []

    def add(self, name, a, b):
        m, v = diff_stats(a, b)
        self.rows.append({"name": name, "psnr_db": psnr(a, b), "ssim": ssim(a, b),
                          "diff_mean": m, "diff_var": v})

    def aggregate(self):
        if not self.rows:
            raise MetricError("no rows to aggregate")
        agg = {"name": "aggregate"}
        for key in self.COLUMNS[1:]:
            agg[key] = float(np.mean([r[key] for r in self.rows]))
        return agg

    @staticmethod
    def _fmt(value):
        if isinstance(value, float):
            return "inf" if math.isinf(value) else f"{value:.6f}"
        return str(value)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows + [self.aggregate()]:
                writer.writerow([self._fmt(row[c]) for c in self.COLUMNS])
        return path
