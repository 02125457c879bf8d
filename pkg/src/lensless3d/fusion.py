"""All-in-focus fusion, depth map extraction, and quality metrics.

A reconstructed plane stack is collapsed to a single image by picking,
per pixel, the plane with the largest local contrast (variance of the
grayscale Laplacian in a window). A denoiser hook lets callers smooth
each plane before the contrast analysis.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class FusionResult:
    all_in_focus: np.ndarray     # C x rows x cols
    depth_map_mm: np.ndarray     # rows x cols
    plane_index_map: np.ndarray  # rows x cols of ints in [0, D)
    confidence: np.ndarray       # rows x cols winning contrast values


@dataclass(frozen=True)
class EvalReport:
    ssim: float
    depth_accuracy: float
    depth_odds_ratio: float
    per_plane_mse: tuple


def gaussian_plane_denoiser(sigma=1.0):
    """Simple smoothing denoiser plug-in (per channel Gaussian blur)."""
    def denoise(plane):
        return np.stack([ndimage.gaussian_filter(ch, sigma) for ch in plane])
    return denoise


def _grayscale(plane):
    return plane.mean(axis=0) if plane.ndim == 3 else plane


def local_contrast(image, window):
    """Variance of the Laplacian in a window; the focus measure."""
    lap = ndimage.laplace(image, mode="reflect")
    mean = ndimage.uniform_filter(lap, size=window, mode="reflect")
    sq = ndimage.uniform_filter(lap * lap, size=window, mode="reflect")
    return np.maximum(sq - mean * mean, 0.0)


def local_contrast_fuse(planes, window=9, denoiser=None):
    """Fuse a plane stack into an all-in-focus image and a depth map.

    Ties in the contrast argmax go to the nearer plane (lower index).
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    stack = planes.planes
    D, C, rows, cols = stack.shape
    if denoiser is not None:
        stack = np.stack([denoiser(stack[i]) for i in range(D)])
    contrast = np.stack(
        [local_contrast(_grayscale(stack[i]), window) for i in range(D)])
    idx = np.argmax(contrast, axis=0)  # first max -> nearer plane on ties
    fused = np.take_along_axis(
        stack, idx[None, None].repeat(C, axis=1), axis=0)[0]
    conf = np.take_along_axis(contrast, idx[None], axis=0)[0]
    if planes.depths is not None:
        depth_mm = planes.depths.depths_z_mm[idx]
    else:
        depth_mm = idx.astype(float)
    return FusionResult(all_in_focus=fused, depth_map_mm=depth_mm,
                        plane_index_map=idx, confidence=conf)


def _gaussian_window(taps=11, sigma=1.5):
    x = np.arange(taps) - (taps - 1) / 2.0
    w = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def ssim(image, reference, dynamic_range=None):
    """Single-scale SSIM with an 11-tap Gaussian window (sigma = 1.5).

    Stability constants use the reference's dynamic range (its max by
    default). Multi-channel inputs are averaged over channels.
    """
    img = np.asarray(image, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if img.shape != ref.shape:
        raise ValueError(f"shape mismatch {img.shape} vs {ref.shape}")
    if img.ndim == 2:
        img, ref = img[None], ref[None]
    if dynamic_range is None:
        dynamic_range = float(ref.max())
    if dynamic_range <= 0:
        dynamic_range = 1.0
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    win = _gaussian_window()

    def blur(x):
        out = ndimage.correlate1d(x, win, axis=0, mode="reflect")
        return ndimage.correlate1d(out, win, axis=1, mode="reflect")

    vals = []
    for a, b in zip(img, ref):
        mu_a, mu_b = blur(a), blur(b)
        var_a = blur(a * a) - mu_a ** 2
        var_b = blur(b * b) - mu_b ** 2
        cov = blur(a * b) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def depth_accuracy(predicted, truth, valid_mask=None):
    """Fraction of valid pixels assigned the correct depth plane."""
    pred = np.asarray(predicted)
    tru = np.asarray(truth)
    if pred.shape != tru.shape:
        raise ValueError("prediction and truth shapes differ")
    if valid_mask is None:
        valid_mask = np.ones(pred.shape, dtype=bool)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    n = int(valid_mask.sum())
    if n == 0:
        raise ValueError("no valid pixels to score")
    correct = int(np.count_nonzero((pred == tru) & valid_mask))
    return correct / n


def depth_odds_ratio(predicted, truth, valid_mask=None):
    """Correct-to-incorrect pixel ratio; inf when everything is correct."""
    acc = depth_accuracy(predicted, truth, valid_mask)
    return np.inf if acc == 1.0 else acc / (1.0 - acc)


def low_intensity_mask(all_in_focus, threshold_frac=0.05):
    """Pixels bright enough for depth to be trusted (>= 5% of image max)."""
    gray = _grayscale(np.asarray(all_in_focus, dtype=float))
    return gray >= threshold_frac * max(gray.max(), np.finfo(float).tiny)


def evaluate(recon_planes, truth_planes, truth_index_map, window=9,
             denoiser=None):
    """Full evaluation: fuse the reconstruction and score it against truth."""
    result = local_contrast_fuse(recon_planes, window=window, denoiser=denoiser)
    truth_aif = truth_planes.planes.sum(axis=0)
    valid = low_intensity_mask(truth_aif) & (np.asarray(truth_index_map) >= 0)
    acc = depth_accuracy(result.plane_index_map, truth_index_map, valid)
    odds = depth_odds_ratio(result.plane_index_map, truth_index_map, valid)
    quality = ssim(result.all_in_focus, truth_aif)
    mse = tuple(
        float(np.mean((recon_planes.planes[i] - truth_planes.planes[i]) ** 2))
        for i in range(truth_planes.num_planes))
    return EvalReport(ssim=quality, depth_accuracy=acc,
                      depth_odds_ratio=odds, per_plane_mse=mse), result
