"""Otsu binarization and edge-preserving guided filtering, including the
backward pass of the filter treated as a trainable linear layer.

The filter output at pixel p is alpha_p * I_p + beta_p, where alpha/beta are
window-averaged local regression coefficients of the input against the guide.
All window means divide by the in-bounds pixel count, so the filter's implied
kernel rows sum to 1 exactly and constants pass through unchanged.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import ops
from .affinity import LocalizationMaps

HIST_BINS = 256

LUMA = np.array([0.299, 0.587, 0.114], np.float32)


class OtsuResult(NamedTuple):
    threshold: float
    binary: np.ndarray      # float32 {0,1}, binary = (map > threshold)
    degenerate: bool        # constant input: no valid split, all-zero binary


class GuidedFilterResult(NamedTuple):
    output: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


@dataclass
class RefineResult:
    maps: np.ndarray            # (|Z|, H, W) after the final iteration
    first_pass: np.ndarray      # (|Z|, H, W) after one iteration
    binaries: np.ndarray        # (|Z|, H, W) Otsu binarizations that seeded it
    thresholds: np.ndarray      # per-class Otsu thresholds
    degenerate: list            # per-class flags
    all_degenerate: bool
    history: list               # per-iteration maps when recording was requested


def otsu_threshold(values):
    """Histogram threshold maximizing between-class variance.

    A 256-bin histogram spans [min, max]; candidate t splits bins {<=t} from
    {>t}; ties break to the lowest bin; the returned scalar threshold is bin
    t's upper edge so that `values > threshold` reproduces the split.
    Constant input returns (value, all-zero binary, degenerate=True).
    """
    v = np.asarray(values, np.float32)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return OtsuResult(lo, np.zeros_like(v), True)
    hist, _ = np.histogram(v, bins=HIST_BINS, range=(lo, hi))
    p = hist.astype(np.float64) / hist.sum()
    levels = np.arange(HIST_BINS, dtype=np.float64)
    w0 = np.cumsum(p)
    mu_cum = np.cumsum(p * levels)
    mu_total = mu_cum[-1]
    valid = (w0 > 0) & (w0 < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        between = np.where(valid, (mu_total * w0 - mu_cum) ** 2 / (w0 * (1 - w0)), 0.0)
    t = int(np.argmax(between))
    threshold = lo + (t + 1) * (hi - lo) / HIST_BINS
    return OtsuResult(threshold, (v > threshold).astype(np.float32), False)


def _window_stats(guide, radius, eps):
    mean_i = ops.box_filter(guide, radius)
    var_i = ops.box_filter(guide * guide, radius) - mean_i * mean_i
    return mean_i, var_i + np.float32(eps)


def guided_filter(guide, src, radius, eps):
    """Edge-preserving filtering of src steered by guide (both (H,W) float).

    Per window j: a_j = cov_j(guide, src) / (var_j(guide) + eps),
    b_j = mean_j(src) - a_j * mean_j(guide); the output is the window average
    of a (alpha) times the guide plus the window average of b (beta).
    """
    guide = np.asarray(guide, np.float32)
    src = np.asarray(src, np.float32)
    if guide.shape != src.shape or guide.ndim != 2:
        raise ValueError("guide and input must be equal-shape (H,W)")
    r = int(radius)
    if r < 1:
        raise ValueError("window radius must be >= 1")
    if r > min(guide.shape):
        raise ValueError(f"radius {r} exceeds image extent {min(guide.shape)}")
    mean_i, v = _window_stats(guide, r, eps)
    mean_s = ops.box_filter(src, r)
    cov = ops.box_filter(guide * src, r) - mean_i * mean_s
    a = cov / v
    b = mean_s - a * mean_i
    alpha = ops.box_filter(a, r)
    beta = ops.box_filter(b, r)
    return GuidedFilterResult(alpha * guide + beta, alpha, beta)


def _box_adjoint(y, radius, counts):
    # transpose of the clipped-window box mean: sum_j 1/N_j over windows at j
    return ops.box_filter(y / counts, radius) * counts


def guided_filter_backward(upstream, guide, radius, eps,
                           grad_alpha=None, grad_beta=None):
    """Backward pass of guided_filter as a linear layer in its input.

    Coefficient gradients accumulate: grad_alpha += guide * upstream and
    grad_beta += upstream (pass existing buffers to accumulate in place).
    grad_input is the exact transpose of the (input -> output) linear map,
    with the kernel's dependence on the guide treated as fixed.
    """
    guide = np.asarray(guide, np.float32)
    u = np.asarray(upstream, np.float32)
    if guide.shape != u.shape:
        raise ValueError("upstream and guide must have equal shapes")
    r = int(radius)
    h, w = guide.shape
    counts = ops.box_counts(h, w, r)

    ga_inc = guide * u
    gb_inc = u
    grad_alpha = ga_inc if grad_alpha is None else grad_alpha + ga_inc
    grad_beta = gb_inc.copy() if grad_beta is None else grad_beta + gb_inc

    mean_i, v = _window_stats(guide, r, eps)
    ga = _box_adjoint(ga_inc, r, counts)       # onto per-window a
    gb = _box_adjoint(gb_inc, r, counts)       # onto per-window b
    gq = gb.copy()                             # onto mean_j(src), from b
    ga = ga - mean_i * gb                      # b = mean(src) - a*mean(guide)
    gp = ga / v                                # onto mean_j(guide*src)
    gq -= mean_i * gp
    grad_input = guide * _box_adjoint(gp, r, counts) + _box_adjoint(gq, r, counts)
    return grad_alpha, grad_beta, grad_input


def luma(image):
    """Scalar guide from an RGB image: 0.299 R + 0.587 G + 0.114 B."""
    image = np.asarray(image, np.float32)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("luma expects (3,H,W)")
    return np.tensordot(LUMA, image, axes=([0], [0]))


def self_guided_refine(image, refined, iterations, radius, eps, record=False):
    """Binarize each refined map onceter Otsu), then repeatedly guided-filter
    it with the image's own grayscale as guide.

    refined: LocalizationMaps at any grid size; maps are upsampled to the
    image resolution first. Returns continuous maps; re-thresholding is the
    label-assignment step's job.
    """
    image = np.asarray(image, np.float32)
    if iterations < 1:
        raise ValueError("need at least one refinement iteration")
    h, w = image.shape[1:]
    guide = luma(image)
    m = refined.maps.shape[0]
    out = np.zeros((m, h, w), np.float32)
    first = np.zeros_like(out)
    binaries = np.zeros_like(out)
    thresholds = np.zeros(m, np.float32)
    degenerate = []
    history = []
    for c in range(m):
        up = ops.resize_bilinear(refined.maps[c], h, w)
        otsu = otsu_threshold(up)
        thresholds[c] = otsu.threshold
        degenerate.append(otsu.degenerate)
        binaries[c] = otsu.binary
        g = otsu.binary
        steps = []
        for it in range(iterations):
            g = guided_filter(guide, g, radius, eps).output
            if it == 0:
                first[c] = g
            if record:
                steps.append(g.copy())
        out[c] = g
        if record:
            history.append(steps)
    return RefineResult(out, first, binaries, thresholds, degenerate,
                        all(degenerate), history)
