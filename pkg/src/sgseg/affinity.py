"""Class-specific localization maps, learned pixel-pair affinity, and
random-walk refinement.

Pixels of the grid are indexed row-major. The affinity between two pixels is
exp(-||f_p - f_q||_2) over aggregated features f; its row-normalized form is
a transition matrix whose rows sum to 1. The aggregation layer is trained to
pull the transition matrix toward the image's own color-similarity matrix
(elementwise L1), so no pixel-level supervision is involved.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import ops

DIST_EPS = 1e-12  # pairwise distances below this get zero gradient


@dataclass
class LocalizationMaps:
    """Per-present-class response maps on the affinity grid (or image)."""
    maps: np.ndarray        # (|Z|, h, w) float32
    class_ids: list         # ascending foreground class indices, len |Z|


@dataclass
class AffinityMatrix:
    W: np.ndarray           # (n, n) symmetric, unit diagonal, entries in (0,1]
    T: np.ndarray           # row-normalized W; rows sum to 1


class ColorSimilarity(NamedTuple):
    M: np.ndarray           # (n, n) in [0,1], unit diagonal
    degenerate: bool        # constant image: all-ones M, guidance is useless


def select_present_maps(loc_maps_full, present, grid_h, grid_w):
    """Pick the maps of the present classes and resize them to the grid.

    loc_maps_full: (L-1, h, w), channel c-1 belongs to class c.
    """
    present = sorted(set(present))
    if not present:
        raise ValueError("present class set must be non-empty")
    full = np.asarray(loc_maps_full, np.float32)
    if max(present) > full.shape[0]:
        raise ValueError(f"class {max(present)} has no localization map")
    picked = full[[c - 1 for c in present]]
    return LocalizationMaps(ops.resize_bilinear(picked, grid_h, grid_w), present)


def aggregate_features(inter, agg_w, agg_b, grid_h, grid_w):
    """Resize the intermediate features to the grid, then 1x1-conv to k channels.

    Returns (features (k,gh,gw), resized input (C,gh,gw)); the latter is what
    the aggregation weights' gradient needs.
    """
    resized = ops.resize_bilinear(np.asarray(inter, np.float32), grid_h, grid_w)
    feats = ops.conv2d(resized, agg_w, agg_b)
    return feats, resized


def build_affinity(feats):
    """Dense pairwise affinity over the grid: W_pq = exp(-||f_p - f_q||)."""
    f = np.asarray(feats, np.float32)
    k, h, w = f.shape
    flat = f.reshape(k, h * w)
    diff = flat[:, :, None] - flat[:, None, :]
    d = np.sqrt((diff * diff).sum(axis=0))
    wmat = np.exp(-d)
    tmat = wmat / wmat.sum(axis=1, keepdims=True)
    return AffinityMatrix(wmat, tmat)


def color_similarity(image, grid_h, grid_w):
    """Pairwise visual similarity of the resized image: 1 - d/max(d).

    A perfectly constant image has no distance scale; return all ones and
    flag it degenerate.
    """
    im = ops.resize_bilinear(np.asarray(image, np.float32), grid_h, grid_w)
    flat = im.reshape(3, grid_h * grid_w)
    diff = flat[:, :, None] - flat[:, None, :]
    d = np.sqrt((diff * diff).sum(axis=0))
    dmax = d.max()
    if dmax == 0.0:
        return ColorSimilarity(np.ones_like(d), True)
    return ColorSimilarity(1.0 - d / dmax, False)


def affinity_loss(tmat, m):
    """Elementwise L1 between the transition and color-similarity matrices.

    Returns (loss, grad wrt T) -- grad entries are the signs of T - M.
    """
    tmat = np.asarray(tmat, np.float32)
    m = np.asarray(m, np.float32)
    if tmat.shape != m.shape:
        raise ValueError(f"shape mismatch {tmat.shape} vs {m.shape}")
    delta = tmat - m
    return float(np.abs(delta, dtype=np.float64).sum()), np.sign(delta)


def affinity_grad_features(grad_t, aff, feats):
    """Chain a gradient on T through row normalization and exp(-distance)
    back to the aggregated features."""
    wmat, tmat = aff.W, aff.T
    f = np.asarray(feats, np.float32)
    k, h, w = f.shape
    flat = f.reshape(k, h * w)
    rowsum = wmat.sum(axis=1, keepdims=True)
    # dL/dW: rows couple through the normalizer
    gw = (grad_t - (grad_t * tmat).sum(axis=1, keepdims=True)) / rowsum
    gd = -wmat * gw
    # distance d_pq depends on f_p and f_q; both orientations contribute
    diff = flat[:, :, None] - flat[:, None, :]
    d = np.sqrt((diff * diff).sum(axis=0))
    u = gd + gd.T
    u = np.where(d > DIST_EPS, u / np.maximum(d, DIST_EPS), 0.0).astype(np.float32)
    gf = flat * u.sum(axis=1)[None, :] - flat @ u  # u is symmetric
    return gf.reshape(k, h, w)


def affinity_loss_and_grads(inter, agg_w, agg_b, m, grid_h, grid_w):
    """Full affinity objective for one image: loss plus gradients for the
    aggregation conv parameters (gradient stops below the aggregation layer)."""
    feats, resized = aggregate_features(inter, agg_w, agg_b, grid_h, grid_w)
    aff = build_affinity(feats)
    loss, grad_t = affinity_loss(aff.T, m)
    gf = affinity_grad_features(grad_t, aff, feats)
    _, gw, gb = ops.conv2d_backward(gf, resized, agg_w)
    return loss, gw, gb


def random_walk_refine(tmat, loc):
    """Single-step propagation: stack the maps as columns, left-multiply by T.

    Output values are convex combinations of input values, so each refined
    map stays within the original map's range.
    """
    tmat = np.asarray(tmat, np.float32)
    n = tmat.shape[0]
    rowsum = tmat.sum(axis=1)
    if np.abs(rowsum - 1.0).max() > 1e-3:
        raise ValueError("transition matrix rows must sum to 1")
    m, h, w = loc.maps.shape
    if h * w != n:
        raise ValueError(f"grid {h}x{w} does not match transition size {n}")
    cols = loc.maps.reshape(m, n).T
    refined = (tmat @ cols).T.reshape(m, h, w)
    return LocalizationMaps(np.ascontiguousarray(refined), list(loc.class_ids))
