"""Small trainable conv net exposing an intermediate-feature tap, L-channel
segmentation logits, and an (L-1)-map localization/classification head.

Layout (input 3xHxW, H and W divisible by 4):
    conv1 3->16 3x3 s1 + relu   (feature tap, full resolution)
    conv2 16->32 3x3 s2 + relu
    conv3 32->64 3x3 s2 + relu
    conv4 64->64 3x3 s1 + relu
    seg_head 1x1 64->L          (segmentation logits)
    loc_head 1x1 L->L-1         (localization maps)
    agg 1x1 16->k               (feature aggregation; trained by the affinity
                                 objective, stored here for joint optimization)

Class scores are sigmoid(global mean of each localization map). Image-level
loss per class: -log(score) when present, -log(1-score) when absent.
"""

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from . import ops, tensorfile

POLY_POWER = 0.9
SCORE_CLAMP = 1e-7
HEAD_STD = 0.01

# (name, c_in, c_out, ksize, stride, pad)
BACKBONE = (
    ("conv1", 3, 16, 3, 1, 1),
    ("conv2", 16, 32, 3, 2, 1),
    ("conv3", 32, 64, 3, 2, 1),
    ("conv4", 64, 64, 3, 1, 1),
)

STEP1_PARAMS = ("conv1", "conv2", "conv3", "conv4", "loc", "agg")
STEP2_PARAMS = ("conv1", "conv2", "conv3", "conv4", "seg")


@dataclass
class Param:
    """A trainable tensor and its gradient accumulator."""
    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def of(cls, value):
        value = np.asarray(value, np.float32)
        return cls(value, np.zeros_like(value))


class MicroNetParams:
    """All trainable tensors, keyed '<layer>_w' / '<layer>_b' in fixed order."""

    def __init__(self, tensors):
        self._params = {name: Param.of(v) for name, v in tensors.items()}
        self.num_classes = self._params["seg_w"].value.shape[0]
        self.feat_channels = self._params["agg_w"].value.shape[0]

    @classmethod
    def init(cls, num_classes, feat_channels, rng):
        """He-scaled backbone, std-0.01 zero-bias heads (seg/loc/agg).

        The heads match the reference initialization; the backbone is scaled
        by fan-in because it trains from scratch here (no pretraining), which
        a flat std of 0.01 cannot support.
        """
        if num_classes < 2:
            raise ValueError("need at least background + one foreground class")
        t = {}
        for name, ci, co, k, _, _ in BACKBONE:
            std = np.sqrt(2.0 / (ci * k * k))
            t[name + "_w"] = rng.normal(0.0, std, (co, ci, k, k))
            t[name + "_b"] = np.zeros(co)
        t["seg_w"] = rng.normal(0.0, HEAD_STD, (num_classes, 64, 1, 1))
        t["seg_b"] = np.zeros(num_classes)
        t["loc_w"] = rng.normal(0.0, HEAD_STD, (num_classes - 1, num_classes, 1, 1))
        t["loc_b"] = np.zeros(num_classes - 1)
        t["agg_w"] = rng.normal(0.0, HEAD_STD, (feat_channels, 16, 1, 1))
        t["agg_b"] = np.zeros(feat_channels)
        return cls(t)

    def __getitem__(self, name):
        return self._params[name]

    def named(self):
        return list(self._params.items())

    def zero_grads(self):
        for p in self._params.values():
            p.grad[:] = 0.0

    def checksum(self, layers=None):
        """SHA-256 over the raw bytes of the selected layers' values."""
        h = hashlib.sha256()
        for name, p in self._params.items():
            if layers is None or name.rsplit("_", 1)[0] in layers:
                h.update(name.encode())
                h.update(p.value.tobytes())
        return h.hexdigest()


@dataclass
class ForwardCache:
    """Forward activations; batch axis present iff built by forward_batch."""
    image: np.ndarray
    inter: np.ndarray          # post-conv1 relu feature tap
    seg_logits: np.ndarray
    loc_maps: np.ndarray
    class_scores: np.ndarray   # sigmoid of pooled loc maps, in (0,1)
    pre: dict                  # pre-relu backbone outputs, keyed by layer
    feat: dict                 # post-relu backbone outputs, keyed by layer


def forward_batch(images, params):
    images = np.ascontiguousarray(images, np.float32)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError("forward_batch expects (N,3,H,W)")
    h, w = images.shape[2:]
    if h % 4 or w % 4:
        raise ValueError(f"spatial dims {h}x{w} must be divisible by 4")
    pre, feat = {}, {}
    x = images
    for name, _, _, _, stride, pad in BACKBONE:
        z = ops.conv2d(x, params[name + "_w"].value, params[name + "_b"].value,
                       stride=stride, pad=pad)
        pre[name] = z
        x = ops.relu(z)
        feat[name] = x
    seg = ops.conv2d(x, params["seg_w"].value, params["seg_b"].value)
    loc = ops.conv2d(seg, params["loc_w"].value, params["loc_b"].value)
    pooled = loc.mean(axis=(2, 3))
    scores = ops.sigmoid(pooled)
    return ForwardCache(images, feat["conv1"], seg, loc, scores, pre, feat)


def forward(image, params):
    """Single-image forward pass; deterministic for fixed inputs."""
    b = forward_batch(np.asarray(image, np.float32)[None], params)
    return ForwardCache(b.image[0], b.inter[0], b.seg_logits[0], b.loc_maps[0],
                        b.class_scores[0],
                        {k: v[0] for k, v in b.pre.items()},
                        {k: v[0] for k, v in b.feat.items()})


def classification_loss(scores, present, num_classes):
    """Image-level multi-label loss over foreground classes.

    scores: (L-1,) in (0,1); present: non-empty set of class ids in 1..L-1.
    Returns (loss, grad wrt scores). Scores are clamped to [1e-7, 1-1e-7]
    before the logs.
    """
    present = set(present)
    if not present:
        raise ValueError("present class set must be non-empty")
    if not present <= set(range(1, num_classes)):
        raise ValueError(f"present classes {present} outside 1..{num_classes - 1}")
    s = np.clip(np.asarray(scores, np.float32), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    mask = np.zeros(num_classes - 1, bool)
    mask[[c - 1 for c in present]] = True
    loss = float(-(np.log(s[mask]).sum() + np.log1p(-s[~mask]).sum()))
    grad = np.where(mask, -1.0 / s, 1.0 / (1.0 - s)).astype(np.float32)
    return loss, grad


def backbone_backward(grads, upstream, cache, params):
    """Chain upstream (N,64,H/4,W/4) at conv4's relu output down to conv1,
    accumulating kernel/bias grads into the dict."""
    g = upstream
    for name, _, _, _, stride, pad in reversed(BACKBONE):
        g = ops.relu_backward(g, cache.pre[name])
        below = cache.feat[prev] if (prev := _prev_layer(name)) else cache.image
        g, gk, gb = ops.conv2d_backward(g, below, params[name + "_w"].value,
                                        stride=stride, pad=pad)
        grads[name + "_w"] = grads.get(name + "_w", 0) + gk
        grads[name + "_b"] = grads.get(name + "_b", 0) + gb
    return g


def _prev_layer(name):
    names = [b[0] for b in BACKBONE]
    i = names.index(name)
    return names[i - 1] if i else None


def classification_backward(cache, params, grad_scores):
    """Gradients of the image-level loss for a batched cache.

    grad_scores: (N, L-1), already scaled by any batch weighting. Gradients
    flow through the (frozen-in-step-1) seg head into the backbone; which
    parameters actually update is the optimizer's update mask's business.
    """
    n, _, mh, mw = cache.loc_maps.shape
    scores = cache.class_scores
    gpool = grad_scores * scores * (1.0 - scores)
    gloc = np.broadcast_to(gpool[:, :, None, None] / (mh * mw),
                           cache.loc_maps.shape).astype(np.float32)
    grads = {}
    gseg, gk, gb = ops.conv2d_backward(gloc, cache.seg_logits, params["loc_w"].value)
    grads["loc_w"], grads["loc_b"] = gk, gb
    gx4, gk, gb = ops.conv2d_backward(gseg, cache.feat["conv4"], params["seg_w"].value)
    grads["seg_w"], grads["seg_b"] = gk, gb
    backbone_backward(grads, gx4, cache, params)
    return grads


def segmentation_backward(cache, params, grad_logits):
    """Gradients of a per-pixel loss on seg_logits for a batched cache."""
    grads = {}
    gx4, gk, gb = ops.conv2d_backward(grad_logits, cache.feat["conv4"],
                                      params["seg_w"].value)
    grads["seg_w"], grads["seg_b"] = gk, gb
    backbone_backward(grads, gx4, cache, params)
    return grads


def poly_lr(base_lr, t, max_iter):
    """'poly' decay: base * (1 - t/max_iter)^0.9."""
    if t > max_iter:
        raise ValueError(f"iteration {t} beyond schedule end {max_iter}")
    return base_lr * (1.0 - t / max_iter) ** POLY_POWER


def sgd_step(params, t, base_lr, max_iter, include=None):
    """params <- params - lr(t) * grad for layers in `include` (None = all)."""
    lr = np.float32(poly_lr(base_lr, t, max_iter))
    for name, p in params.named():
        if include is None or name.rsplit("_", 1)[0] in include:
            p.value -= lr * p.grad


def set_grads(params, grads):
    for name, g in grads.items():
        params[name].grad[:] = g


def save_checkpoint(params, directory):
    """One SGT1 file per parameter plus a manifest (name, file, shape)."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for name, p in params.named():
        fname = name + ".sgt"
        tensorfile.write_tensor(os.path.join(directory, fname), p.value)
        shape = "x".join(str(d) for d in p.value.shape)
        lines.append(f"{name}\t{fname}\t{shape}\n")
    with open(os.path.join(directory, "manifest.tsv"), "w") as f:
        f.writelines(lines)


def load_checkpoint(directory):
    manifest = os.path.join(directory, "manifest.tsv")
    tensors = {}
    with open(manifest) as f:
        for line in f:
            name, fname, shape = line.rstrip("\n").split("\t")
            t = tensorfile.read_tensor(os.path.join(directory, fname))
            expect = tuple(int(d) for d in shape.split("x"))
            if t.shape != expect:
                raise ValueError(f"{fname}: shape {t.shape} != manifest {expect}")
            tensors[name] = t
    return MicroNetParams(tensors)
