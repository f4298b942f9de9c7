"""Dense float32 array primitives: convolution with hand-chained backprop,
activations, bilinear resampling and border-aware box filtering.

All functions are pure; inputs are never mutated. Arrays use channel-first
layout (C, H, W); conv2d and relu also accept a leading batch axis (N, C, H, W).
Storage and compute are float32; box filtering accumulates its integral image
in float64 to avoid cancellation.
"""

import numpy as np

# Post-condition finite checks; disabled under `python -O`.
CHECK_FINITE = __debug__


def _f32(x):
    return np.ascontiguousarray(x, dtype=np.float32)


def _check(x):
    if CHECK_FINITE and not np.isfinite(x).all():
        raise FloatingPointError("non-finite values in operation output")
    return x


def _im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), np.float32)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols


def conv2d(x, kernels, bias, stride=1, pad=0):
    """Cross-correlate x (C_in,H,W) or (N,C_in,H,W) with kernels (C_out,C_in,kH,kW).

    Zero padding, odd kernel sizes only. Output spatial size is
    floor((H + 2*pad - kH)/stride) + 1 and must be >= 1.
    """
    x = _f32(x)
    k = _f32(kernels)
    b = _f32(bias)
    batched = x.ndim == 4
    xb = x if batched else x[None]
    if xb.ndim != 4 or k.ndim != 4:
        raise ValueError("conv2d expects (N,C,H,W) or (C,H,W) input and 4-d kernels")
    n, ci, h, w = xb.shape
    co, kci, kh, kw = k.shape
    if kci != ci:
        raise ValueError(f"kernel C_in {kci} does not match input channels {ci}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel spatial dims must be odd")
    if stride < 1 or pad < 0:
        raise ValueError("stride must be >= 1 and pad >= 0")
    if b.shape != (co,):
        raise ValueError(f"bias must have shape ({co},)")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError("kernel larger than padded input")
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    out = np.tensordot(k, cols, axes=([1, 2, 3], [1, 2, 3]))  # (co, n, oh, ow)
    out = out.transpose(1, 0, 2, 3) + b[None, :, None, None]
    out = _check(np.ascontiguousarray(out, dtype=np.float32))
    return out if batched else out[0]


def conv2d_backward(upstream, x, kernels, stride=1, pad=0):
    """Gradients of conv2d w.r.t. (input, kernels, bias), contracted with upstream.

    upstream must have the forward output's shape. Returns (grad_x, grad_k, grad_b).
    """
    x = _f32(x)
    k = _f32(kernels)
    gy = _f32(upstream)
    batched = x.ndim == 4
    xb = x if batched else x[None]
    gyb = gy if batched else gy[None]
    n, ci, h, w = xb.shape
    co, _, kh, kw = k.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if gyb.shape != (n, co, oh, ow):
        raise ValueError(f"upstream shape {gy.shape} does not match forward output")
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xb
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    gb = gyb.sum(axis=(0, 2, 3))
    gk = np.tensordot(gyb, cols, axes=([0, 2, 3], [0, 4, 5]))  # (co, ci, kh, kw)
    gcols = np.tensordot(k, gyb, axes=([0], [1]))  # (ci, kh, kw, n, oh, ow)
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                gcols[:, i, j].transpose(1, 0, 2, 3)
    gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
    gx = np.ascontiguousarray(gx, dtype=np.float32)
    return (gx if batched else gx[0]), gk.astype(np.float32), gb.astype(np.float32)


def relu(x):
    return np.maximum(_f32(x), np.float32(0.0))


def relu_backward(upstream, x):
    """Masks upstream where the forward input was <= 0."""
    return np.where(np.asarray(x) > 0, _f32(upstream), np.float32(0.0))


def sigmoid(x):
    """Elementwise 1/(1+exp(-x)), overflow-safe on both tails."""
    x = _f32(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _check(out)


def softmax_channels(x):
    """Per-pixel softmax over the channel axis of (L,H,W), max-stabilized."""
    x = _f32(x)
    if x.ndim != 3:
        raise ValueError("softmax_channels expects (L,H,W)")
    e = np.exp(x - x.max(axis=0, keepdims=True))
    return _check(e / e.sum(axis=0, keepdims=True))


def global_avg_pool(x):
    """Per-channel spatial mean of (C,H,W) -> (C,)."""
    x = _f32(x)
    if x.ndim != 3:
        raise ValueError("global_avg_pool expects (C,H,W)")
    return x.mean(axis=(1, 2))


def resize_bilinear(x, out_h, out_w):
    """Bilinear resize of (H,W) or (C,H,W) with half-pixel centers and edge clamp.

    Identity sizes return an exact copy.
    """
    x = _f32(x)
    if out_h < 1 or out_w < 1:
        raise ValueError("output dims must be >= 1")
    two_d = x.ndim == 2
    xb = x[None] if two_d else x
    if xb.ndim != 3:
        raise ValueError("resize_bilinear expects (H,W) or (C,H,W)")
    c, h, w = xb.shape
    if (h, w) == (out_h, out_w):
        out = xb.copy()
    else:
        ys = np.clip((np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
        xs = np.clip((np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
        y0 = ys.astype(np.int64)
        x0 = xs.astype(np.int64)
        y1 = np.minimum(y0 + 1, h - 1)
        x1 = np.minimum(x0 + 1, w - 1)
        fy = (ys - y0).astype(np.float32)[None, :, None]
        fx = (xs - x0).astype(np.float32)[None, None, :]
        rows0 = xb[:, y0]
        rows1 = xb[:, y1]
        top = rows0[:, :, x0] * (1 - fx) + rows0[:, :, x1] * fx
        bot = rows1[:, :, x0] * (1 - fx) + rows1[:, :, x1] * fx
        out = (top * (1 - fy) + bot * fy).astype(np.float32)
    return out[0] if two_d else out


def box_counts(h, w, radius):
    """In-bounds pixel count of the (2r+1)^2 window clipped at the borders."""
    r = int(radius)
    ny = np.minimum(np.arange(h) + r, h - 1) - np.maximum(np.arange(h) - r, 0) + 1
    nx = np.minimum(np.arange(w) + r, w - 1) - np.maximum(np.arange(w) - r, 0) + 1
    return (ny[:, None] * nx[None, :]).astype(np.float32)


def box_filter(x, radius):
    """Windowed mean of (H,W) or (C,H,W) over the clipped (2r+1)^2 window.

    Border windows divide by the in-bounds count, so constants are preserved
    exactly everywhere. O(HW) per channel via an integral image.
    """
    x = _f32(x)
    r = int(radius)
    if r < 0:
        raise ValueError("radius must be >= 0")
    two_d = x.ndim == 2
    xb = x[None] if two_d else x
    if xb.ndim != 3:
        raise ValueError("box_filter expects (H,W) or (C,H,W)")
    c, h, w = xb.shape
    if r == 0:
        out = xb.copy()
    else:
        s = np.zeros((c, h + 1, w + 1), np.float64)
        np.cumsum(xb, axis=1, dtype=np.float64, out=s[:, 1:, 1:])
        np.cumsum(s[:, 1:, 1:], axis=2, out=s[:, 1:, 1:])
        y0 = np.maximum(np.arange(h) - r, 0)
        y1 = np.minimum(np.arange(h) + r, h - 1) + 1
        x0 = np.maximum(np.arange(w) - r, 0)
        x1 = np.minimum(np.arange(w) + r, w - 1) + 1
        win = (s[:, y1[:, None], x1[None, :]] - s[:, y0[:, None], x1[None, :]]
               - s[:, y1[:, None], x0[None, :]] + s[:, y0[:, None], x0[None, :]])
        cnt = ((y1 - y0)[:, None] * (x1 - x0)[None, :]).astype(np.float64)
        out = (win / cnt).astype(np.float32)
    return out[0] if two_d else out
