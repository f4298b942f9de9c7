"""Binary netpbm I/O (P6 PPM color, P5 PGM grayscale/labels) and label-map
color rendering.

Float images use [0,1], stored as 8-bit (maxval 255). Label maps are stored
raw: pixel value == class index.
"""

import numpy as np


class NetpbmError(ValueError):
    """Malformed netpbm data; message carries the byte offset."""


# 21-entry label render palette (class 0 = background = black); see README.
PALETTE = np.array([
    [0, 0, 0], [128, 0, 0], [0, 128, 0], [128, 128, 0], [0, 0, 128],
    [128, 0, 128], [0, 128, 128], [128, 128, 128], [64, 0, 0], [192, 0, 0],
    [64, 128, 0], [192, 128, 0], [64, 0, 128], [192, 0, 128], [64, 128, 128],
    [192, 128, 128], [0, 64, 0], [128, 64, 0], [0, 192, 0], [128, 192, 0],
    [0, 64, 128],
], dtype=np.uint8)


def _header(data, magic, path):
    """Parse 'magic W H maxval' allowing whitespace and # comments.

    Returns (width, height, maxval, payload offset).
    """
    if data[:2] != magic:
        raise NetpbmError(f"{path}: bad magic {data[:2]!r} at byte 0, expected {magic!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise NetpbmError(f"{path}: expected integer at byte {start}, got {tok!r}")
        fields.append(int(tok))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise NetpbmError(f"{path}: missing whitespace after maxval at byte {pos}")
    pos += 1  # single whitespace byte separates header from payload
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise NetpbmError(f"{path}: invalid dimensions {w}x{h}")
    if maxval != 255:
        raise NetpbmError(f"{path}: unsupported maxval {maxval}, only 255")
    return w, h, maxval, pos


def _payload(data, offset, count, path):
    if len(data) - offset < count:
        raise NetpbmError(f"{path}: truncated payload at byte {len(data)}, "
                          f"expected {offset + count} bytes")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)


def read_ppm(path):
    """Read binary P6 into a float32 (3,H,W) image scaled to [0,1]."""
    with open(path, "rb") as f:
        data = f.read()
    w, h, _, off = _header(data, b"P6", path)
    raw = _payload(data, off, w * h * 3, path)
    img = raw.reshape(h, w, 3).transpose(2, 0, 1)
    return img.astype(np.float32) / 255.0


def write_ppm(path, image):
    """Write a float32 (3,H,W) image in [0,1] as binary P6."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError("write_ppm expects (3,H,W)")
    q = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = image.shape[1:]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(q.transpose(1, 2, 0).tobytes())


def read_pgm(path, scale=False):
    """Read binary P5. Returns uint8 (H,W) (label map / raw bytes), or
    float32 in [0,1] when scale=True."""
    with open(path, "rb") as f:
        data = f.read()
    w, h, _, off = _header(data, b"P5", path)
    raw = _payload(data, off, w * h, path).reshape(h, w).copy()
    return raw.astype(np.float32) / 255.0 if scale else raw


def write_pgm(path, array):
    """Write (H,W) as binary P5: integer arrays raw (class index = pixel value),
    float arrays scaled [0,1] -> [0,255]."""
    a = np.asarray(array)
    if a.ndim != 2:
        raise ValueError("write_pgm expects (H,W)")
    if np.issubdtype(a.dtype, np.floating):
        q = np.rint(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    else:
        if a.min() < 0 or a.max() > 255:
            raise ValueError("class indices above 255 are unsupported by PGM")
        q = a.astype(np.uint8)
    h, w = a.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(q.tobytes())


def viz_labelmap(labels):
    """Render a label map to a float32 (3,H,W) color image via the fixed palette."""
    labels = np.asarray(labels)
    if labels.max(initial=0) >= len(PALETTE):
        raise ValueError(f"label {labels.max()} outside the {len(PALETTE)}-color palette")
    rgb = PALETTE[labels]  # (H,W,3)
    return rgb.transpose(2, 0, 1).astype(np.float32) / 255.0
