"""Raw tensor file format.

Layout: magic b"SGT1", u32-LE rank, rank u32-LE dims, then prod(dims)
float32-LE values in row-major order.
"""

import struct

import numpy as np

MAGIC = b"SGT1"


def write_tensor(path, x):
    x = np.ascontiguousarray(x, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", x.ndim))
        f.write(struct.pack(f"<{x.ndim}I", *x.shape))
        f.write(x.tobytes())


def read_tensor(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 8:
        raise ValueError(f"{path}: truncated header at byte {len(data)}")
    (rank,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + 4 * rank:
        raise ValueError(f"{path}: truncated dims at byte {len(data)}")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    if any(d < 1 for d in dims):
        raise ValueError(f"{path}: invalid dims {dims}")
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    off = 8 + 4 * rank
    if len(data) != off + 4 * count:
        raise ValueError(f"{path}: payload size {len(data) - off} bytes, "
                         f"expected {4 * count} (at byte {off})")
    return np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(dims).copy()
