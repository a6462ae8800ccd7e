"""Binary container for named float64 tensors.

Layout (all little-endian): magic b"HVD1", u32 tensor count, then per
tensor a u16 name length, the UTF-8 name, a u8 rank, u64 extents, and the
row-major float64 payload.  Save/load round-trips are bit-exact.
"""

import struct

import numpy as np

MAGIC = b"HVD1"


class CheckpointFormatError(Exception):
    pass


def save_tensors(path, tensors):
    """Write a name -> array mapping in insertion order."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d
            a = np.asarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError("tensor name too long")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", a.ndim))
            f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            f.write(a.tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_tensors(path):
    """Read a checkpoint back into an ordered name -> array dict."""
    out = {}
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointFormatError("bad magic; not a checkpoint file")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, "extents"))
            n_items = 1
            for s in shape:
                n_items *= s
            payload = _read_exact(f, 8 * n_items, f"payload of {name}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        if f.read(1):
            raise CheckpointFormatError("trailing bytes after the last tensor")
    return out
