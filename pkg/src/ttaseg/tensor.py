"""Dense float64 tensors: conventions, ordered reductions, and NTF1 files.

Tensors are plain C-contiguous float64 ndarrays. Public operations keep
values finite; anything that reads external data validates this.

Reductions with a guaranteed order live here. ``seq_sum`` is defined as the
plain left-to-right sum over row-major elements -- the same result, to the
last bit, as a naive accumulation loop. That fixed order is what makes
logged losses and serialized results reproducible across runs and backends.

The NTF1 tensor file format:
    magic 'NTF1' | u32 rank (LE) | rank x u64 dims (LE) | f64 payload (LE)
Round-trips are bit-exact.
"""

import struct

import numpy as np

from .errors import FormatError

_MAGIC = b"NTF1"


def as_tensor(x):
    """Coerce to a C-contiguous float64 ndarray."""
    return np.ascontiguousarray(x, dtype=np.float64)


def ensure_finite(arr, context="tensor"):
    """Raise ValueError if arr contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{context} contains non-finite values")
    return arr


def seq_sum(arr):
    """Left-to-right sum over row-major elements.

    Implemented with a sequential running accumulation (np.cumsum), which
    matches a naive Python loop bit-for-bit, unlike NumPy's pairwise
    np.sum.
    """
    flat = np.ascontiguousarray(arr, dtype=np.float64).ravel()
    if flat.size == 0:
        return 0.0
    return float(np.cumsum(flat)[-1])


def seq_mean(arr):
    """seq_sum divided by the element count."""
    a = np.asarray(arr)
    if a.size == 0:
        raise ValueError("mean of an empty tensor")
    return seq_sum(a) / a.size


def seq_min(arr):
    """Minimum element (order-independent for min)."""
    a = np.asarray(arr)
    if a.size == 0:
        raise ValueError("min of an empty tensor")
    return float(np.min(a))


def seq_max(arr):
    """Maximum element (order-independent for max)."""
    a = np.asarray(arr)
    if a.size == 0:
        raise ValueError("max of an empty tensor")
    return float(np.max(a))


def write_ntf(fileobj, arr):
    """Append one NTF1 record to an open binary file object."""
    a = as_tensor(arr)
    ensure_finite(a, "NTF1 tensor")
    fileobj.write(_MAGIC)
    fileobj.write(struct.pack("<I", a.ndim))
    fileobj.write(struct.pack(f"<{a.ndim}Q", *a.shape))
    fileobj.write(a.astype("<f8", copy=False).tobytes())


def read_ntf(fileobj, offset=None):
    """Read one NTF1 record; returns (array, offset_after_record).

    Raises FormatError (with the byte offset of the problem) on bad magic
    or truncation.
    """
    if offset is not None:
        fileobj.seek(offset)
    start = fileobj.tell()
    magic = fileobj.read(4)
    if len(magic) < 4 or magic != _MAGIC:
        raise FormatError("bad NTF1 magic", offset=start)
    raw = fileobj.read(4)
    if len(raw) < 4:
        raise FormatError("truncated NTF1 rank", offset=start + 4)
    (rank,) = struct.unpack("<I", raw)
    if rank > 32:
        raise FormatError(f"implausible NTF1 rank {rank}", offset=start + 4)
    raw = fileobj.read(8 * rank)
    if len(raw) < 8 * rank:
        raise FormatError("truncated NTF1 dims", offset=start + 8)
    dims = struct.unpack(f"<{rank}Q", raw) if rank else ()
    count = 1
    for d in dims:
        count *= d
    payload_at = start + 8 + 8 * rank
    raw = fileobj.read(8 * count)
    if len(raw) < 8 * count:
        raise FormatError("truncated NTF1 payload", offset=payload_at + len(raw))
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
    if not np.all(np.isfinite(arr)):
        raise FormatError("non-finite value in NTF1 payload", offset=payload_at)
    return arr, payload_at + 8 * count


def save_tensor(path, arr):
    """Write a single tensor to an NTF1 file."""
    with open(path, "wb") as f:
        write_ntf(f, arr)


def load_tensor(path):
    """Read a single tensor from an NTF1 file."""
    with open(path, "rb") as f:
        arr, _ = read_ntf(f)
    return arr
