"""8-bit binary PGM export for visual inspection of maps and masks.

PGM (P5) is dependency-free and diffable, which keeps run outputs easy to
compare byte for byte.
"""

import numpy as np


def write_pgm(path, values):
    """Write a (H, W) uint8 array as binary PGM."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError("PGM export expects a 2-D array")
    arr = arr.astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def scale_to_bytes(values, peak=None):
    """Linearly scale a nonnegative map by ``peak`` (default: its max) to
    0..255. Returns (bytes_array, peak_used)."""
    arr = np.asarray(values, dtype=np.float64)
    if peak is None:
        peak = float(arr.max()) if arr.size else 0.0
    if peak <= 0.0:
        return np.zeros(arr.shape, dtype=np.uint8), peak
    scaled = np.clip(arr / peak, 0.0, 1.0) * 255.0
    return np.rint(scaled).astype(np.uint8), peak


def mask_to_bytes(mask):
    """Binary mask to 0/255 bytes."""
    return (np.asarray(mask) > 0).astype(np.uint8) * 255
