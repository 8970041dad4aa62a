"""Backend selection and shared wrappers for the hot kernels.

The compiled Cython extension is preferred when importable; otherwise the
pure NumPy fallback is used. The two backends produce bit-identical
results, so the choice only affects speed. Set TTASEG_BACKEND=numpy or
TTASEG_BACKEND=compiled to force one (the latter raises if the extension
is missing).

Convolutions are blocked: patch matrices are built a few megabytes at a
time into a reused buffer and multiplied block by block, which keeps the
working set cache-resident instead of materializing huge column matrices.
Block boundaries are a pure function of the shapes involved, never of the
environment, so blocked results are deterministic and backend-independent.
"""

import os

import numpy as np

from . import _kernels_np

_requested = os.environ.get("TTASEG_BACKEND", "auto").strip().lower()

if _requested in ("numpy", "python"):
    _impl = _kernels_np
elif _requested in ("", "auto", "compiled", "c", "cython"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _requested in ("", "auto"):
            _impl = _kernels_np
        else:
            raise
else:
    raise ValueError(f"unknown TTASEG_BACKEND value: {_requested!r}")

BACKEND = _impl.NAME

im2col_block = _impl.im2col_block
col2im_block = _impl.col2im_block
bn_stats = _impl.bn_stats
bn_apply = _impl.bn_apply
bn_relu_apply = _impl.bn_relu_apply
bn_reduce_grads = _impl.bn_reduce_grads
bn_relu_reduce = _impl.bn_relu_reduce
bn_input_grad = _impl.bn_input_grad
bn_relu_input_grad = _impl.bn_relu_input_grad
warp_bilinear = _impl.warp_bilinear
warp_nearest = _impl.warp_nearest
fill_uniform = _impl.fill_uniform

_BLOCK_BYTES = 3 << 20  # patch-buffer budget per convolution block


def conv_out_size(size, k, stride):
    """Spatial output size for 'same' padding (pad = k // 2)."""
    pad = k // 2
    return (size + 2 * pad - k) // stride + 1


def conv_row_blocks(ckk, wo, total_rows):
    """Output-row ranges [(t0, t1), ...] whose patch blocks fit the budget."""
    rows = max(1, _BLOCK_BYTES // (ckk * 8 * wo))
    return [(t, min(t + rows, total_rows)) for t in range(0, total_rows, rows)]


def im2col(x, k, stride):
    """Full patch matrix (C*k*k, B*Ho*Wo) in one piece (test/reference use)."""
    c, b, h, w = x.shape
    ho = conv_out_size(h, k, stride)
    wo = conv_out_size(w, k, stride)
    out = np.empty((c * k * k, b * ho * wo), dtype=np.float64)
    im2col_block(x, k, stride, 0, b * ho, out)
    return out


def col2im(cols, c, b, h, w, k, stride):
    """Adjoint of :func:`im2col`, one piece."""
    ho = conv_out_size(h, k, stride)
    dx = np.zeros((c, b, h, w), dtype=np.float64)
    col2im_block(cols, k, stride, 0, b * ho, dx)
    return dx
