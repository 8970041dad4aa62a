"""Pure NumPy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available. Every function here is bit-for-bit equivalent to its compiled
counterpart in ``_ckernels``: the same arithmetic expressions are evaluated
in the same order (per-channel reductions run strictly left-to-right via
cumulative sums; scatter-adds accumulate in ascending kernel-offset order),
so results never depend on which backend is active.

Array layout conventions (shared with the compiled backend):
  * activations are (C, B, H, W), C-contiguous float64
  * patch matrices are (C*k*k, T*Wo) where row index is (c, ky, kx) and
    the columns cover output rows t = b*Ho + i for t in [t0, t1)
"""

import numpy as np

NAME = "numpy"

_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def conv_out_size(size, k, stride):
    """Spatial output size for 'same' padding (pad = k // 2)."""
    pad = k // 2
    return (size + 2 * pad - k) // stride + 1


def _row_chunks(t0, t1, ho):
    """Split output-row range [t0, t1) into per-sample (bi, i0, i1) chunks."""
    chunks = []
    t = t0
    while t < t1:
        bi = t // ho
        i0 = t - bi * ho
        i1 = min(ho, i0 + (t1 - t))
        chunks.append((bi, i0, i1))
        t += i1 - i0
    return chunks


def im2col_block(x, k, stride, t0, t1, out):
    """Fill ``out`` with patch columns for output rows t in [t0, t1)."""
    c, b, h, w = x.shape
    pad = k // 2
    ho = conv_out_size(h, k, stride)
    wo = conv_out_size(w, k, stride)
    out6 = out.reshape(c, k, k, t1 - t0, wo)
    row = 0
    for bi, i0, i1 in _row_chunks(t0, t1, ho):
        rows = i1 - i0
        for ky in range(k):
            for kx in range(k):
                block = out6[:, ky, kx, row:row + rows]
                block[...] = 0.0
                # valid output range for this offset: 0 <= i*stride + ky - pad < h
                lo = max(i0, _ceil_div(pad - ky, stride))
                hi = min(i1, _ceil_div(h + pad - ky, stride))
                jlo = max(0, _ceil_div(pad - kx, stride))
                jhi = min(wo, _ceil_div(w + pad - kx, stride))
                if lo >= hi or jlo >= jhi:
                    continue
                src = x[:, bi,
                        lo * stride + ky - pad:(hi - 1) * stride + ky - pad + 1:stride,
                        jlo * stride + kx - pad:(jhi - 1) * stride + kx - pad + 1:stride]
                block[:, lo - i0:hi - i0, jlo:jhi] = src
        row += rows


def _ceil_div(a, b):
    return -((-a) // b)


def col2im_block(cols, k, stride, t0, t1, dx):
    """Scatter-add patch columns for output rows [t0, t1) into ``dx``.

    Accumulation runs in ascending (ky, kx) order per destination element,
    matching the compiled backend.
    """
    c, b, h, w = dx.shape
    pad = k // 2
    ho = conv_out_size(h, k, stride)
    wo = conv_out_size(w, k, stride)
    cols6 = cols.reshape(c, k, k, t1 - t0, wo)
    for ky in range(k):
        for kx in range(k):
            row = 0
            for bi, i0, i1 in _row_chunks(t0, t1, ho):
                rows = i1 - i0
                lo = max(i0, _ceil_div(pad - ky, stride))
                hi = min(i1, _ceil_div(h + pad - ky, stride))
                jlo = max(0, _ceil_div(pad - kx, stride))
                jhi = min(wo, _ceil_div(w + pad - kx, stride))
                if lo < hi and jlo < jhi:
                    dst = dx[:, bi,
                             lo * stride + ky - pad:(hi - 1) * stride + ky - pad + 1:stride,
                             jlo * stride + kx - pad:(jhi - 1) * stride + kx - pad + 1:stride]
                    dst += cols6[:, ky, kx, row + lo - i0:row + hi - i0, jlo:jhi]
                row += rows


def bn_stats(x):
    """Per-channel mean and population variance of a (C, N) view.

    Cumulative sums make the accumulation strictly left-to-right, matching
    the compiled backend bit for bit.
    """
    n = x.shape[1]
    mean = np.cumsum(x, axis=1)[:, -1] / n
    d = x - mean[:, None]
    var = np.cumsum(d * d, axis=1)[:, -1] / n
    return mean, var


def bn_apply(x, mean, istd, gamma, beta, out_y, out_xhat):
    """y = ((x - mean) * istd) * gamma + beta, also emitting xhat.

    ``out_y`` may alias ``out_xhat`` when xhat is not needed.
    """
    np.subtract(x, mean[:, None], out=out_xhat)
    out_xhat *= istd[:, None]
    y = out_xhat * gamma[:, None]
    y += beta[:, None]
    out_y[...] = y
    return None


def bn_relu_apply(x, mean, istd, gamma, beta, out_a, out_xhat):
    """Fused norm-then-rectify: a = max(xhat * gamma + beta, 0)."""
    np.subtract(x, mean[:, None], out=out_xhat)
    out_xhat *= istd[:, None]
    y = out_xhat * gamma[:, None]
    y += beta[:, None]
    np.maximum(y, 0.0, out=out_a)
    return None


def bn_reduce_grads(dy, xhat):
    """Per-channel (sum dy, sum dy*xhat), accumulated left-to-right."""
    s1 = np.cumsum(dy, axis=1)[:, -1]
    s2 = np.cumsum(dy * xhat, axis=1)[:, -1]
    return s1, s2


def bn_relu_reduce(da, act, xhat):
    """Like bn_reduce_grads but with the rectifier gate folded in:
    the summand is da where act > 0, else 0."""
    dz = np.where(act > 0.0, da, 0.0)
    return bn_reduce_grads(dz, xhat)


def bn_input_grad(dy, xhat, istd, gamma, s1, s2, out):
    """dx = (istd/n) * ((n * (dy * gamma) - s1) - xhat * s2), per channel.

    ``out`` may alias ``dy``.
    """
    n = float(dy.shape[1])
    scale = istd / n
    tmp = n * (dy * gamma[:, None])
    tmp -= s1[:, None]
    tmp -= xhat * s2[:, None]
    np.multiply(scale[:, None], tmp, out=out)
    return None


def bn_relu_input_grad(da, act, xhat, istd, gamma, s1, s2, out):
    """bn_input_grad with the rectifier gate folded in (dy = da where
    act > 0, else 0). ``out`` may alias ``da``."""
    dz = np.where(act > 0.0, da, 0.0)
    bn_input_grad(dz, xhat, istd, gamma, s1, s2, out)
    return None


def warp_bilinear(src, coeffs, cx, cy):
    """Inverse-map resample of a (H, W) image with bilinear interpolation.

    ``coeffs`` is the flattened upper 2x3 of the source-lookup matrix
    (m00, m01, m02, m10, m11, m12); destination pixel (x, y) samples the
    source at the mapped location, measured relative to center (cx, cy).
    Out-of-frame samples produce 0 with validity False.
    """
    h, w = src.shape
    m00, m01, m02, m10, m11, m12 = coeffs
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    sx = m00 * xs[None, :] + m01 * ys[:, None] + (m02 + cx)
    sy = m10 * xs[None, :] + m11 * ys[:, None] + (m12 + cy)
    valid = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0i = np.clip(x0.astype(np.int64), 0, w - 1)
    y0i = np.clip(y0.astype(np.int64), 0, h - 1)
    x1i = np.clip(x0i + 1, 0, w - 1)
    y1i = np.clip(y0i + 1, 0, h - 1)
    v00 = src[y0i, x0i]
    v01 = src[y0i, x1i]
    v10 = src[y1i, x0i]
    v11 = src[y1i, x1i]
    out = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) \
        + fy * ((1.0 - fx) * v10 + fx * v11)
    out = np.where(valid, out, 0.0)
    return out, valid


def warp_nearest(src, coeffs, cx, cy):
    """Like warp_bilinear but nearest-neighbor; keeps binary masks binary."""
    h, w = src.shape
    m00, m01, m02, m10, m11, m12 = coeffs
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    sx = m00 * xs[None, :] + m01 * ys[:, None] + (m02 + cx)
    sy = m10 * xs[None, :] + m11 * ys[:, None] + (m12 + cy)
    xi = np.floor(sx + 0.5)
    yi = np.floor(sy + 0.5)
    valid = (xi >= 0.0) & (xi <= w - 1.0) & (yi >= 0.0) & (yi <= h - 1.0)
    xc = np.clip(xi.astype(np.int64), 0, w - 1)
    yc = np.clip(yi.astype(np.int64), 0, h - 1)
    out = np.where(valid, src[yc, xc], 0.0)
    return out, valid


def fill_uniform(state, n):
    """Draw n doubles in [0, 1) from a xoshiro256++ state (4 uint64).

    Advances ``state`` in place. One generator step per output; the double
    uses the top 53 bits of the 64-bit output.
    """
    s0, s1, s2, s3 = (int(v) for v in state)
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        tot = (s0 + s3) & _MASK64
        r = (((tot << 23) | (tot >> 41)) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK64
        out[i] = (r >> 11) * _INV_2_53
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out
