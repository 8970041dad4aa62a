# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Bit-for-bit equivalent to ``_kernels_np``: identical arithmetic expressions
evaluated in identical order (reductions run left-to-right per channel,
scatter-adds in ascending kernel-offset order). Compiled without
-ffast-math or FMA contraction so IEEE semantics match the NumPy backend
exactly.

Parallel loops split work by channel only: every output element is written
by exactly one thread and per-element evaluation order never depends on
the thread count, so results are identical at any parallelism level.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor, sqrt
from libc.string cimport memcpy, memset

cnp.import_array()

NAME = "compiled"

# below this much work per call, threading overhead outweighs the win
cdef Py_ssize_t PAR_THRESHOLD = 16384


def conv_out_size(size, k, stride):
    """Spatial output size for 'same' padding (pad = k // 2)."""
    pad = k // 2
    return (size + 2 * pad - k) // stride + 1


cdef void _im2col_ci(double[:, :, :, ::1] x, int k, int stride,
                     Py_ssize_t t0, Py_ssize_t t1, double[:, ::1] out,
                     Py_ssize_t ci) noexcept nogil:
    cdef Py_ssize_t b = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef int pad = k // 2
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t t, bi, i, ob, sy, sx, r, rbase, j, j0, j1
    cdef int ky, kx, off
    for t in range(t0, t1):
        bi = t // ho
        i = t - bi * ho
        ob = (t - t0) * wo
        for ky in range(k):
            sy = i * stride + ky - pad
            rbase = (ci * k + ky) * k
            if sy < 0 or sy >= h:
                for kx in range(k):
                    memset(&out[rbase + kx, ob], 0, wo * sizeof(double))
                continue
            if stride == 1:
                for kx in range(k):
                    r = rbase + kx
                    off = kx - pad
                    j0 = -off if off < 0 else 0
                    j1 = w - off if w - off < wo else wo
                    for j in range(j0):
                        out[r, ob + j] = 0.0
                    if j1 > j0:
                        memcpy(&out[r, ob + j0], &x[ci, bi, sy, j0 + off],
                               (j1 - j0) * sizeof(double))
                    for j in range(j1, wo):
                        out[r, ob + j] = 0.0
            else:
                for kx in range(k):
                    r = rbase + kx
                    for j in range(wo):
                        sx = j * stride + kx - pad
                        if 0 <= sx < w:
                            out[r, ob + j] = x[ci, bi, sy, sx]
                        else:
                            out[r, ob + j] = 0.0


def im2col_block(double[:, :, :, ::1] x, int k, int stride,
                 Py_ssize_t t0, Py_ssize_t t1, double[:, ::1] out):
    """Fill ``out`` with patch columns for output rows t in [t0, t1).

    Row t enumerates (sample, output row): t = b_i * Ho + i. ``out`` must
    be (C*k*k, (t1-t0)*Wo).
    """
    cdef Py_ssize_t c = x.shape[0]
    cdef Py_ssize_t ci
    if c > 1 and (t1 - t0) * out.shape[0] > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            _im2col_ci(x, k, stride, t0, t1, out, ci)
    else:
        for ci in range(c):
            _im2col_ci(x, k, stride, t0, t1, out, ci)


cdef void _col2im_ci(double[:, ::1] cols, int k, int stride,
                     Py_ssize_t t0, Py_ssize_t t1, double[:, :, :, ::1] dx,
                     Py_ssize_t ci) noexcept nogil:
    cdef Py_ssize_t b = dx.shape[1], h = dx.shape[2], w = dx.shape[3]
    cdef int pad = k // 2
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t t, bi, i, ob, sy, sx, r, j, j0, j1
    cdef int ky, kx, off
    for ky in range(k):
        for kx in range(k):
            r = (ci * k + ky) * k + kx
            off = kx - pad
            for t in range(t0, t1):
                bi = t // ho
                i = t - bi * ho
                sy = i * stride + ky - pad
                if sy < 0 or sy >= h:
                    continue
                ob = (t - t0) * wo
                if stride == 1:
                    j0 = -off if off < 0 else 0
                    j1 = w - off if w - off < wo else wo
                    for j in range(j0, j1):
                        dx[ci, bi, sy, j + off] += cols[r, ob + j]
                else:
                    for j in range(wo):
                        sx = j * stride + kx - pad
                        if 0 <= sx < w:
                            dx[ci, bi, sy, sx] += cols[r, ob + j]


def col2im_block(double[:, ::1] cols, int k, int stride,
                 Py_ssize_t t0, Py_ssize_t t1, double[:, :, :, ::1] dx):
    """Scatter-add patch columns for output rows [t0, t1) into ``dx``.

    Contributions to any destination element accumulate in ascending
    (ky, kx) order -- the same order as the NumPy backend. Each channel is
    owned by one thread, so parallelism never reorders additions.
    """
    cdef Py_ssize_t c = dx.shape[0]
    cdef Py_ssize_t ci
    if c > 1 and (t1 - t0) * cols.shape[0] > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            _col2im_ci(cols, k, stride, t0, t1, dx, ci)
    else:
        for ci in range(c):
            _col2im_ci(cols, k, stride, t0, t1, dx, ci)


def bn_stats(double[:, ::1] x):
    """Per-channel mean and population variance of a (C, N) view.

    Both passes accumulate strictly left-to-right.
    """
    cdef Py_ssize_t c = x.shape[0], n = x.shape[1]
    mean_arr = np.empty(c, dtype=np.float64)
    var_arr = np.empty(c, dtype=np.float64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef Py_ssize_t ci, i
    cdef double acc, mu, d
    if c > 1 and n > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            acc = 0.0
            for i in range(n):
                acc = acc + x[ci, i]
            mu = acc / n
            mean[ci] = mu
            acc = 0.0
            for i in range(n):
                d = x[ci, i] - mu
                acc = acc + d * d
            var[ci] = acc / n
    else:
        for ci in range(c):
            acc = 0.0
            for i in range(n):
                acc = acc + x[ci, i]
            mu = acc / n
            mean[ci] = mu
            acc = 0.0
            for i in range(n):
                d = x[ci, i] - mu
                acc = acc + d * d
            var[ci] = acc / n
    return mean_arr, var_arr


cdef void _bn_apply_ci(double[:, ::1] x, double[::1] mean, double[::1] istd,
                       double[::1] gamma, double[::1] beta,
                       double[:, ::1] out_y, double[:, ::1] out_xhat,
                       bint relu, Py_ssize_t ci) noexcept nogil:
    cdef Py_ssize_t n = x.shape[1]
    cdef Py_ssize_t i
    cdef double mu = mean[ci], isd = istd[ci], g = gamma[ci], b_ = beta[ci]
    cdef double xh, y
    for i in range(n):
        xh = (x[ci, i] - mu) * isd
        out_xhat[ci, i] = xh
        y = xh * g + b_
        if relu and y < 0.0:
            y = 0.0
        out_y[ci, i] = y


def bn_apply(double[:, ::1] x, double[::1] mean, double[::1] istd,
             double[::1] gamma, double[::1] beta,
             double[:, ::1] out_y, double[:, ::1] out_xhat):
    """y = ((x - mean) * istd) * gamma + beta, also emitting xhat.

    ``out_y`` may alias ``out_xhat`` when xhat is not needed.
    """
    cdef Py_ssize_t c = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t ci
    if c > 1 and n > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            _bn_apply_ci(x, mean, istd, gamma, beta, out_y, out_xhat, 0, ci)
    else:
        for ci in range(c):
            _bn_apply_ci(x, mean, istd, gamma, beta, out_y, out_xhat, 0, ci)
    return None


def bn_relu_apply(double[:, ::1] x, double[::1] mean, double[::1] istd,
                  double[::1] gamma, double[::1] beta,
                  double[:, ::1] out_a, double[:, ::1] out_xhat):
    """Fused norm-then-rectify: a = max(xhat * gamma + beta, 0)."""
    cdef Py_ssize_t c = x.shape[0], n = x.shape[1]
    cdef Py_ssize_t ci
    if c > 1 and n > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            _bn_apply_ci(x, mean, istd, gamma, beta, out_a, out_xhat, 1, ci)
    else:
        for ci in range(c):
            _bn_apply_ci(x, mean, istd, gamma, beta, out_a, out_xhat, 1, ci)
    return None


def bn_reduce_grads(double[:, ::1] dy, double[:, ::1] xhat):
    """Per-channel (sum dy, sum dy*xhat), accumulated left-to-right."""
    cdef Py_ssize_t c = dy.shape[0], n = dy.shape[1]
    s1_arr = np.empty(c, dtype=np.float64)
    s2_arr = np.empty(c, dtype=np.float64)
    cdef double[::1] s1 = s1_arr
    cdef double[::1] s2 = s2_arr
    cdef Py_ssize_t ci, i
    cdef double a1, a2, d
    if c > 1 and n > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            a1 = 0.0
            a2 = 0.0
            for i in range(n):
                d = dy[ci, i]
                a1 = a1 + d
                a2 = a2 + d * xhat[ci, i]
            s1[ci] = a1
            s2[ci] = a2
    else:
        for ci in range(c):
            a1 = 0.0
            a2 = 0.0
            for i in range(n):
                d = dy[ci, i]
                a1 = a1 + d
                a2 = a2 + d * xhat[ci, i]
            s1[ci] = a1
            s2[ci] = a2
    return s1_arr, s2_arr


def bn_relu_reduce(double[:, ::1] da, double[:, ::1] act, double[:, ::1] xhat):
    """Like bn_reduce_grads but with the rectifier gate folded in:
    the summand is da where act > 0, else 0."""
    cdef Py_ssize_t c = da.shape[0], n = da.shape[1]
    s1_arr = np.empty(c, dtype=np.float64)
    s2_arr = np.empty(c, dtype=np.float64)
    cdef double[::1] s1 = s1_arr
    cdef double[::1] s2 = s2_arr
    cdef Py_ssize_t ci, i
    cdef double a1, a2, d
    if c > 1 and n > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            a1 = 0.0
            a2 = 0.0
            for i in range(n):
                d = da[ci, i] if act[ci, i] > 0.0 else 0.0
                a1 = a1 + d
                a2 = a2 + d * xhat[ci, i]
            s1[ci] = a1
            s2[ci] = a2
    else:
        for ci in range(c):
            a1 = 0.0
            a2 = 0.0
            for i in range(n):
                d = da[ci, i] if act[ci, i] > 0.0 else 0.0
                a1 = a1 + d
                a2 = a2 + d * xhat[ci, i]
            s1[ci] = a1
            s2[ci] = a2
    return s1_arr, s2_arr


cdef void _bn_input_grad_ci(double[:, ::1] dy, double[:, ::1] xhat,
                            double[::1] istd, double[::1] gamma,
                            double[::1] s1, double[::1] s2,
                            double[:, ::1] out, double[:, ::1] act,
                            bint relu, Py_ssize_t ci) noexcept nogil:
    cdef Py_ssize_t n = dy.shape[1]
    cdef Py_ssize_t i
    cdef double nn = <double>n
    cdef double g = gamma[ci], scale = istd[ci] / nn, c1 = s1[ci], c2 = s2[ci]
    cdef double d
    for i in range(n):
        d = dy[ci, i]
        if relu and act[ci, i] <= 0.0:
            d = 0.0
        out[ci, i] = scale * ((nn * (d * g) - c1) - xhat[ci, i] * c2)


def bn_input_grad(double[:, ::1] dy, double[:, ::1] xhat, double[::1] istd,
                  double[::1] gamma, double[::1] s1, double[::1] s2,
                  double[:, ::1] out):
    """dx = (istd/n) * ((n * (dy * gamma) - s1) - xhat * s2), per channel.

    ``out`` may alias ``dy``.
    """
    cdef Py_ssize_t c = dy.shape[0], n = dy.shape[1]
    cdef Py_ssize_t ci
    if c > 1 and n > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            _bn_input_grad_ci(dy, xhat, istd, gamma, s1, s2, out, dy, 0, ci)
    else:
        for ci in range(c):
            _bn_input_grad_ci(dy, xhat, istd, gamma, s1, s2, out, dy, 0, ci)
    return None


def bn_relu_input_grad(double[:, ::1] da, double[:, ::1] act,
                       double[:, ::1] xhat, double[::1] istd,
                       double[::1] gamma, double[::1] s1, double[::1] s2,
                       double[:, ::1] out):
    """bn_input_grad with the rectifier gate folded in (dy = da where
    act > 0, else 0). ``out`` may alias ``da``."""
    cdef Py_ssize_t c = da.shape[0], n = da.shape[1]
    cdef Py_ssize_t ci
    if c > 1 and n > PAR_THRESHOLD:
        for ci in prange(c, nogil=True, schedule="static"):
            _bn_input_grad_ci(da, xhat, istd, gamma, s1, s2, out, act, 1, ci)
    else:
        for ci in range(c):
            _bn_input_grad_ci(da, xhat, istd, gamma, s1, s2, out, act, 1, ci)
    return None


def warp_bilinear(cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] src,
                  coeffs, double cx, double cy):
    """Inverse-map resample with bilinear interpolation; see NumPy twin."""
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef double m00 = coeffs[0], m01 = coeffs[1], m02 = coeffs[2]
    cdef double m10 = coeffs[3], m11 = coeffs[4], m12 = coeffs[5]
    out_arr = np.empty((h, w), dtype=np.float64)
    valid_arr = np.empty((h, w), dtype=np.bool_)
    cdef double[:, ::1] out = out_arr
    cdef cnp.uint8_t[:, ::1] valid = valid_arr.view(np.uint8)
    cdef double[:, ::1] sv = src
    cdef Py_ssize_t x, y, x0i, y0i, x1i, y1i
    cdef double xs, ys, sx, sy, x0, y0, fx, fy, v00, v01, v10, v11
    cdef double tx = m02 + cx, ty = m12 + cy
    for y in range(h):
        ys = y - cy
        for x in range(w):
            xs = x - cx
            sx = m00 * xs + m01 * ys + tx
            sy = m10 * xs + m11 * ys + ty
            if sx >= 0.0 and sx <= w - 1.0 and sy >= 0.0 and sy <= h - 1.0:
                x0 = floor(sx)
                y0 = floor(sy)
                fx = sx - x0
                fy = sy - y0
                x0i = <Py_ssize_t>x0
                y0i = <Py_ssize_t>y0
                if x0i < 0:
                    x0i = 0
                elif x0i > w - 1:
                    x0i = w - 1
                if y0i < 0:
                    y0i = 0
                elif y0i > h - 1:
                    y0i = h - 1
                x1i = x0i + 1
                if x1i > w - 1:
                    x1i = w - 1
                y1i = y0i + 1
                if y1i > h - 1:
                    y1i = h - 1
                v00 = sv[y0i, x0i]
                v01 = sv[y0i, x1i]
                v10 = sv[y1i, x0i]
                v11 = sv[y1i, x1i]
                out[y, x] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) \
                    + fy * ((1.0 - fx) * v10 + fx * v11)
                valid[y, x] = 1
            else:
                out[y, x] = 0.0
                valid[y, x] = 0
    return out_arr, valid_arr


def warp_nearest(cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] src,
                 coeffs, double cx, double cy):
    """Inverse-map resample with nearest-neighbor lookup; see NumPy twin."""
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    cdef double m00 = coeffs[0], m01 = coeffs[1], m02 = coeffs[2]
    cdef double m10 = coeffs[3], m11 = coeffs[4], m12 = coeffs[5]
    out_arr = np.empty((h, w), dtype=np.float64)
    valid_arr = np.empty((h, w), dtype=np.bool_)
    cdef double[:, ::1] out = out_arr
    cdef cnp.uint8_t[:, ::1] valid = valid_arr.view(np.uint8)
    cdef double[:, ::1] sv = src
    cdef Py_ssize_t x, y, xi, yi
    cdef double xs, ys, sx, sy, xf, yf
    cdef double tx = m02 + cx, ty = m12 + cy
    for y in range(h):
        ys = y - cy
        for x in range(w):
            xs = x - cx
            sx = m00 * xs + m01 * ys + tx
            sy = m10 * xs + m11 * ys + ty
            xf = floor(sx + 0.5)
            yf = floor(sy + 0.5)
            if xf >= 0.0 and xf <= w - 1.0 and yf >= 0.0 and yf <= h - 1.0:
                xi = <Py_ssize_t>xf
                yi = <Py_ssize_t>yf
                out[y, x] = sv[yi, xi]
                valid[y, x] = 1
            else:
                out[y, x] = 0.0
                valid[y, x] = 0
    return out_arr, valid_arr


def fill_uniform(cnp.ndarray[cnp.uint64_t, ndim=1, mode="c"] state, Py_ssize_t n):
    """Draw n doubles in [0, 1) from a xoshiro256++ state (4 uint64)."""
    cdef cnp.uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef cnp.uint64_t r, t, tot
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        tot = s0 + s3
        r = ((tot << 23) | (tot >> 41)) + s0
        t = s1 << 17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = (s3 << 45) | (s3 >> 19)
        out[i] = <double>(r >> 11) * (1.0 / 9007199254740992.0)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return out_arr
