"""Fully convolutional encoder-decoder with hand-written backpropagation.

The model is a small U-Net-style network assembled from pre-activation
blocks (batch norm -> ReLU -> convolution). Blocks are grouped into
residual sub-modules whose shortcut is the identity when channel counts
match and a 1x1 projection convolution otherwise; projection weights carry
an L1 penalty to push uninformative shortcuts toward zero. Downsampling is
a stride-2 convolution, upsampling nearest-neighbor x2 followed by a 3x3
convolution, and each decoder level concatenates the matching encoder
output. Spatial dropout (whole feature channels) follows every residual
sub-module. The head is a 1x1 convolution squashed through a logistic, so
the output is a per-pixel foreground probability.

Activations use the (C, B, H, W) layout throughout: convolution then runs
as one GEMM against the im2col patch matrix with no transposition on
either side. Forward passes return an explicit cache object, so inference
with a shared model is reentrant; backward consumes the cache and
accumulates parameter gradients.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError


class Param:
    """A named parameter tensor with its gradient accumulator."""

    __slots__ = ("name", "value", "grad", "l1")

    def __init__(self, name, value, l1=False):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.l1 = l1  # True for shortcut-projection weights

    def __repr__(self):
        return f"Param({self.name}, shape={self.value.shape}, l1={self.l1})"


def _as_cbhw(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"expected (C, B, H, W), got shape {x.shape}")
    return x


class Conv2d:
    """2D cross-correlation with 'same' zero padding.

    Odd kernel only. Stride 1 preserves the spatial extent; stride 2
    yields ceil(size / 2).
    """

    def __init__(self, name, in_ch, out_ch, kernel, stride=1, l1=False):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride
        self.w = Param(f"{name}.w",
                       np.zeros((out_ch, in_ch, kernel, kernel)), l1=l1)
        self.b = Param(f"{name}.b", np.zeros(out_ch))

    def init_params(self, rng):
        fan_in = self.in_ch * self.kernel * self.kernel
        std = math.sqrt(2.0 / fan_in)
        self.w.value = rng.fill_normal(self.w.value.size, 0.0, std) \
            .reshape(self.w.value.shape)
        self.b.value = np.zeros(self.out_ch)

    def params(self):
        return [self.w, self.b]

    def forward(self, x, want_cache=False):
        """Runs the convolution block by block: patch columns are built a
        few MB at a time and multiplied immediately, so nothing large is
        ever materialized. The cache holds only a reference to the input;
        backward rebuilds the patch blocks."""
        x = _as_cbhw(x)
        c, b, h, w = x.shape
        if c != self.in_ch:
            raise ShapeError(
                f"{self.w.name}: expected {self.in_ch} input channels, got {c}")
        k, s = self.kernel, self.stride
        cache = x if want_cache else None
        if k == 1 and s == 1:
            y2 = self.w.value.reshape(self.out_ch, c) @ x.reshape(c, b * h * w)
            y2 += self.b.value[:, None]
            return y2.reshape(self.out_ch, b, h, w), cache
        ho = kernels.conv_out_size(h, k, s)
        wo = kernels.conv_out_size(w, k, s)
        ckk = c * k * k
        wm = self.w.value.reshape(self.out_ch, ckk)
        y2 = np.empty((self.out_ch, b * ho * wo))
        for c0, c1, blk in self._patch_blocks(x, k, s, ckk, ho, wo):
            y2[:, c0:c1] = wm @ blk
        y2 += self.b.value[:, None]
        return y2.reshape(self.out_ch, b, ho, wo), cache

    @staticmethod
    def _patch_blocks(x, k, s, ckk, ho, wo):
        """Yield (col_start, col_end, patch_block); the full-size buffer is
        reused across blocks so the working set stays cache-resident."""
        b = x.shape[1]
        blocks = kernels.conv_row_blocks(ckk, wo, b * ho)
        full = (blocks[0][1] - blocks[0][0]) * wo
        buf = np.empty((ckk, full))
        for t0, t1 in blocks:
            ncol = (t1 - t0) * wo
            blk = buf if ncol == full else np.empty((ckk, ncol))
            kernels.im2col_block(x, k, s, t0, t1, blk)
            yield t0 * wo, t1 * wo, blk

    def backward(self, dy, cache):
        if cache is None:
            raise RuntimeError(f"{self.w.name}: backward without forward cache")
        x = cache
        c, b, h, w = x.shape
        k, s = self.kernel, self.stride
        dy2 = np.ascontiguousarray(dy).reshape(self.out_ch, -1)
        self.b.grad += dy2.sum(axis=1)
        wm = self.w.value.reshape(self.out_ch, c * k * k)
        if k == 1 and s == 1:
            cols = x.reshape(c, b * h * w)
            self.w.grad += (dy2 @ cols.T).reshape(self.w.value.shape)
            return (wm.T @ dy2).reshape(c, b, h, w)
        ho = kernels.conv_out_size(h, k, s)
        wo = kernels.conv_out_size(w, k, s)
        ckk = c * k * k
        dx = np.zeros((c, b, h, w))
        dw2 = np.zeros((self.out_ch, ckk))
        wmt = np.ascontiguousarray(wm.T)
        dbuf = None
        for c0, c1, blk in self._patch_blocks(x, k, s, ckk, ho, wo):
            dy_blk = np.ascontiguousarray(dy2[:, c0:c1])
            dw2 += dy_blk @ blk.T
            if dbuf is None or dbuf.shape[1] != blk.shape[1]:
                dbuf = np.empty_like(blk)
            np.matmul(wmt, dy_blk, out=dbuf)
            kernels.col2im_block(dbuf, k, s, c0 // wo, c1 // wo, dx)
        self.w.grad += dw2.reshape(self.w.value.shape)
        return dx


class BatchNorm2d:
    """Per-channel batch normalization with running statistics.

    Train mode standardizes by batch statistics (population variance) and,
    when asked, folds them into the running estimates with momentum; infer
    mode uses the running estimates only.
    """

    def __init__(self, name, channels, eps=1e-5, momentum=0.9):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.gamma = Param(f"{name}.gamma", np.ones(channels))
        self.beta = Param(f"{name}.beta", np.zeros(channels))
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.name = name

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def compute_stats(self, x2, train, update_running=False):
        """(mean, 1/sqrt(var + eps)) from batch stats (train) or running
        stats (infer); optionally folds batch stats into the running ones."""
        if train:
            mu, var = kernels.bn_stats(x2)
            if update_running:
                m = self.momentum
                self.running_mean = m * self.running_mean + (1.0 - m) * mu
                self.running_var = m * self.running_var + (1.0 - m) * var
        else:
            mu = self.running_mean
            var = self.running_var
        return mu, 1.0 / np.sqrt(var + self.eps)

    def forward(self, x, train, update_running=False, want_cache=False):
        x = _as_cbhw(x)
        if x.shape[0] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels")
        c = self.channels
        x2 = x.reshape(c, -1)
        mu, istd = self.compute_stats(x2, train, update_running)
        y = np.empty_like(x)
        # without a cache, xhat shares y's buffer (overwritten in place)
        xhat = np.empty_like(x) if want_cache else y
        kernels.bn_apply(x2, mu, istd, self.gamma.value, self.beta.value,
                         y.reshape(c, -1), xhat.reshape(c, -1))
        cache = (xhat, istd) if want_cache else None
        return y, cache

    def backward(self, dy, cache):
        if cache is None:
            raise RuntimeError(f"{self.name}: backward without forward cache")
        xhat, istd = cache
        c = self.channels
        dy2 = np.ascontiguousarray(dy).reshape(c, -1)
        xh2 = xhat.reshape(c, -1)
        s1, s2 = kernels.bn_reduce_grads(dy2, xh2)  # sum dy, sum dy*xhat
        self.beta.grad += s1
        self.gamma.grad += s2
        g = self.gamma.value
        dx = np.empty_like(dy2)
        kernels.bn_input_grad(dy2, xh2, istd, g, g * s1, g * s2, dx)
        return dx.reshape(dy.shape)


def _dropout_scale(channels, batch, rate, rng):
    """Per-(channel, sample) keep/scale factors, drawn channel-major."""
    u = rng.fill_uniform(channels * batch)
    keep = (u >= rate).astype(np.float64)
    keep *= 1.0 / (1.0 - rate)
    return keep.reshape(channels, batch, 1, 1)


class SpatialDropout2d:
    """Zeroes whole feature channels with probability ``rate`` in train
    mode, scaling survivors by 1/(1-rate); identity in infer mode."""

    def __init__(self, rate):
        if not (0.0 <= rate < 1.0):
            raise ValueError("dropout rate must satisfy 0 <= rate < 1")
        self.rate = rate

    def forward(self, x, train, rng=None, want_cache=False):
        """Train mode scales ``x`` in place; callers own their activation
        buffers inside the model."""
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        scale = _dropout_scale(x.shape[0], x.shape[1], self.rate, rng)
        np.multiply(x, scale, out=x)
        return x, (scale if want_cache else None)

    def backward(self, dy, cache):
        if cache is None:  # identity path
            return dy
        np.multiply(dy, cache, out=dy)
        return dy


class PreActBlock:
    """Batch norm -> ReLU -> convolution, with the norm and rectifier
    fused into single passes. The rectified activation doubles as both the
    convolution's cached input and the rectifier gate for backward, so no
    separate mask is stored."""

    def __init__(self, name, in_ch, out_ch, kernel, eps, momentum):
        self.bn = BatchNorm2d(f"{name}.bn", in_ch, eps, momentum)
        self.conv = Conv2d(f"{name}.conv", in_ch, out_ch, kernel)

    def params(self):
        return self.bn.params() + self.conv.params()

    def buffers(self):
        return self.bn.buffers()

    def init_params(self, rng):
        self.conv.init_params(rng)

    def forward(self, x, train, update_running=False, want_cache=False):
        x = _as_cbhw(x)
        bn = self.bn
        if x.shape[0] != bn.channels:
            raise ShapeError(f"{bn.name}: expected {bn.channels} channels")
        c = bn.channels
        x2 = x.reshape(c, -1)
        mu, istd = bn.compute_stats(x2, train, update_running)
        act = np.empty_like(x)
        xhat = np.empty_like(x) if want_cache else act
        kernels.bn_relu_apply(x2, mu, istd, bn.gamma.value, bn.beta.value,
                              act.reshape(c, -1), xhat.reshape(c, -1))
        y, conv_cache = self.conv.forward(act, want_cache)
        cache = (xhat, istd, act, conv_cache) if want_cache else None
        return y, cache

    def backward(self, dy, cache):
        xhat, istd, act, conv_cache = cache
        da = self.conv.backward(dy, conv_cache)
        c = self.bn.channels
        da2 = da.reshape(c, -1)
        a2 = act.reshape(c, -1)
        xh2 = xhat.reshape(c, -1)
        s1, s2 = kernels.bn_relu_reduce(da2, a2, xh2)
        self.bn.beta.grad += s1
        self.bn.gamma.grad += s2
        g = self.bn.gamma.value
        kernels.bn_relu_input_grad(da2, a2, xh2, istd, g, g * s1, g * s2, da2)
        return da


class ResidualBlock:
    """Stack of pre-activation blocks plus a shortcut.

    The shortcut is the identity when input and output channel counts
    match, otherwise a 1x1 projection convolution whose weights are the
    L1-penalized set.
    """

    def __init__(self, name, in_ch, out_ch, n_blocks, kernel, eps, momentum):
        self.blocks = []
        ch = in_ch
        for i in range(n_blocks):
            self.blocks.append(
                PreActBlock(f"{name}.block{i}", ch, out_ch, kernel, eps, momentum))
            ch = out_ch
        self.projection = None
        if in_ch != out_ch:
            self.projection = Conv2d(f"{name}.proj", in_ch, out_ch, 1, l1=True)

    def params(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.params())
        if self.projection is not None:
            out.extend(self.projection.params())
        return out

    def buffers(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.buffers())
        return out

    def init_params(self, rng):
        for blk in self.blocks:
            blk.init_params(rng)
        if self.projection is not None:
            self.projection.init_params(rng)

    def forward(self, x, train, update_running=False, want_cache=False):
        h = x
        block_caches = []
        for blk in self.blocks:
            h, c = blk.forward(h, train, update_running, want_cache)
            block_caches.append(c)
        if self.projection is None:
            shortcut, proj_cache = x, None
        else:
            shortcut, proj_cache = self.projection.forward(x, want_cache)
        np.add(h, shortcut, out=h)  # h is this block's own buffer
        cache = (block_caches, proj_cache) if want_cache else None
        return h, cache

    def backward(self, dy, cache):
        block_caches, proj_cache = cache
        if self.projection is None:
            dx_short = dy
        else:
            dx_short = self.projection.backward(dy, proj_cache)
        d = dy
        for blk, c in zip(reversed(self.blocks), reversed(block_caches)):
            d = blk.backward(d, c)
        np.add(d, dx_short, out=d)  # d is the first block's fresh gradient
        return d


def _upsample2x_forward(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample2x_backward(dy):
    c, b, h2, w2 = dy.shape
    return dy.reshape(c, b, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep the probability strictly inside (0, 1) even at saturation
    return np.clip(out, 1e-12, 1.0 - 1e-12)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``widths`` are the encoder channel counts from shallow to deep; the
    decoder mirrors them. Input extents must be divisible by
    2 ** len(widths).
    """

    in_channels: int = 1
    widths: tuple = (8, 16, 32)
    bottleneck: int = 64
    blocks_per_module: int = 2
    kernel: int = 3
    dropout_rate: float = 0.5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.9


def toy_config():
    """Small two-level model; trains and gradient-checks in seconds."""
    return ModelConfig(widths=(4, 8), bottleneck=16, dropout_rate=0.0)


class ModelCache:
    """Forward-pass byproducts needed by backward; one per forward call."""

    __slots__ = ("model", "items", "y")

    def __init__(self, model, items, y):
        self.model = model
        self.items = items
        self.y = y


class SegModel:
    """The full encoder-decoder; see the module docstring for the layout."""

    def __init__(self, cfg):
        self.cfg = cfg
        k, eps, mom = cfg.kernel, cfg.bn_eps, cfg.bn_momentum
        nb = cfg.blocks_per_module
        widths = list(cfg.widths)
        depth = len(widths)

        self.encoders = []
        self.downs = []
        ch = cfg.in_channels
        for i, w in enumerate(widths):
            self.encoders.append(
                ResidualBlock(f"enc{i}", ch, w, nb, k, eps, mom))
            nxt = widths[i + 1] if i + 1 < depth else cfg.bottleneck
            self.downs.append(Conv2d(f"down{i}", w, nxt, k, stride=2))
            ch = nxt
        self.bottleneck = ResidualBlock(
            "bottleneck", cfg.bottleneck, cfg.bottleneck, nb, k, eps, mom)
        self.ups = []
        self.decoders = []
        for i in reversed(range(depth)):
            prev = widths[i + 1] if i + 1 < depth else cfg.bottleneck
            self.ups.append(Conv2d(f"up{i}", prev, widths[i], k))
            self.decoders.append(
                ResidualBlock(f"dec{i}", 2 * widths[i], widths[i], nb, k, eps, mom))
        self.head = Conv2d("head", widths[0], 1, 1)
        self.dropout = SpatialDropout2d(cfg.dropout_rate)

        self._params = []
        for mod in (*self.encoders, *self.downs, self.bottleneck,
                    *self.ups, *self.decoders, self.head):
            self._params.extend(mod.params())

    @classmethod
    def create(cls, cfg, rng):
        """Build and He-initialize; draw order is the construction order."""
        model = cls(cfg)
        for mod in (*model.encoders, *model.downs, model.bottleneck,
                    *model.ups, *model.decoders, model.head):
            mod.init_params(rng)
        return model

    @property
    def depth(self):
        return len(self.cfg.widths)

    def parameters(self):
        return self._params

    def buffers(self):
        out = []
        for mod in (*self.encoders, self.bottleneck, *self.decoders):
            out.extend(mod.buffers())
        return out

    def zero_grads(self):
        for p in self._params:
            p.grad.fill(0.0)

    def projection_params(self):
        return [p for p in self._params if p.l1]

    def forward(self, x, train=False, rng=None, update_running=False,
                want_cache=False):
        """Run the network on (C, B, H, W) input; returns (probs, cache)."""
        x = _as_cbhw(x)
        c, b, h, w = x.shape
        if c != self.cfg.in_channels:
            raise ShapeError(f"expected {self.cfg.in_channels} input channels")
        div = 1 << self.depth
        if h % div or w % div:
            raise ShapeError(
                f"input extents must be divisible by {div}, got {h}x{w}")
        items = []
        skips = []
        for enc, down in zip(self.encoders, self.downs):
            x, c_enc = enc.forward(x, train, update_running, want_cache)
            x, c_drop = self.dropout.forward(x, train, rng, want_cache)
            skips.append(x)
            x, c_down = down.forward(x, want_cache)
            items.append((c_enc, c_drop, c_down))
        x, c_bott = self.bottleneck.forward(x, train, update_running, want_cache)
        x, c_bdrop = self.dropout.forward(x, train, rng, want_cache)
        items.append((c_bott, c_bdrop))
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = _upsample2x_forward(x)
            x, c_up = up.forward(x, want_cache)
            x = np.concatenate([x, skip], axis=0)
            x, c_dec = dec.forward(x, train, update_running, want_cache)
            x, c_drop = self.dropout.forward(x, train, rng, want_cache)
            items.append((c_up, c_dec, c_drop))
        z, c_head = self.head.forward(x, want_cache)
        y = _sigmoid(z)
        items.append(c_head)
        cache = ModelCache(self, items, y) if want_cache else None
        return y, cache

    def backward(self, d_y, cache, lambda_l1=0.0):
        """Accumulate parameter gradients for upstream gradient ``d_y``.

        Adds the L1 subgradient lambda_l1 * sign(w) (sign(0) = 0) to every
        projection weight. Returns a {name: gradient} view of the result.
        """
        if cache is None:
            raise RuntimeError("model backward without forward cache")
        items = list(cache.items)
        y = cache.y
        c_head = items.pop()
        dz = d_y * (y * (1.0 - y))
        d = self.head.backward(dz, c_head)

        skip_grads = []
        for up, dec in zip(reversed(self.ups), reversed(self.decoders)):
            c_up, c_dec, c_drop = items.pop()
            d = self.dropout.backward(d, c_drop)
            d = dec.backward(d, c_dec)
            w_dec = dec.blocks[-1].conv.out_ch
            d, d_skip = d[:w_dec], d[w_dec:]
            skip_grads.append(d_skip)
            d = up.backward(d, c_up)
            d = _upsample2x_backward(d)

        c_bott, c_bdrop = items.pop()
        d = self.dropout.backward(d, c_bdrop)
        d = self.bottleneck.backward(d, c_bott)

        # skip_grads were collected shallow-to-deep; encoders unwind deep-first
        for enc, down, d_skip in zip(reversed(self.encoders),
                                     reversed(self.downs),
                                     reversed(skip_grads)):
            c_enc, c_drop, c_down = items.pop()
            d = down.backward(d, c_down)
            d = d + d_skip
            d = self.dropout.backward(d, c_drop)
            d = enc.backward(d, c_enc)

        if lambda_l1:
            for p in self.projection_params():
                p.grad += lambda_l1 * np.sign(p.value)
        return {p.name: p.grad for p in self._params}


# ---------------------------------------------------------------------------
# Single-image functional surface (channel-first, no batch axis).


def _single_to_cbhw(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got shape {x.shape}")
    return np.ascontiguousarray(x[:, None])


def conv2d(x, layer, mode="infer"):
    """Convolve a (C, H, W) tensor; ``mode`` is accepted for signature
    symmetry (convolution itself has no mode-dependent behavior)."""
    y, _ = layer.forward(_single_to_cbhw(x), want_cache=False)
    return y[:, 0]


def conv2d_with_cache(x, layer):
    """Like conv2d but returns (y, cache) for conv2d_backward."""
    y, cache = layer.forward(_single_to_cbhw(x), want_cache=True)
    return y[:, 0], cache


def conv2d_backward(grad_out, cache, layer):
    """Gradients of conv2d: (grad_input, grad_weights, grad_bias).

    Pure: does not touch the layer's accumulators. Requires the cache from
    conv2d_with_cache.
    """
    if cache is None:
        raise RuntimeError("conv2d_backward requires the forward cache")
    (c, b, h, w), cols = cache
    k, s = layer.kernel, layer.stride
    dy2 = np.ascontiguousarray(grad_out).reshape(layer.out_ch, -1)
    grad_b = dy2.sum(axis=1)
    grad_w = (dy2 @ cols.T).reshape(layer.w.value.shape)
    dcols = layer.w.value.reshape(layer.out_ch, c * k * k).T @ dy2
    if k == 1 and s == 1:
        dx = dcols.reshape(c, b, h, w)
    else:
        dx = kernels.col2im(dcols, c, b, h, w, k, s)
    return dx[:, 0], grad_w, grad_b


def batch_norm(x, layer, mode="infer"):
    """Normalize a (C, H, W) tensor; train mode also updates running stats."""
    y, _ = layer.forward(_single_to_cbhw(x), train=(mode == "train"),
                         update_running=(mode == "train"))
    return y[:, 0]


def spatial_dropout(x, rate, rng, mode="infer"):
    """Channel dropout on a (C, H, W) tensor; identity in infer mode."""
    if not (0.0 <= rate < 1.0):
        raise ValueError("dropout rate must satisfy 0 <= rate < 1")
    if mode != "train" or rate == 0.0:
        return x
    scale = _dropout_scale(x.shape[0], 1, rate, rng)
    return x * scale[:, 0]


def residual_forward(x, module, mode="infer"):
    """Residual sub-module applied to a (C, H, W) tensor."""
    y, _ = module.forward(_single_to_cbhw(x), train=(mode == "train"),
                          update_running=(mode == "train"))
    return y[:, 0]


def model_forward(image, model, mode="infer", rng=None):
    """Heat map for one image.

    ``image`` is (H, W) or (1, H, W); the result is (H, W) with values
    strictly inside (0, 1). Infer mode is deterministic and reentrant.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] != model.cfg.in_channels:
        raise ShapeError(f"expected (1, H, W) image, got {img.shape}")
    y, _ = model.forward(img[:, None], train=(mode == "train"), rng=rng,
                         update_running=(mode == "train"))
    return y[0, 0]


def model_forward_with_cache(image, model, mode="train", rng=None,
                             update_running=False):
    """Forward pass that also returns the cache for model_backward."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    y, cache = model.forward(img[:, None], train=(mode == "train"), rng=rng,
                             update_running=update_running, want_cache=True)
    return y[0, 0], cache


def model_backward(d_heatmap, cache, lambda_l1=0.0):
    """Gradients of every model parameter for a single-image forward.

    ``d_heatmap`` is (H, W); gradients accumulate into the owning model's
    parameters and are also returned as a {name: gradient} dict.
    """
    if cache is None:
        raise RuntimeError("model backward without forward cache")
    d = np.asarray(d_heatmap, dtype=np.float64)
    if d.ndim == 2:
        d = d[None, None]
    return cache.model.backward(d, cache, lambda_l1)


def l1_penalty(model, lambda_l1):
    """lambda_l1 times the absolute sum of all projection weights.

    The sum runs left-to-right over each weight tensor in parameter order,
    so the value is exactly reproducible.
    """
    from .tensor import seq_sum
    total = 0.0
    for p in model.projection_params():
        total += seq_sum(np.abs(p.value))
    return lambda_l1 * total
