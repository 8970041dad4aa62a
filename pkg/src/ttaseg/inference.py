"""Monte Carlo test-time augmentation, aggregation, adaptive thresholding.

For each of K samples the input image is warped by a random rigid
transform, pushed through the network in infer mode, and the heat map is
warped back with the stored exact inverse. Pixels whose inverse-warped
value would come from outside the predicted frame are flagged invalid and
excluded from the statistics, so zero fill never contaminates them.

Per pixel, the valid samples yield a median heat value m and a population
standard deviation sigma. The decision threshold is then

    D = baseline + gamma * sigma

and the final mask is m > D (strict). With gamma = 0 this reduces exactly
to fixed hard thresholding of the median map; with the transform ranges
also zero and K = 1 it reduces to fixed thresholding of the plain forward
pass.

Sample k always draws from derive_stream(seed, k), and each sample writes
only its own stack slot, so results are identical whether samples run
sequentially or on a thread pool (TTASEG_THREADS caps the pool).
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .geometry import TransformConfig, identity_transform, invert, \
    sample_transform, warp
from .rng import derive_stream


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo sampling parameters.

    ``include_identity`` reserves sample 0 for the untransformed image so
    the plain prediction is always part of the statistics.
    """

    samples: int = 16
    transform: TransformConfig = field(default_factory=TransformConfig)
    seed: int = 0
    include_identity: bool = True

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")


@dataclass(frozen=True)
class ThresholdConfig:
    baseline: float = 0.5
    gamma: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.baseline < 1.0):
            raise ValueError("baseline must lie strictly inside (0, 1)")
        if self.gamma < 0.0:
            raise ValueError("gamma must be nonnegative")


@dataclass
class PixelStats:
    """Per-pixel statistics over the valid Monte Carlo samples."""

    median: np.ndarray
    sigma: np.ndarray
    valid_count: np.ndarray


@dataclass
class McResult:
    stack: np.ndarray      # (K, H, W) inverse-warped heat maps
    validity: np.ndarray   # (K, H, W) bool
    transforms: list       # the K sampled transforms, in sample order


@dataclass
class SegmentationResult:
    """Final mask plus the maps it was derived from."""

    mask: np.ndarray
    median: np.ndarray
    sigma: np.ndarray
    threshold: np.ndarray


def _thread_budget():
    raw = os.environ.get("TTASEG_THREADS", "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError as exc:
            raise ValueError(f"TTASEG_THREADS must be an integer: {raw!r}") from exc
        return max(1, n)
    return os.cpu_count() or 1


def mc_predict(model, image, cfg):
    """Heat-map stack and validity for K transform samples of one image.

    Pure function of (model, image, cfg): per-sample streams and
    slot-indexed writes make the result independent of thread count and
    execution order.
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("mc_predict expects an HxW image")
    k = cfg.samples
    h, w = img.shape
    stack = np.empty((k, h, w), dtype=np.float64)
    validity = np.empty((k, h, w), dtype=bool)
    transforms = [None] * k

    def run_sample(i):
        if i == 0 and cfg.include_identity:
            t = identity_transform()
        else:
            t = sample_transform(derive_stream(cfg.seed, i), cfg.transform)
        warped = warp(img, t, "bilinear").image
        heat, _ = model.forward(warped[None, None], train=False)
        back = warp(heat[0, 0], invert(t), "bilinear")
        stack[i] = back.image
        validity[i] = back.validity
        transforms[i] = t

    threads = min(_thread_budget(), k)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_sample, range(k)))
    else:
        for i in range(k):
            run_sample(i)
    return McResult(stack=stack, validity=validity, transforms=transforms)


def aggregate(stack, validity):
    """Per-pixel median and population sigma over the valid samples.

    Median of an even count is the mean of the two central order
    statistics. Pixels valid in zero samples fall back to median 0 and
    sigma 0 (recognizable through valid_count == 0).
    """
    stack = np.asarray(stack, dtype=np.float64)
    validity = np.asarray(validity, dtype=bool)
    if stack.shape != validity.shape:
        raise ShapeError("stack and validity must share a shape")
    if stack.ndim != 3 or stack.shape[0] < 1:
        raise ValueError("need a (K, H, W) stack with K >= 1")
    k = stack.shape[0]
    count = validity.sum(axis=0)
    any_valid = count > 0
    safe = np.maximum(count, 1)

    # invalid entries sort to the end; order statistics index only the front
    padded = np.where(validity, stack, np.inf)
    padded.sort(axis=0)
    lo = np.take_along_axis(padded, ((safe - 1) // 2)[None], axis=0)[0]
    hi = np.take_along_axis(padded, (safe // 2)[None], axis=0)[0]
    median = np.where(any_valid, 0.5 * (lo + hi), 0.0)

    masked = np.where(validity, stack, 0.0)
    mean = masked.sum(axis=0) / safe
    dev = np.where(validity, stack - mean[None], 0.0)
    var = (dev * dev).sum(axis=0) / safe
    sigma = np.where(any_valid, np.sqrt(var), 0.0)
    return PixelStats(median=median, sigma=sigma,
                      valid_count=np.minimum(count, k).astype(np.int64))


def adaptive_threshold(stats, cfg):
    """Per-pixel decision level: baseline + gamma * sigma."""
    return cfg.baseline + cfg.gamma * stats.sigma


def segment(stats, threshold_map):
    """Binary mask: 1 where the median strictly exceeds the threshold."""
    if stats.median.shape != np.shape(threshold_map):
        raise ShapeError("median and threshold maps must share a shape")
    mask = (stats.median > threshold_map).astype(np.float64)
    return SegmentationResult(mask=mask, median=stats.median,
                              sigma=stats.sigma, threshold=np.asarray(threshold_map))


def run_pipeline(model, image, mc_cfg, th_cfg):
    """Full pipeline: sample, predict, invert, aggregate, threshold."""
    mc = mc_predict(model, image, mc_cfg)
    stats = aggregate(mc.stack, mc.validity)
    d = adaptive_threshold(stats, th_cfg)
    return segment(stats, d)
