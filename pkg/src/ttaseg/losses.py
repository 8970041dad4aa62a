"""Training objective and evaluation metric.

The training loss couples binary cross-entropy with an exponentiated soft
Dice term:

    loss = BCE(y_t, y_p) - exp(1 + dice(y_t, y_p))

Blowing the Dice coefficient up through the exponential keeps its gradient
contribution large (the factor is at least e), which counters vanishing
gradients once predictions are mostly right. A perfect prediction drives
the loss toward -e^2.

The soft Dice here is the smoothed differentiable form with additive
constant 1.0 in numerator and denominator; the hard Dice used for
evaluation is the plain set-overlap ratio on binary masks.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import seq_sum

CLIP_EPS = 1e-7    # probability clipping for finite logs
DICE_SMOOTH = 1.0  # additive smoothing in the soft Dice


@dataclass(frozen=True)
class LossBreakdown:
    bce: float
    soft_dice: float
    combined: float        # bce - exp(1 + soft_dice)
    l1_term: float = 0.0   # optional weight penalty, tracked separately

    @property
    def total(self):
        return self.combined + self.l1_term


def _check_same_shape(y_t, y_p):
    if y_t.shape != y_p.shape:
        raise ShapeError(f"shape mismatch: {y_t.shape} vs {y_p.shape}")


def bce(y_t, y_p):
    """Mean binary cross-entropy; predictions are clipped to
    [CLIP_EPS, 1 - CLIP_EPS] before the logs."""
    y_t = np.asarray(y_t, dtype=np.float64)
    y_p = np.asarray(y_p, dtype=np.float64)
    _check_same_shape(y_t, y_p)
    p = np.clip(y_p, CLIP_EPS, 1.0 - CLIP_EPS)
    terms = -(y_t * np.log(p) + (1.0 - y_t) * np.log1p(-p))
    return seq_sum(terms) / terms.size


def soft_dice(y_t, y_p):
    """Smoothed Dice on probabilities:
    (2 * sum(t*p) + 1) / (sum(t) + sum(p) + 1)."""
    y_t = np.asarray(y_t, dtype=np.float64)
    y_p = np.asarray(y_p, dtype=np.float64)
    _check_same_shape(y_t, y_p)
    inter = seq_sum(y_t * y_p)
    return (2.0 * inter + DICE_SMOOTH) / (seq_sum(y_t) + seq_sum(y_p) + DICE_SMOOTH)


def combined_loss(y_t, y_p, l1_term=0.0):
    """Full breakdown of the objective on one prediction."""
    b = bce(y_t, y_p)
    d = soft_dice(y_t, y_p)
    return LossBreakdown(bce=b, soft_dice=d,
                         combined=b - math.exp(1.0 + d), l1_term=l1_term)


def loss_gradient(y_t, y_p):
    """Analytic d(combined)/d(y_p), elementwise.

    The BCE part is zero wherever clipping is active (the clipped loss is
    flat there); the Dice part is scaled by exp(1 + dice) via the chain
    rule.
    """
    y_t = np.asarray(y_t, dtype=np.float64)
    y_p = np.asarray(y_p, dtype=np.float64)
    _check_same_shape(y_t, y_p)
    n = y_p.size

    p = np.clip(y_p, CLIP_EPS, 1.0 - CLIP_EPS)
    inside = (y_p >= CLIP_EPS) & (y_p <= 1.0 - CLIP_EPS)
    g_bce = np.where(inside, (p - y_t) / (p * (1.0 - p) * n), 0.0)

    inter = seq_sum(y_t * y_p)
    denom = seq_sum(y_t) + seq_sum(y_p) + DICE_SMOOTH
    dice = (2.0 * inter + DICE_SMOOTH) / denom
    # quotient rule: d dice / d p_i = (2 t_i * denom - (2*inter + smooth)) / denom^2
    g_dice = (2.0 * y_t * denom - (2.0 * inter + DICE_SMOOTH)) / (denom * denom)
    return g_bce - math.exp(1.0 + dice) * g_dice


def hard_dice(mask_a, mask_b):
    """Set-overlap Dice of two binary masks; 1.0 when both are empty."""
    a = np.asarray(mask_a, dtype=np.float64)
    b = np.asarray(mask_b, dtype=np.float64)
    _check_same_shape(a, b)
    for name, m in (("mask_a", a), ("mask_b", b)):
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError(f"{name} is not binary")
    inter = float(np.sum(a * b))
    size = float(np.sum(a) + np.sum(b))
    if size == 0.0:
        return 1.0
    return 2.0 * inter / size
