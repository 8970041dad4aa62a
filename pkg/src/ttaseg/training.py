"""Training: Adam updates, train-time augmentation, splits, epoch loop.

Everything is deterministic given the config seed. Randomness is organized
as derived streams so the schedule below never depends on execution order:

    derive_stream(seed, 0)                  model initialization (callers)
    derive_stream(seed, 1)                  subject-level split
    derive_stream(seed, SHUFFLE_BASE + e)   example order in epoch e
    derive_stream(seed, AUGMENT_BASE + g)   augmentation for global step g
    derive_stream(seed, DROPOUT_BASE + g)   dropout for global step g
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingError
from .geometry import warp_matrix
from .losses import combined_loss, hard_dice, loss_gradient
from .network import l1_penalty
from .rng import derive_stream

INIT_STREAM = 0
SPLIT_STREAM = 1
SHUFFLE_BASE = 1_000_000
AUGMENT_BASE = 10_000_000
DROPOUT_BASE = 20_000_000


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    m: list
    v: list
    t: int = 0
    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, alpha=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params],
                   alpha=alpha, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params, grads, state):
    """One Adam update, in place, with bias correction:

        m_hat = m / (1 - beta1^t),  v_hat = v / (1 - beta2^t)
        w    -= alpha * m_hat / (sqrt(v_hat) + eps)
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("parameter/gradient/state lists differ in length")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape}")
        state.m[i] *= state.beta1
        state.m[i] += (1.0 - state.beta1) * g
        state.v[i] *= state.beta2
        state.v[i] += (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p -= state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    dropout_rate: float = 0.5
    lambda_l1: float = 1e-5
    batch_size: int = 8
    seed: int = 0
    holdout_subjects: int = 5
    augment: bool = True
    flip_prob: float = 0.5
    rotation_deg: float = 15.0
    translation_frac: float = 0.10
    zoom_frac: float = 0.10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValueError("dropout rate must satisfy 0 <= rate < 1")
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ValueError("flip probability must lie in [0, 1]")
        if self.learning_rate <= 0 or self.lambda_l1 < 0:
            raise ValueError("learning rate must be positive, l1 nonnegative")
        if min(self.rotation_deg, self.translation_frac, self.zoom_frac) < 0:
            raise ValueError("augmentation ranges must be nonnegative")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_bce: float
    train_dice: float
    val_dice: float = float("nan")


@dataclass
class FitResult:
    log: list = field(default_factory=list)
    train_subjects: list = field(default_factory=list)
    test_subjects: list = field(default_factory=list)


def augment(image, mask, rng, cfg):
    """One random geometric augmentation applied identically to image and
    mask.

    Six draws are consumed in a fixed order (hflip, vflip, rotation, tx,
    ty, zoom) whether or not each is used, so the stream position never
    depends on sampled values. Flips are exact array reversals; the rest
    is a single warp, bilinear for the image and nearest for the mask so
    the mask stays binary.
    """
    if image.shape != mask.shape:
        raise ShapeError("image and mask must share a shape")
    if not cfg.augment:
        return image, mask
    h, w = image.shape
    do_h = rng.uniform(0.0, 1.0) < cfg.flip_prob
    do_v = rng.uniform(0.0, 1.0) < cfg.flip_prob
    half_rot = math.pi * cfg.rotation_deg / 180.0 / 2.0
    theta = rng.uniform(-half_rot, half_rot)
    t_x = rng.uniform(-cfg.translation_frac * w, cfg.translation_frac * w)
    t_y = rng.uniform(-cfg.translation_frac * h, cfg.translation_frac * h)
    zoom = rng.uniform(1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac)

    img, msk = image, mask
    if do_h:
        img = img[:, ::-1]
        msk = msk[:, ::-1]
    if do_v:
        img = img[::-1, :]
        msk = msk[::-1, :]
    if theta != 0.0 or t_x != 0.0 or t_y != 0.0 or zoom != 1.0:
        c, s = math.cos(theta), math.sin(theta)
        m = np.array([[zoom * c, -zoom * s, t_x],
                      [zoom * s, zoom * c, t_y],
                      [0.0, 0.0, 1.0]])
        img = warp_matrix(img, m, "bilinear").image
        msk = warp_matrix(msk, m, "nearest").image
    return np.ascontiguousarray(img), np.ascontiguousarray(msk)


def split_dataset(dataset, rng, holdout_subjects):
    """Partition records by subject: no subject appears on both sides.

    Returns (train_records, test_records, train_subject_ids,
    test_subject_ids). Subjects are shuffled with the supplied generator
    and the first ``holdout_subjects`` go to the test side.
    """
    subjects = sorted({rec.subject_id for rec in dataset})
    if holdout_subjects >= len(subjects) and holdout_subjects > 0:
        raise ValueError(
            f"cannot hold out {holdout_subjects} of {len(subjects)} subjects")
    if holdout_subjects < 0:
        raise ValueError("holdout_subjects must be nonnegative")
    order = list(subjects)
    rng.shuffle(order)
    test_ids = set(order[:holdout_subjects])
    train = [rec for rec in dataset if rec.subject_id not in test_ids]
    test = [rec for rec in dataset if rec.subject_id in test_ids]
    return train, test, sorted(set(order[holdout_subjects:])), sorted(test_ids)


def _validation_dice(model, records, threshold=0.5, chunk=16):
    """Mean hard Dice of fixed-threshold predictions on ``records``."""
    if not records:
        return float("nan")
    scores = []
    for i in range(0, len(records), chunk):
        part = records[i:i + chunk]
        batch = np.stack([r.image for r in part])[None]  # (1, B, H, W)
        probs, _ = model.forward(batch, train=False)
        for j, rec in enumerate(part):
            pred = (probs[0, j] > threshold).astype(np.float64)
            scores.append(hard_dice(rec.mask, pred))
    return float(np.mean(scores))


def fit(model, dataset, cfg):
    """Train ``model`` on ``dataset`` and return a FitResult.

    When cfg.holdout_subjects > 0 the dataset is split at subject
    granularity first and the held-out side provides the per-epoch
    validation Dice (fixed 0.5 threshold on plain forward passes).
    Raises TrainingError naming the epoch if the loss goes non-finite.
    """
    if not dataset:
        raise ValueError("empty dataset")
    result = FitResult()
    if cfg.holdout_subjects > 0:
        train_recs, val_recs, train_ids, test_ids = split_dataset(
            dataset, derive_stream(cfg.seed, SPLIT_STREAM), cfg.holdout_subjects)
        result.train_subjects = train_ids
        result.test_subjects = test_ids
    else:
        train_recs, val_recs = list(dataset), []
        result.train_subjects = sorted({r.subject_id for r in dataset})

    model.dropout.rate = cfg.dropout_rate
    params = [p.value for p in model.parameters()]
    adam = AdamState.for_params(params, alpha=cfg.learning_rate,
                                beta1=cfg.beta1, beta2=cfg.beta2,
                                eps=cfg.adam_eps)
    global_step = 0
    n = len(train_recs)
    for epoch in range(cfg.epochs):
        order = list(range(n))
        derive_stream(cfg.seed, SHUFFLE_BASE + epoch).shuffle(order)
        loss_sum = bce_sum = dice_sum = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            aug_rng = derive_stream(cfg.seed, AUGMENT_BASE + global_step)
            images, masks = [], []
            for i in idx:
                img, msk = augment(train_recs[i].image, train_recs[i].mask,
                                   aug_rng, cfg)
                images.append(img)
                masks.append(msk)
            xb = np.stack(images)[None]  # (1, B, H, W)
            tb = np.stack(masks)[None]

            drop_rng = derive_stream(cfg.seed, DROPOUT_BASE + global_step)
            probs, cache = model.forward(xb, train=True, rng=drop_rng,
                                         update_running=True, want_cache=True)
            l1 = l1_penalty(model, cfg.lambda_l1)
            breakdown = combined_loss(tb, probs, l1_term=l1)
            if not math.isfinite(breakdown.total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} (step {global_step})")
            model.zero_grads()
            model.backward(loss_gradient(tb, probs), cache,
                           lambda_l1=cfg.lambda_l1)
            adam_step(params, [p.grad for p in model.parameters()], adam)

            loss_sum += breakdown.total
            bce_sum += breakdown.bce
            dice_sum += breakdown.soft_dice
            n_batches += 1
            global_step += 1
        result.log.append(EpochLog(
            epoch=epoch,
            train_loss=loss_sum / n_batches,
            train_bce=bce_sum / n_batches,
            train_dice=dice_sum / n_batches,
            val_dice=_validation_dice(model, val_recs)))
    return result
