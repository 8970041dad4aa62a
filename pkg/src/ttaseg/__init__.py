"""Uncertainty-aware binary segmentation.

A small fully convolutional network (hand-written forward and backward
passes) is trained on synthetic phantoms; at test time, Monte Carlo
augmentation with random rigid transforms yields per-pixel median and
standard-deviation maps, and an uncertainty-adaptive threshold produces
the final mask.
"""

from .geometry import (AffineTransform, TransformConfig, WarpResult,
                       build_affine, invert, sample_transform, warp)
from .inference import (McConfig, PixelStats, SegmentationResult,
                        ThresholdConfig, adaptive_threshold, aggregate,
                        mc_predict, run_pipeline, segment)
from .kernels import BACKEND
from .losses import LossBreakdown, bce, combined_loss, hard_dice, \
    loss_gradient, soft_dice
from .network import (ModelConfig, SegModel, batch_norm, conv2d,
                      conv2d_backward, l1_penalty, model_backward,
                      model_forward, residual_forward, spatial_dropout)
from .phantoms import (Phantom, PhantomConfig, generate_dataset,
                       generate_phantom, load_dataset, save_dataset)
from .rng import Rng, derive_stream
from .training import (AdamState, TrainConfig, adam_step, augment, fit,
                       split_dataset)

__version__ = "0.1.0"
