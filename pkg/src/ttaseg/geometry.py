"""Rigid affine transforms (translation + rotation) and image warping.

A transform is t_x, t_y, theta with the homogeneous matrix

    [[cos t, -sin t, t_x],
     [sin t,  cos t, t_y],
     [0,      0,     1  ]]

Warping is inverse-mapping resampling about the image center
((W-1)/2, (H-1)/2), bilinear for continuous images and heat maps,
nearest-neighbor for binary masks. Samples falling outside the source frame
produce 0 and are flagged invalid so downstream statistics can skip them.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ShapeError


@dataclass(frozen=True)
class AffineTransform:
    """Rigid transform with its matrix and closed-form exact inverse."""

    t_x: float
    t_y: float
    theta: float
    matrix: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class TransformConfig:
    """Sampling ranges: T pixels of translation, R degrees of rotation."""

    translation_px: float = 20.0
    rotation_deg: float = 20.0

    def __post_init__(self):
        if self.translation_px < 0 or self.rotation_deg < 0:
            raise ValueError("transform ranges must be nonnegative")


@dataclass
class WarpResult:
    """Warped image plus a flag per pixel: True where the sampled source
    location lay fully inside the source frame."""

    image: np.ndarray
    validity: np.ndarray


def build_affine(t_x, t_y, theta):
    """Transform from parameters; all inputs must be finite."""
    if not (math.isfinite(t_x) and math.isfinite(t_y) and math.isfinite(theta)):
        raise ValueError("affine parameters must be finite")
    c = math.cos(theta)
    s = math.sin(theta)
    m = np.array([[c, -s, t_x],
                  [s, c, t_y],
                  [0.0, 0.0, 1.0]])
    return AffineTransform(float(t_x), float(t_y), float(theta), m)


def identity_transform():
    return build_affine(0.0, 0.0, 0.0)


def sample_transform(rng, cfg):
    """Draw a random transform: t_x, t_y ~ U(-T/2, T/2), then
    theta ~ U(-pi*R/360, pi*R/360). Draw order is part of the contract."""
    half_t = cfg.translation_px / 2.0
    half_r = math.pi * cfg.rotation_deg / 360.0
    t_x = rng.uniform(-half_t, half_t)
    t_y = rng.uniform(-half_t, half_t)
    theta = rng.uniform(-half_r, half_r)
    return build_affine(t_x, t_y, theta)


def invert(a):
    """Exact inverse of a rigid transform.

    The rotation block transposes and the translation maps to -R^T t, so
    the result is again a rigid transform and invert(invert(a)) == a up to
    floating-point rounding of the parameter arithmetic.
    """
    c = math.cos(a.theta)
    s = math.sin(a.theta)
    return build_affine(-(c * a.t_x + s * a.t_y),
                        s * a.t_x - c * a.t_y,
                        -a.theta)


def _lookup_coeffs(a):
    """Upper 2x3 of the inverse matrix: destination -> source lookup."""
    inv = invert(a).matrix
    return (inv[0, 0], inv[0, 1], inv[0, 2], inv[1, 0], inv[1, 1], inv[1, 2])


def warp(image, a, interpolation="bilinear"):
    """Resample ``image`` under transform ``a`` about the image center.

    Each destination pixel p takes the value of the source at a^-1 p.
    Returns a WarpResult; invalid pixels hold 0.
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise ShapeError("warp expects an HxW image with H, W >= 2")
    h, w = img.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    coeffs = _lookup_coeffs(a)
    if interpolation == "bilinear":
        out, valid = kernels.warp_bilinear(img, coeffs, cx, cy)
    elif interpolation == "nearest":
        out, valid = kernels.warp_nearest(img, coeffs, cx, cy)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return WarpResult(out, valid)


def warp_matrix(image, matrix, interpolation="bilinear"):
    """Resample under an arbitrary invertible 3x3 homogeneous matrix.

    Used by training augmentation, which also scales (zoom); the matrix is
    inverted numerically. Same center convention and validity semantics as
    :func:`warp`.
    """
    img = np.ascontiguousarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise ShapeError("warp expects an HxW image with H, W >= 2")
    h, w = img.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    inv = np.linalg.inv(np.asarray(matrix, dtype=np.float64))
    coeffs = (inv[0, 0], inv[0, 1], inv[0, 2], inv[1, 0], inv[1, 1], inv[1, 2])
    if interpolation == "bilinear":
        out, valid = kernels.warp_bilinear(img, coeffs, cx, cy)
    elif interpolation == "nearest":
        out, valid = kernels.warp_nearest(img, coeffs, cx, cy)
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return WarpResult(out, valid)
