"""Synthetic cardiac-like phantoms with exact ground truth.

Each phantom is a dark background (0.1) carrying a bright annulus (0.8,
a myocardium stand-in) around a mid-intensity disk (0.5, the blood pool);
the disk is the ground-truth mask. Region boundaries get a one-pixel
linear intensity ramp so edges are soft, then a low-frequency multiplicative
bias field and additive Gaussian noise are applied and the image is clipped
to [0, 1].

Subjects model patients: ring geometry (radii, wall, base offset) is drawn
once per subject id, and slices within a subject differ only by a small
extra jitter, the bias field, and noise. Generation is a pure function of
(seed, subject_id, slice_id), so datasets are reproducible record by
record regardless of generation order.

Dataset directory layout:
    manifest.txt   'count N' / 'size S' then one 'subject slice' line per record
    data.ntf       per record: the image then the mask, as NTF1 blocks
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .tensor import read_ntf, write_ntf

_SUBJECT_STRIDE = 1 << 20  # stream index block per subject


@dataclass
class Phantom:
    image: np.ndarray
    mask: np.ndarray
    subject_id: int
    slice_id: int


@dataclass(frozen=True)
class PhantomConfig:
    size: int = 64
    pool_radius_min: float = 6.0
    pool_radius_max: float = 12.0
    wall_min: float = 2.0
    wall_max: float = 4.0
    center_jitter: float = 6.0
    noise_sigma: float = 0.05
    bias_amplitude: float = 0.10

    def __post_init__(self):
        if self.size < 16:
            raise ValueError("phantom size must be at least 16 pixels")
        if not (0 < self.pool_radius_min <= self.pool_radius_max):
            raise ValueError("pool radius range is invalid")
        if not (0 < self.wall_min <= self.wall_max):
            raise ValueError("wall thickness range is invalid")
        if self.center_jitter < 0 or self.noise_sigma < 0 or self.bias_amplitude < 0:
            raise ValueError("jitter, noise and bias must be nonnegative")
        if self.pool_radius_max + self.wall_max + self.center_jitter >= self.size / 2:
            raise ValueError("ring plus jitter does not fit inside the image")


BACKGROUND = 0.1
WALL_INTENSITY = 0.8
POOL_INTENSITY = 0.5


def _ramp_profile(d, r_pool, r_outer):
    """Radial intensity with 1-px linear ramps at both region boundaries."""
    vals = np.full(d.shape, BACKGROUND)
    vals = np.where(d <= r_pool - 0.5, POOL_INTENSITY, vals)
    in_ramp1 = (d > r_pool - 0.5) & (d < r_pool + 0.5)
    vals = np.where(in_ramp1, POOL_INTENSITY
                    + (WALL_INTENSITY - POOL_INTENSITY) * (d - (r_pool - 0.5)), vals)
    plateau = (d >= r_pool + 0.5) & (d <= r_outer - 0.5)
    vals = np.where(plateau, WALL_INTENSITY, vals)
    in_ramp2 = (d > r_outer - 0.5) & (d < r_outer + 0.5)
    vals = np.where(in_ramp2, WALL_INTENSITY
                    + (BACKGROUND - WALL_INTENSITY) * (d - (r_outer - 0.5)), vals)
    return vals


def generate_phantom(rng, cfg, subject_id, slice_id):
    """One phantom; determined entirely by (rng.seed, subject_id, slice_id)."""
    if subject_id < 0 or slice_id < 0:
        raise ValueError("subject and slice ids must be nonnegative")
    if slice_id >= _SUBJECT_STRIDE - 1:
        raise ValueError("slice id too large")

    subj = rng.derive(subject_id * _SUBJECT_STRIDE)
    r_pool = subj.uniform(cfg.pool_radius_min, cfg.pool_radius_max)
    wall = subj.uniform(cfg.wall_min, cfg.wall_max)
    base_ox = subj.uniform(-2.0 * cfg.center_jitter / 3.0,
                           2.0 * cfg.center_jitter / 3.0)
    base_oy = subj.uniform(-2.0 * cfg.center_jitter / 3.0,
                           2.0 * cfg.center_jitter / 3.0)

    sl = rng.derive(subject_id * _SUBJECT_STRIDE + slice_id + 1)
    ox = base_ox + sl.uniform(-cfg.center_jitter / 3.0, cfg.center_jitter / 3.0)
    oy = base_oy + sl.uniform(-cfg.center_jitter / 3.0, cfg.center_jitter / 3.0)
    bias_angle = sl.uniform(0.0, 2.0 * math.pi)
    bias_phase = sl.uniform(0.0, 2.0 * math.pi)
    bias_freq = sl.uniform(0.5, 1.5)

    s = cfg.size
    cx = (s - 1) / 2.0 + ox
    cy = (s - 1) / 2.0 + oy
    ys, xs = np.mgrid[0:s, 0:s].astype(np.float64)
    d = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)

    image = _ramp_profile(d, r_pool, r_pool + wall)
    mask = (d <= r_pool).astype(np.float64)

    if cfg.bias_amplitude > 0.0:
        u = math.cos(bias_angle) * (xs - s / 2.0) + math.sin(bias_angle) * (ys - s / 2.0)
        image = image * (1.0 + cfg.bias_amplitude
                         * np.sin(2.0 * math.pi * bias_freq * u / s + bias_phase))
    if cfg.noise_sigma > 0.0:
        image = image + sl.fill_normal(s * s, 0.0, cfg.noise_sigma).reshape(s, s)
    image = np.clip(image, 0.0, 1.0)
    return Phantom(image=image, mask=mask,
                   subject_id=int(subject_id), slice_id=int(slice_id))


def generate_dataset(seed, n_subjects, slices_per_subject, cfg=None):
    """n_subjects * slices_per_subject phantoms, grouped by subject."""
    if n_subjects < 1 or slices_per_subject < 1:
        raise ValueError("need at least one subject and one slice")
    cfg = cfg or PhantomConfig()
    from .rng import Rng
    base = Rng(seed)
    return [generate_phantom(base, cfg, subject, slc)
            for subject in range(n_subjects)
            for slc in range(slices_per_subject)]


def save_dataset(dataset, path):
    """Write manifest.txt and data.ntf into directory ``path``."""
    os.makedirs(path, exist_ok=True)
    size = dataset[0].image.shape[0] if dataset else 0
    lines = [f"count {len(dataset)}", f"size {size}"]
    lines += [f"{rec.subject_id} {rec.slice_id}" for rec in dataset]
    with open(os.path.join(path, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(path, "data.ntf"), "wb") as f:
        for rec in dataset:
            write_ntf(f, rec.image)
            write_ntf(f, rec.mask)


def load_dataset(path):
    """Read a dataset directory back; bit-exact inverse of save_dataset."""
    manifest = os.path.join(path, "manifest.txt")
    try:
        with open(manifest) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
    except OSError as exc:
        raise FormatError(f"cannot read manifest: {exc}") from exc
    if len(lines) < 2 or not lines[0].startswith("count ") \
            or not lines[1].startswith("size "):
        raise FormatError("manifest must start with 'count N' and 'size S'",
                          offset=0)
    count = int(lines[0].split()[1])
    if len(lines) != 2 + count:
        raise FormatError(f"manifest promises {count} records, "
                          f"found {len(lines) - 2}")
    ids = []
    for ln in lines[2:]:
        parts = ln.split()
        if len(parts) != 2:
            raise FormatError(f"bad manifest record line: {ln!r}")
        ids.append((int(parts[0]), int(parts[1])))

    records = []
    with open(os.path.join(path, "data.ntf"), "rb") as f:
        offset = 0
        for subject, slc in ids:
            image, offset = read_ntf(f, offset)
            mask, offset = read_ntf(f, offset)
            records.append(Phantom(image=image, mask=mask,
                                   subject_id=subject, slice_id=slc))
        if f.read(1):
            raise FormatError("trailing bytes after last record", offset=offset)
    return records
