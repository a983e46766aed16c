"""Synthetic periodic contour sequences with known ground truth.

Each contour point oscillates radially about a fixed centre at the heart
rate frequency, which is exactly the motion the cyclic model describes.
Measurement noise is reproducible across platforms and languages:

* uniform draws come from PCG64 (``numpy.random.PCG64(seed)``), taken with
  ``Generator.random`` in C order over ``(point, frame, 2)``;
* each ``(u1, u2)`` pair becomes one 2D Gaussian displacement by the
  Box-Muller transform ``rho = sqrt(-2 ln(1 - u1))``,
  ``(dx, dy) = sigma * rho * (cos 2 pi u2, sin 2 pi u2)``.

Outlier frames additionally push every point radially outward by
``outlier_magnitude`` pixels.
"""

from dataclasses import dataclass, field

import numpy as np

from .dynamics import SequenceMeta
from .errors import BadConfig, ShapeMismatch
from .geometry import mask_from_contour, sample_angles
from .metrics import dice


@dataclass(frozen=True)
class SynthConfig:
    n_points: int = 60
    n_frames: int = 25
    heart_rate: float = 60.0
    base_radius: float = 30.0
    amplitude: object = 5.0  # scalar or one value per point
    phase: object = 0.0  # scalar or one value per point, radians
    gaussian_sigma: float = 1.0
    outlier_frames: tuple = (8, 16)
    outlier_magnitude: float = 8.0
    seed: int = 0
    width: int = 128
    height: int = 128
    center: tuple = (64.0, 64.0)
    pixel_spacing: float = 1.0

    def __post_init__(self):
        if self.n_points < 3:
            raise BadConfig(f"n_points must be >= 3, got {self.n_points}")
        if self.n_frames < 2:
            raise BadConfig(f"n_frames must be >= 2, got {self.n_frames}")
        if not self.heart_rate > 0:
            raise BadConfig(f"heart_rate must be > 0, got {self.heart_rate}")
        amp = np.asarray(self.amplitude, dtype=float)
        if amp.ndim > 1 or (amp.ndim == 1 and amp.size != self.n_points):
            raise BadConfig("amplitude must be a scalar or have n_points entries")
        if np.any(amp < 0) or np.any(amp >= self.base_radius):
            raise BadConfig("need base_radius > amplitude >= 0")
        ph = np.asarray(self.phase, dtype=float)
        if ph.ndim > 1 or (ph.ndim == 1 and ph.size != self.n_points):
            raise BadConfig("phase must be a scalar or have n_points entries")
        if self.gaussian_sigma < 0 or self.outlier_magnitude < 0:
            raise BadConfig("noise magnitudes must be >= 0")
        for k in self.outlier_frames:
            if not 0 <= k < self.n_frames:
                raise BadConfig(f"outlier frame {k} outside 0..{self.n_frames - 1}")

    @property
    def meta(self):
        return SequenceMeta(self.heart_rate, self.n_frames, self.pixel_spacing)


@dataclass
class SynthSequence:
    truth: np.ndarray  # (N, K, 2)
    noisy: np.ndarray  # (N, K, 2)
    masks: np.ndarray  # (K, H, W) truth masks
    meta: SequenceMeta


@dataclass
class ScoreSummary:
    rmse_filtered: float
    rmse_noisy: float
    tv_filtered: np.ndarray  # per point
    tv_noisy: np.ndarray
    dice_filtered: np.ndarray  # per frame
    dice_noisy: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def tv_ratio(self):
        return float(self.tv_filtered.sum() / self.tv_noisy.sum())


def point_angles(config):
    return sample_angles(config.n_points)


def truth_positions(config, frames=None):
    """Ground-truth ``(N, len(frames), 2)`` positions at the given frame indices.

    Frame ``k`` is at time ``k * dt``; indices beyond the cycle are allowed.
    """
    if frames is None:
        frames = np.arange(config.n_frames)
    t = np.asarray(frames, dtype=float) * config.meta.dt
    omega = config.meta.omega1
    theta = point_angles(config)[:, None]
    amp = np.broadcast_to(np.asarray(config.amplitude, dtype=float), (config.n_points,))[:, None]
    phase = np.broadcast_to(np.asarray(config.phase, dtype=float), (config.n_points,))[:, None]
    radius = config.base_radius + amp * np.sin(omega * t[None, :] + phase)
    cx, cy = config.center
    return np.stack([cx + radius * np.cos(theta), cy + radius * np.sin(theta)], axis=-1)


def gaussian_displacements(seed, n_points, n_frames):
    """Standard-normal ``(N, K, 2)`` displacements (see module docstring)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random((n_points, n_frames, 2))
    rho = np.sqrt(-2.0 * np.log(1.0 - u[..., 0]))
    phi = 2.0 * np.pi * u[..., 1]
    return np.stack([rho * np.cos(phi), rho * np.sin(phi)], axis=-1)


def generate(config=SynthConfig()):
    truth = truth_positions(config)
    noisy = truth.copy()
    if config.gaussian_sigma > 0:
        noisy += config.gaussian_sigma * gaussian_displacements(
            config.seed, config.n_points, config.n_frames
        )
    if config.outlier_frames and config.outlier_magnitude > 0:
        theta = point_angles(config)
        push = config.outlier_magnitude * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        for k in sorted(set(config.outlier_frames)):
            noisy[:, k, :] += push
    masks = np.stack(
        [mask_from_contour(truth[:, k, :], config.width, config.height) for k in range(config.n_frames)]
    )
    return SynthSequence(truth, noisy, masks, config.meta)


def total_variation(traj):
    """Per-point path length ``sum_k |p[k+1] - p[k]|`` of ``(N, K, 2)`` trajectories."""
    steps = np.diff(np.asarray(traj, dtype=float), axis=1)
    return np.sqrt((steps**2).sum(axis=-1)).sum(axis=1)


def rmse(estimate, truth):
    err = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt((err**2).sum(axis=-1).mean()))


def score(filtered, noisy, truth, width=128, height=128, truth_masks=None):
    filtered = np.asarray(filtered, dtype=float)
    noisy = np.asarray(noisy, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if not (filtered.shape == noisy.shape == truth.shape) or truth.ndim != 3:
        raise ShapeMismatch(
            f"shapes differ: filtered {filtered.shape}, noisy {noisy.shape}, truth {truth.shape}"
        )
    n_frames = truth.shape[1]
    if truth_masks is None:
        truth_masks = [mask_from_contour(truth[:, k], width, height) for k in range(n_frames)]
    dice_f = np.array(
        [dice(mask_from_contour(filtered[:, k], width, height), truth_masks[k]) for k in range(n_frames)]
    )
    dice_n = np.array(
        [dice(mask_from_contour(noisy[:, k], width, height), truth_masks[k]) for k in range(n_frames)]
    )
    return ScoreSummary(
        rmse_filtered=rmse(filtered, truth),
        rmse_noisy=rmse(noisy, truth),
        tv_filtered=total_variation(filtered),
        tv_noisy=total_variation(noisy),
        dice_filtered=dice_f,
        dice_noisy=dice_n,
    )


def write_dataset(config, output):
    """Write a synthetic sequence in the pipeline's mask-directory layout.

    ``frame_###.pgm`` rasterise the noisy contours, ``ref/`` holds the truth
    masks, and ``truth.json``/``noisy.json`` the point trajectories.
    """
    import json
    from pathlib import Path

    from . import pgm
    from .pipeline import meta_to_dict, write_contour_json

    seq = generate(config)
    output = Path(output)
    (output / "ref").mkdir(parents=True, exist_ok=True)
    for k in range(config.n_frames):
        noisy_mask = mask_from_contour(seq.noisy[:, k], config.width, config.height)
        pgm.write_mask(output / f"frame_{k:03d}.pgm", noisy_mask)
        pgm.write_mask(output / "ref" / f"frame_{k:03d}.pgm", seq.masks[k])
    with open(output / "meta.json", "w") as fh:
        json.dump(meta_to_dict(seq.meta), fh, indent=1)
        fh.write("\n")
    for name, traj in (("truth", seq.truth), ("noisy", seq.noisy)):
        write_contour_json(
            output / f"{name}.json",
            seq.meta,
            [traj[:, k] for k in range(config.n_frames)],
            config.width,
            config.height,
        )
    return seq
