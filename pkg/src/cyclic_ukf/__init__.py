"""Unscented Kalman filtering of periodic 2D contour sequences.

Segmentation masks are traced to boundary contours, resampled at uniform
angles about their centroid, and each contour point is filtered over the
frames of one cycle with a harmonic oscillator model whose angular
frequency is part of the state.
"""

from .dynamics import NoiseParams, SequenceMeta
from .geometry import (
    SampledContour,
    centroid,
    extract_boundary,
    mask_from_contour,
    resample_uniform,
    to_polar,
)
from .metrics import dice, hausdorff, reliability
from .ukf import FilterState, UTParams, available_backends, filter_sequence

__version__ = "0.1.0"

__all__ = [
    "NoiseParams",
    "SequenceMeta",
    "SampledContour",
    "centroid",
    "extract_boundary",
    "mask_from_contour",
    "resample_uniform",
    "to_polar",
    "dice",
    "hausdorff",
    "reliability",
    "FilterState",
    "UTParams",
    "available_backends",
    "filter_sequence",
]
