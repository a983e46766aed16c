"""Mask <-> contour conversion and uniform polar resampling.

Conventions
-----------
* A mask is a 2D boolean ``ndarray`` of shape ``(height, width)``; row
  index is ``y``, column index is ``x``.
* Contour points are ``(n, 2)`` float arrays of ``(x, y)`` pixel-centre
  coordinates.
* "Counter-clockwise" means positive shoelace area in the ``(x, y)``
  coordinate frame as written (no y-axis flip).
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    DegenerateRegion,
    EmptyMask,
    NotStarShaped,
    OutOfBounds,
    ZeroRadius,
)

DEFAULT_SAMPLES = 60

# fraction of angular bins allowed to be multi-valued before giving up
MAX_MULTIVALUED_FRACTION = 0.25
# radii closer than this are treated as the same crossing (ray through a vertex)
_CROSSING_TOL = 1e-6

# Moore neighbourhood, clockwise on screen (y down), starting west.
_MOORE = ((-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1))
_MOORE_INDEX = {off: i for i, off in enumerate(_MOORE)}


class ContourWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PolarPoint:
    r: float
    theta: float


@dataclass(frozen=True)
class SampledContour:
    """``n_samples`` points; point ``i`` lies on the ray at angle
    ``-pi + i * 2*pi/n_samples`` from ``center``."""

    points: np.ndarray
    center: np.ndarray

    @property
    def n_samples(self):
        return len(self.points)

    @property
    def angles(self):
        return sample_angles(self.n_samples)


def sample_angles(n_samples):
    return -np.pi + np.arange(n_samples) * (2.0 * np.pi / n_samples)


def as_mask(pixels):
    mask = np.asarray(pixels)
    if mask.ndim != 2 or mask.shape[0] == 0 or mask.shape[1] == 0:
        raise ValueError(f"mask must be a non-empty 2D array, got shape {mask.shape}")
    return mask.astype(bool, copy=False)


def signed_area(points):
    """Shoelace area of a closed polygon; positive when counter-clockwise."""
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def largest_component(mask):
    """Boolean mask of the largest 8-connected foreground component.

    Ties in pixel count go to the component whose bounding box has the
    smallest ``(top, left)`` corner.
    """
    mask = as_mask(mask)
    if not mask.any():
        raise EmptyMask("mask has no foreground pixel")
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    sizes = np.bincount(labels.ravel())[1:]
    slices = ndimage.find_objects(labels)
    best = max(
        range(n),
        key=lambda i: (sizes[i], -slices[i][0].start, -slices[i][1].start),
    )
    return labels == best + 1


def _moore_trace(component):
    h, w = component.shape
    ys, xs = np.nonzero(component)
    # np.nonzero is row-major, so index 0 is the top-most, left-most pixel
    start = (int(xs[0]), int(ys[0]))

    def inside(x, y):
        return 0 <= x < w and 0 <= y < h and component[y, x]

    boundary = [start]
    cur = start
    back = 0  # backtrack direction (west of start is always background)
    first_move = None
    max_steps = 4 * len(xs) + 8
    for _ in range(max_steps):
        for i in range(1, 9):
            idx = (back + i) % 8
            dx, dy = _MOORE[idx]
            nxt = (cur[0] + dx, cur[1] + dy)
            if inside(*nxt):
                break
        else:
            return boundary  # isolated pixel
        # stop when leaving start the same way as the first time; the trace
        # state is then identical, so the cycle is complete (this also
        # handles one-pixel-wide regions and pinch points at start)
        if cur == start:
            if first_move is None:
                first_move = nxt
            elif nxt == first_move:
                boundary.pop()
                return boundary
        bdx, bdy = _MOORE[(idx - 1) % 8]
        bpos = (cur[0] + bdx, cur[1] + bdy)
        back = _MOORE_INDEX[(bpos[0] - nxt[0], bpos[1] - nxt[1])]
        cur = nxt
        boundary.append(cur)
    raise RuntimeError("boundary trace did not close")  # unreachable for valid input


def extract_boundary(mask):
    """Closed outer boundary of the largest 8-connected foreground region.

    Moore-neighbour tracing; returns pixel centres ordered counter-clockwise.

    Raises
    ------
    EmptyMask
        No foreground pixel.
    DegenerateRegion
        The traced boundary has fewer than 3 pixels.
    """
    component = largest_component(mask)
    boundary = _moore_trace(component)
    if len(boundary) < 3:
        raise DegenerateRegion(f"region boundary has only {len(boundary)} pixel(s)")
    points = np.asarray(boundary, dtype=float)
    if signed_area(points) < 0:
        points = np.concatenate([points[:1], points[:0:-1]])
    return points


def centroid(points):
    """Arithmetic mean of the contour points, as ``array([x, y])``."""
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or len(p) == 0:
        raise ValueError("centroid of an empty contour")
    return p.mean(axis=0)


def to_polar(point, origin):
    """Polar coordinates of ``point`` about ``origin``; theta in [-pi, pi)."""
    dx = float(point[0]) - float(origin[0])
    dy = float(point[1]) - float(origin[1])
    if dx == 0.0 and dy == 0.0:
        raise ZeroRadius("point coincides with the polar origin")
    theta = math.atan2(dy, dx)
    if theta >= math.pi:
        theta = -math.pi
    return PolarPoint(math.hypot(dx, dy), theta)


def from_polar(r, theta, origin):
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return np.stack(
        [origin[0] + r * np.cos(theta), origin[1] + r * np.sin(theta)], axis=-1
    )


def _ray_crossings(rel, directions):
    """Radii where each ray (unit ``directions``) crosses the closed polygon
    ``rel`` (vertices relative to the ray origin).

    Returns ``(n_rays, n_edges)`` radii, NaN where an edge is not crossed.
    """
    a = rel
    b = np.roll(rel, -1, axis=0)
    ux = directions[:, 0:1]
    uy = directions[:, 1:2]
    # cross(p, u): signed distance of p from the ray's supporting line
    ca = a[:, 0] * uy - a[:, 1] * ux
    cb = b[:, 0] * uy - b[:, 1] * ux
    denom = ca - cb
    straddle = (ca * cb <= 0.0) & (denom != 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(straddle, ca / np.where(denom == 0.0, 1.0, denom), np.nan)
    px = a[:, 0] + s * (b[:, 0] - a[:, 0])
    py = a[:, 1] + s * (b[:, 1] - a[:, 1])
    r = px * ux + py * uy
    # edge lying on the ray's line: both endpoints are crossings
    colinear = (ca == 0.0) & (cb == 0.0)
    if colinear.any():
        ra = a[:, 0] * ux + a[:, 1] * uy
        rb = b[:, 0] * ux + b[:, 1] * uy
        r = np.where(colinear, np.maximum(ra, rb), r)
    return np.where(r > 0.0, r, np.nan)


def resample_uniform(contour, n_samples=DEFAULT_SAMPLES, center=None):
    """Resample a closed contour at ``n_samples`` uniformly spaced angles.

    Sample ``i`` is where the ray from ``center`` (default: the contour
    centroid) at angle ``-pi + i*2*pi/n_samples`` crosses the contour, the
    contour being linearly interpolated between consecutive points.

    A ray crossing the contour more than once keeps the outermost crossing
    and emits a :class:`ContourWarning`; more than a quarter of such bins,
    or any bin with no crossing, raises :class:`NotStarShaped`.
    """
    if isinstance(contour, SampledContour):
        if center is None:
            center = contour.center
        contour = contour.points
    pts = np.asarray(contour, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("contour needs at least 3 (x, y) points")
    if n_samples < 3:
        raise ValueError(f"n_samples must be >= 3, got {n_samples}")
    center = centroid(pts) if center is None else np.asarray(center, dtype=float)

    angles = sample_angles(n_samples)
    directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    radii = _ray_crossings(pts - center, directions)

    missing = np.all(np.isnan(radii), axis=1)
    if missing.any():
        raise NotStarShaped(
            f"{int(missing.sum())} sampling ray(s) do not cross the contour"
        )
    r_max = np.nanmax(radii, axis=1)
    r_min = np.nanmin(radii, axis=1)
    multi = (r_max - r_min) > _CROSSING_TOL
    n_multi = int(multi.sum())
    if n_multi > MAX_MULTIVALUED_FRACTION * n_samples:
        raise NotStarShaped(f"{n_multi}/{n_samples} angular bins are multi-valued")
    if n_multi:
        warnings.warn(
            f"{n_multi}/{n_samples} angular bins multi-valued; kept outermost crossing",
            ContourWarning,
            stacklevel=2,
        )
    return SampledContour(from_polar(r_max, angles, center), center)


def mask_from_contour(contour, width, height):
    """Rasterise a closed polygon to a ``(height, width)`` boolean mask.

    A pixel is set when its centre is inside the polygon under the
    even-odd rule, or lies on the polygon outline.
    """
    if isinstance(contour, SampledContour):
        contour = contour.points
    pts = np.asarray(contour, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValueError("contour needs at least 3 (x, y) points")
    width, height = int(width), int(height)
    if width <= 0 or height <= 0:
        raise ValueError("canvas dimensions must be positive")
    in_x = (pts[:, 0] >= 0) & (pts[:, 0] <= width - 1)
    in_y = (pts[:, 1] >= 0) & (pts[:, 1] <= height - 1)
    if not np.any(in_x & in_y):
        raise OutOfBounds("every contour vertex lies outside the canvas")

    mask = np.zeros((height, width), dtype=bool)
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

    # scanline even-odd fill at pixel centres, half-open in y
    ylo = max(0, math.ceil(y0.min()))
    yhi = min(height - 1, math.floor(y0.max()))
    for y in range(ylo, yhi + 1):
        hit = ((y0 <= y) & (y1 > y)) | ((y1 <= y) & (y0 > y))
        if not hit.any():
            continue
        t = (y - y0[hit]) / (y1[hit] - y0[hit])
        xs = np.sort(x0[hit] + t * (x1[hit] - x0[hit]))
        for xa, xb in zip(xs[0::2], xs[1::2]):
            ca = max(0, math.ceil(xa))
            cb = min(width - 1, math.floor(xb))
            if ca <= cb:
                mask[y, ca : cb + 1] = True

    _mark_outline(mask, x0, y0, x1, y1)
    return mask


def _mark_outline(mask, x0, y0, x1, y1, eps=1e-9):
    """Set pixels whose centres lie on a polygon edge."""
    height, width = mask.shape
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            if abs(ay - round(ay)) > eps:
                continue
            y = int(round(ay))
            lo = max(0, math.ceil(min(ax, bx) - eps))
            hi = min(width - 1, math.floor(max(ax, bx) + eps))
            if 0 <= y < height and lo <= hi:
                mask[y, lo : hi + 1] = True
            continue
        lo = max(0, math.ceil(min(ay, by) - eps))
        hi = min(height - 1, math.floor(max(ay, by) + eps))
        for y in range(lo, hi + 1):
            x = ax + (y - ay) * (bx - ax) / (by - ay)
            xi = round(x)
            if abs(x - xi) <= eps and 0 <= xi < width:
                mask[y, xi] = True
