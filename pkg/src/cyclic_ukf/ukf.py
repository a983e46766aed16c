"""Scaled unscented Kalman filter over the cyclic contour-point model.

The building blocks (:func:`sigma_points`, :func:`unscented_transform`,
:func:`predict`, :func:`update`) accept either a single state (``mean``
of shape ``(7,)``) or a batch of independent states (``(N, 7)``); the
pure-numpy backend of :func:`filter_sequence` runs all contour points as
one batch. A compiled backend (``cyclic_ukf._kernel``) runs the same
recursion point by point and is preferred when it is importable.
"""

import os
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import dynamics
from .dynamics import OMEGA, STATE_DIM, NoiseParams, SequenceMeta
from .errors import (
    DegenerateScaling,
    NotPositiveDefinite,
    PointFilterError,
    SingularInnovation,
    TooFewFrames,
)

try:
    from . import _kernel
except ImportError:  # extension not built
    _kernel = None

JITTER_START = 1e-9
JITTER_MAX = 1e-3
DET_FLOOR = 1e-30

BACKEND_ENV = "CYCLIC_UKF_BACKEND"


def available_backends():
    return ("compiled", "python") if _kernel is not None else ("python",)


def default_backend():
    forced = os.environ.get(BACKEND_ENV, "").strip().lower()
    if forced:
        if forced not in ("compiled", "python"):
            raise ValueError(f"{BACKEND_ENV} must be 'compiled' or 'python', got {forced!r}")
        if forced == "compiled" and _kernel is None:
            raise ImportError("compiled backend requested but cyclic_ukf._kernel is not built")
        return forced
    return available_backends()[0]


@dataclass(frozen=True)
class UTParams:
    """Scaled unscented transform parameters; defaults are the 7-state setup."""

    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = -1.0
    dim: int = STATE_DIM

    @property
    def lam(self):
        return self.alpha**2 * (self.dim + self.kappa) - self.dim


class Weights(NamedTuple):
    wm: np.ndarray
    wc: np.ndarray


@dataclass
class FilterState:
    """Mean and covariance, optionally with the propagated sigma points.

    ``sigmas`` is set by :func:`predict` so that :func:`update` maps the
    same transformed points through the measurement model; when absent,
    update draws fresh sigma points from ``(mean, cov)``.
    """

    mean: np.ndarray
    cov: np.ndarray
    sigmas: Optional[np.ndarray] = None


def compute_weights(params):
    d = params.dim
    if d < 1:
        raise DegenerateScaling(f"state dimension must be >= 1, got {d}")
    if not params.alpha > 0:
        raise DegenerateScaling(f"alpha must be > 0, got {params.alpha}")
    lam = params.lam
    if not d + lam > 0:
        raise DegenerateScaling(f"d + lambda = {d + lam} must be > 0")
    wm = np.full(2 * d + 1, 1.0 / (2.0 * (d + lam)))
    wc = wm.copy()
    wm[0] = lam / (d + lam)
    wc[0] = wm[0] + 1.0 - params.alpha**2 + params.beta
    return Weights(wm, wc)


def symmetrize(cov):
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def _cholesky_one(cov):
    if not np.any(cov):
        return np.zeros_like(cov), cov
    try:
        return np.linalg.cholesky(cov), cov
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(cov.shape[-1])
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        trial = cov + jitter * eye
        try:
            return np.linalg.cholesky(trial), trial
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPositiveDefinite(
        f"covariance not positive definite even with {JITTER_MAX:g} jitter"
    )


def safe_cholesky(cov):
    """Lower Cholesky factor with escalating diagonal jitter.

    Returns ``(L, cov_used)`` where ``cov_used`` includes any jitter that
    was needed. An all-zero covariance factors to zero. Works on a single
    matrix or a stack; only failing members of a stack get jitter.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 2:
        return _cholesky_one(cov)
    flat = cov.reshape(-1, *cov.shape[-2:])
    zero = ~np.any(flat, axis=(-2, -1))
    if not zero.any():
        try:
            return np.linalg.cholesky(cov), cov
        except np.linalg.LinAlgError:
            pass
    L = np.empty_like(flat)
    used = np.empty_like(flat)
    for i, c in enumerate(flat):
        try:
            L[i], used[i] = _cholesky_one(c)
        except NotPositiveDefinite as exc:
            raise PointFilterError(i, exc) from exc
    return L.reshape(cov.shape), used.reshape(cov.shape)


def condition(cov):
    """Symmetrize, then add jitter only if the factorization fails."""
    return safe_cholesky(symmetrize(cov))[1]


def sigma_points(mean, cov, params=UTParams()):
    """``2d+1`` scaled sigma points about ``(mean, cov)``.

    Point 0 is the mean; points ``i`` and ``i+d`` are the mean plus/minus
    column ``i`` of ``sqrt(d + lambda) * L`` with ``L`` the lower Cholesky
    factor of ``cov``. Output shape ``(..., 2d+1, d)``.
    """
    mean = np.asarray(mean, dtype=float)
    L, _ = safe_cholesky(cov)
    offsets = np.sqrt(params.dim + params.lam) * np.swapaxes(L, -1, -2)
    centre = mean[..., None, :]
    return np.concatenate([centre, centre + offsets, centre - offsets], axis=-2)


def unscented_transform(points, weights, additive_cov=None):
    """Weighted mean and covariance of transformed sigma points."""
    points = np.asarray(points, dtype=float)
    # weights sum to 1, so offsetting by point 0 leaves the mean unchanged
    # but avoids cancellation between the large positive/negative weights
    ref = points[..., 0, :]
    mean = ref + np.einsum("i,...ij->...j", weights.wm, points - ref[..., None, :])
    dev = points - mean[..., None, :]
    cov = np.einsum("i,...ij,...ik->...jk", weights.wc, dev, dev)
    if additive_cov is not None:
        cov = cov + additive_cov
    return mean, symmetrize(cov)


def init_state(series, dt, omega1):
    """Initial full state(s) from observations by two-point differencing.

    ``series`` has shape ``(..., K, 2)``. Position is the first
    observation, velocity the first difference over ``dt``, mean position
    the average over all ``K`` frames.
    """
    z = np.asarray(series, dtype=float)
    if z.shape[-2] < 2:
        raise TooFewFrames(f"two-point differencing needs >= 2 frames, got {z.shape[-2]}")
    first = z[..., 0, :]
    vel = (z[..., 1, :] - first) / dt
    avg = z.mean(axis=-2)
    state = np.empty(z.shape[:-2] + (STATE_DIM,))
    state[..., 0] = avg[..., 0]
    state[..., 1] = first[..., 0]
    state[..., 2] = vel[..., 0]
    state[..., 3] = avg[..., 1]
    state[..., 4] = first[..., 1]
    state[..., 5] = vel[..., 1]
    state[..., OMEGA] = omega1
    return state


def init_cov(r, dt, n_frames):
    """Initial 7x7 covariance: two copies of the per-axis block and unit omega variance.

    The bare ``k`` in the per-axis block is taken as the frame count.
    """
    if n_frames < 2:
        raise TooFewFrames(f"need >= 2 frames, got {n_frames}")
    k = float(n_frames)
    phi = np.array(
        [
            [r, r / k, r / (k * dt)],
            [r / k, r, r / dt],
            [r / (k * dt), r / dt, 2.0 * r / dt**2],
        ]
    )
    P = np.zeros((STATE_DIM, STATE_DIM))
    P[0:3, 0:3] = phi
    P[3:6, 3:6] = phi
    P[OMEGA, OMEGA] = 1.0
    return P


def predict(fs, dt, noise=NoiseParams(), ut=UTParams(), *, q_omega=None, weights=None):
    """Time update through the cyclic model.

    Each sigma point is propagated with its own omega. The process noise
    is built from ``q_omega`` when given, else from the prior mean omega.
    """
    w = compute_weights(ut) if weights is None else weights
    X = sigma_points(fs.mean, fs.cov, ut)
    Y = dynamics.propagate(X, dt)
    if q_omega is None:
        q_omega = fs.mean[..., OMEGA]
    Q = dynamics.full_process_cov(np.maximum(q_omega, dynamics.OMEGA_FLOOR), dt, noise)
    mean, cov = unscented_transform(Y, w, Q)
    return FilterState(mean, condition(cov), Y)


def _inv2(P):
    a, b = P[..., 0, 0], P[..., 0, 1]
    c, d = P[..., 1, 0], P[..., 1, 1]
    det = a * d - b * c
    bad = ~(np.abs(det) > DET_FLOOR)
    if np.any(bad):
        exc = SingularInnovation("innovation covariance is singular")
        if P.ndim > 2:
            raise PointFilterError(int(np.flatnonzero(bad)[0]), exc)
        raise exc
    inv = np.empty_like(P)
    inv[..., 0, 0] = d / det
    inv[..., 0, 1] = -b / det
    inv[..., 1, 0] = -c / det
    inv[..., 1, 1] = a / det
    return inv


def update(fs, z, r, ut=UTParams(), *, weights=None):
    """Measurement update with observation(s) ``z`` of shape ``(..., 2)``."""
    w = compute_weights(ut) if weights is None else weights
    Y = fs.sigmas if fs.sigmas is not None else sigma_points(fs.mean, fs.cov, ut)
    Z = dynamics.measure(Y)
    mu_z, Pz = unscented_transform(Z, w, dynamics.measurement_cov(r))
    dx = Y - fs.mean[..., None, :]
    dz = Z - mu_z[..., None, :]
    Pxz = np.einsum("i,...ij,...ik->...jk", w.wc, dx, dz)
    gain = Pxz @ _inv2(Pz)
    innov = np.asarray(z, dtype=float) - mu_z
    mean = fs.mean + np.einsum("...ij,...j->...i", gain, innov)
    cov = fs.cov - gain @ Pz @ np.swapaxes(gain, -1, -2)
    return FilterState(mean, condition(cov))


def _check_measurements(measurements):
    z = np.asarray(measurements, dtype=float)
    if z.ndim != 3 or z.shape[2] != 2:
        raise ValueError(f"measurements must have shape (N, K, 2), got {z.shape}")
    if z.shape[0] < 1:
        raise ValueError("need at least one contour point")
    if z.shape[1] < 2:
        raise TooFewFrames(f"need >= 2 frames, got {z.shape[1]}")
    if not np.all(np.isfinite(z)):
        raise ValueError("measurements contain non-finite values")
    return np.ascontiguousarray(z)


def _filter_python(z, dt, omega1, noise, ut, freeze_process_noise):
    n_points, n_frames, _ = z.shape
    w = compute_weights(ut)
    P0 = init_cov(noise.r, dt, n_frames)
    fs = FilterState(init_state(z, dt, omega1), np.repeat(P0[None], n_points, axis=0))
    q_omega = np.full(n_points, omega1) if freeze_process_noise else None
    out = np.empty_like(z)
    for k in range(n_frames):
        fs = predict(fs, dt, noise, ut, q_omega=q_omega, weights=w)
        fs = update(fs, z[:, k, :], noise.r, ut, weights=w)
        out[:, k, :] = fs.mean[:, [1, 4]]
    return out


def _filter_compiled(z, dt, omega1, noise, ut, freeze_process_noise):
    n_frames = z.shape[1]
    w = compute_weights(ut)
    x0 = init_state(z, dt, omega1)
    P0 = init_cov(noise.r, dt, n_frames)
    out, status, point = _kernel.filter_points(
        z,
        np.ascontiguousarray(x0),
        np.ascontiguousarray(P0),
        dt,
        np.ascontiguousarray(w.wm),
        np.ascontiguousarray(w.wc),
        ut.dim + ut.lam,
        noise.q1,
        noise.q2,
        noise.r,
        noise.omega_var,
        omega1 if freeze_process_noise else -1.0,
    )
    if status == 1:
        raise PointFilterError(point, NotPositiveDefinite("covariance not positive definite after jitter"))
    if status == 2:
        raise PointFilterError(point, SingularInnovation("innovation covariance is singular"))
    return out


def filter_sequence(
    measurements,
    meta,
    noise=NoiseParams(),
    ut=UTParams(),
    *,
    freeze_process_noise=False,
    backend=None,
):
    """Filter every contour point's trajectory independently.

    Parameters
    ----------
    measurements : array_like, shape (N, K, 2)
        Observed ``(x, y)`` of N contour points over K frames.
    meta : SequenceMeta
        Supplies the initial angular frequency and frame interval.
    noise, ut : NoiseParams, UTParams
    freeze_process_noise : bool
        Build Q once from the initial omega instead of the current mean
        omega at every frame.
    backend : {"compiled", "python", None}
        ``None`` picks the compiled kernel when available.

    Returns
    -------
    ndarray, shape (N, K, 2)
        Post-update ``(x, y)`` estimate at every frame.
    """
    if ut.dim != STATE_DIM:
        raise DegenerateScaling(f"the cyclic model has {STATE_DIM} states, got dim={ut.dim}")
    z = _check_measurements(measurements)
    backend = backend or default_backend()
    if backend == "compiled":
        if _kernel is None:
            raise ImportError("compiled backend is not built")
        run = _filter_compiled
    elif backend == "python":
        run = _filter_python
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return run(z, meta.dt, meta.omega1, noise, ut, freeze_process_noise)


__all__ = [
    "UTParams",
    "Weights",
    "FilterState",
    "compute_weights",
    "sigma_points",
    "unscented_transform",
    "safe_cholesky",
    "condition",
    "init_state",
    "init_cov",
    "predict",
    "update",
    "filter_sequence",
    "available_backends",
    "default_backend",
]
