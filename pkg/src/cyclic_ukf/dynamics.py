"""Cyclic state-space model with state-carried angular frequency.

Per axis the state is ``[mean_pos, pos, vel]``: the point oscillates
harmonically about ``mean_pos``. The full state stacks both axes and the
angular frequency::

    [x_mean, x, x_vel, y_mean, y, y_vel, omega]

Positions are pixels, velocities pixels/s, omega rad/s.

All array functions accept leading batch dimensions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import BadFrameCount, NonPositiveRate

STATE_DIM = 7
MEAS_DIM = 2
OMEGA = 6
X_AXIS = slice(0, 3)
Y_AXIS = slice(3, 6)

# below this |omega * dt| the closed forms are replaced by their Taylor series
SERIES_THRESHOLD = 1e-4
# sigma points may carry omega <= 0; F and Q are built from max(omega, floor)
OMEGA_FLOOR = 1e-6

MEASUREMENT_MATRIX = np.array(
    [
        [0, 1, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 1, 0, 0],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class NoiseParams:
    """Process and measurement noise settings.

    ``q1``/``q2`` are the mean-position and velocity noise intensities
    (entered squared into Q), ``r`` the per-axis measurement variance in
    pixels^2 and ``omega_var`` the per-step random-walk variance of omega.
    """

    q1: float = 1e-3
    q2: float = 1e-3
    r: float = 1e-2
    omega_var: float = 1.0

    def __post_init__(self):
        for name in ("q1", "q2", "r", "omega_var"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class SequenceMeta:
    heart_rate: float
    n_frames: int
    pixel_spacing: float = 1.0

    def __post_init__(self):
        if not self.heart_rate > 0:
            raise NonPositiveRate(f"heart rate must be > 0, got {self.heart_rate}")
        if int(self.n_frames) != self.n_frames or self.n_frames < 2:
            raise BadFrameCount(f"need at least 2 frames per cycle, got {self.n_frames}")
        if not self.pixel_spacing > 0:
            raise ValueError(f"pixel spacing must be > 0, got {self.pixel_spacing}")

    @property
    def omega1(self):
        return angular_frequency_init(self.heart_rate)

    @property
    def dt(self):
        return frame_interval(self.heart_rate, self.n_frames)


def angular_frequency_init(heart_rate):
    """Initial angular frequency (rad/s) for a heart rate in beats/min."""
    if not heart_rate > 0:
        raise NonPositiveRate(f"heart rate must be > 0, got {heart_rate}")
    return 2.0 * np.pi * heart_rate / 60.0


def frame_interval(heart_rate, n_frames):
    """Seconds between consecutive frames when ``n_frames`` span one beat."""
    if not heart_rate > 0:
        raise NonPositiveRate(f"heart rate must be > 0, got {heart_rate}")
    if int(n_frames) != n_frames or n_frames < 2:
        raise BadFrameCount(f"need at least 2 frames per cycle, got {n_frames}")
    return 60.0 / (heart_rate * n_frames)


def _transition_terms(omega, dt):
    """Entries ``(1 - cos, cos, sin/omega, omega*sin)`` of the oscillator block."""
    omega = np.asarray(omega, dtype=float)
    theta = omega * dt
    small = np.abs(theta) < SERIES_THRESHOLD
    t2 = theta * theta
    t4 = t2 * t2
    safe = np.where(small, 1.0, omega)
    c = np.where(small, 1.0 - t2 / 2.0 + t4 / 24.0, np.cos(theta))
    one_minus_c = np.where(small, t2 / 2.0 - t4 / 24.0, 1.0 - np.cos(theta))
    s_over_w = np.where(small, dt * (1.0 - t2 / 6.0 + t4 / 120.0), np.sin(theta) / safe)
    w_times_s = np.where(small, (t2 - t4 / 6.0) / dt, omega * np.sin(theta))
    return one_minus_c, c, s_over_w, w_times_s


def transition_matrix(omega, dt):
    """3x3 per-axis transition matrix acting on ``[mean_pos, pos, vel]``."""
    a, c, sw, ws = (float(v) for v in _transition_terms(omega, dt))
    return np.array(
        [
            [1.0, 0.0, 0.0],
            [a, c, sw],
            [ws, -ws, c],
        ]
    )


def _noise_terms(omega, dt, q1, q2):
    """``(q11, q12, q13, q22, q23, q33)`` with the small-angle series fallback."""
    omega = np.asarray(omega, dtype=float)
    p1 = q1 * q1
    p2 = q2 * q2
    theta = omega * dt
    small = np.abs(theta) < SERIES_THRESHOLD
    w = np.where(small, 1.0, omega)
    s = np.sin(theta)
    c = np.cos(theta)
    cs = c * s

    q11 = np.broadcast_to(p1 * dt, theta.shape).astype(float)
    q12 = p1 * (theta - s) / w
    q13 = p1 * (1.0 - c)
    q22 = (p1 * w**2 * (3.0 * theta - 4.0 * s + cs) + p2 * (theta - cs)) / (2.0 * w**3)
    q23 = (p1 * w**2 * (1.0 - 2.0 * c + c**2) + p2 * s**2) / (2.0 * w**2)
    q33 = -(p1 * w**2 * (cs - theta) - p2 * (cs + theta)) / (2.0 * w)

    if np.any(small):
        t2 = theta * theta
        t4 = t2 * t2
        dt2 = dt * dt
        q12 = np.where(small, p1 * dt * (t2 / 6.0 - t4 / 120.0), q12)
        q13 = np.where(small, p1 * (t2 / 2.0 - t4 / 24.0), q13)
        q22 = np.where(
            small,
            p2 * dt2 * dt * (1.0 / 3.0 - t2 / 15.0 + 2.0 * t4 / 315.0) + p1 * dt * t4 / 20.0,
            q22,
        )
        q23 = np.where(
            small,
            p2 * dt2 * (0.5 - t2 / 6.0 + t4 / 45.0) + p1 * t4 / 8.0,
            q23,
        )
        q33 = np.where(
            small,
            p2 * dt * (1.0 - t2 / 3.0 + t4 / 15.0) + p1 * t4 / (3.0 * dt),
            q33,
        )
    return q11, q12, q13, q22, q23, q33


def process_noise(omega, dt, q1, q2):
    """3x3 per-axis process-noise covariance (symmetric by construction)."""
    q11, q12, q13, q22, q23, q33 = (float(v) for v in _noise_terms(omega, dt, q1, q2))
    return np.array(
        [
            [q11, q12, q13],
            [q12, q22, q23],
            [q13, q23, q33],
        ]
    )


def full_process_cov(omega, dt, params):
    """7x7 block-diagonal process covariance ``[Q, Q, omega_var]``.

    Batched ``omega`` of shape ``(...)`` yields ``(..., 7, 7)``.
    """
    q11, q12, q13, q22, q23, q33 = _noise_terms(omega, dt, params.q1, params.q2)
    shape = np.shape(q12)
    out = np.zeros(shape + (STATE_DIM, STATE_DIM))
    block = np.stack(
        [
            np.stack([q11, q12, q13], axis=-1),
            np.stack([q12, q22, q23], axis=-1),
            np.stack([q13, q23, q33], axis=-1),
        ],
        axis=-2,
    )
    out[..., 0:3, 0:3] = block
    out[..., 3:6, 3:6] = block
    out[..., OMEGA, OMEGA] = params.omega_var
    return out


def propagate(state, dt):
    """Advance full state(s) by ``dt`` using each state's own omega.

    Omega itself is carried over unchanged.
    """
    state = np.asarray(state, dtype=float)
    omega = np.maximum(state[..., OMEGA], OMEGA_FLOOR)
    a, c, sw, ws = _transition_terms(omega, dt)
    out = state.copy()
    for axis in (X_AXIS, Y_AXIS):
        m = state[..., axis.start]
        p = state[..., axis.start + 1]
        v = state[..., axis.start + 2]
        out[..., axis.start + 1] = a * m + c * p + sw * v
        out[..., axis.start + 2] = ws * m - ws * p + c * v
    return out


def measure(state):
    """Observed ``(x, y)`` position(s) of full state(s)."""
    state = np.asarray(state, dtype=float)
    return state[..., [1, 4]]


def measurement_cov(r):
    if not r >= 0:
        raise ValueError(f"measurement variance must be >= 0, got {r}")
    return np.diag([float(r), float(r)])
