# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-point UKF recursion for the 7-state cyclic model.

Mirrors ``cyclic_ukf.ukf._filter_python`` operation for operation; the
Python side computes the initial state/covariance and the weights.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs
from libc.string cimport memcpy

cnp.import_array()

cdef enum:
    D = 7
    NS = 15

cdef enum:
    OK = 0
    ERR_NOT_PD = 1
    ERR_SINGULAR = 2

# keep in sync with dynamics.py / ukf.py
cdef double SERIES_THRESHOLD = 1e-4
cdef double OMEGA_FLOOR = 1e-6
cdef double JITTER_START = 1e-9
cdef double JITTER_MAX = 1e-3
cdef double DET_FLOOR = 1e-30


cdef int _chol(const double* a, double* L) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(D * D):
        L[i] = 0.0
    for j in range(D):
        s = a[j * D + j]
        for k in range(j):
            s -= L[j * D + k] * L[j * D + k]
        if not s > 0.0:
            return ERR_NOT_PD
        L[j * D + j] = sqrt(s)
        for i in range(j + 1, D):
            s = a[i * D + j]
            for k in range(j):
                s -= L[i * D + k] * L[j * D + k]
            L[i * D + j] = s / L[j * D + j]
    return OK


cdef int _safe_chol(double* P, double* L) noexcept nogil:
    """Factor P, adding escalating jitter to P in place if needed."""
    cdef int i
    cdef bint zero = True
    cdef double jitter
    cdef double trial[D * D]
    for i in range(D * D):
        if P[i] != 0.0:
            zero = False
            break
    if zero:
        for i in range(D * D):
            L[i] = 0.0
        return OK
    if _chol(P, L) == OK:
        return OK
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        memcpy(trial, P, sizeof(double) * D * D)
        for i in range(D):
            trial[i * D + i] += jitter
        if _chol(trial, L) == OK:
            memcpy(P, trial, sizeof(double) * D * D)
            return OK
        jitter *= 10.0
    return ERR_NOT_PD


cdef void _symmetrize(double* P) noexcept nogil:
    cdef int i, j
    cdef double m
    for i in range(D):
        for j in range(i + 1, D):
            m = 0.5 * (P[i * D + j] + P[j * D + i])
            P[i * D + j] = m
            P[j * D + i] = m


cdef void _transition(double omega, double dt, double* out) noexcept nogil:
    # out = (1 - cos, cos, sin/omega, omega*sin)
    cdef double theta = omega * dt
    cdef double t2, t4
    if fabs(theta) < SERIES_THRESHOLD:
        t2 = theta * theta
        t4 = t2 * t2
        out[0] = t2 / 2.0 - t4 / 24.0
        out[1] = 1.0 - t2 / 2.0 + t4 / 24.0
        out[2] = dt * (1.0 - t2 / 6.0 + t4 / 120.0)
        out[3] = (t2 - t4 / 6.0) / dt
    else:
        out[0] = 1.0 - cos(theta)
        out[1] = cos(theta)
        out[2] = sin(theta) / omega
        out[3] = omega * sin(theta)


cdef void _noise(double omega, double dt, double q1, double q2, double* q) noexcept nogil:
    # q = (q11, q12, q13, q22, q23, q33)
    cdef double p1 = q1 * q1
    cdef double p2 = q2 * q2
    cdef double theta = omega * dt
    cdef double s, c, cs, w, t2, t4, dt2
    q[0] = p1 * dt
    if fabs(theta) < SERIES_THRESHOLD:
        t2 = theta * theta
        t4 = t2 * t2
        dt2 = dt * dt
        q[1] = p1 * dt * (t2 / 6.0 - t4 / 120.0)
        q[2] = p1 * (t2 / 2.0 - t4 / 24.0)
        q[3] = p2 * dt2 * dt * (1.0 / 3.0 - t2 / 15.0 + 2.0 * t4 / 315.0) + p1 * dt * t4 / 20.0
        q[4] = p2 * dt2 * (0.5 - t2 / 6.0 + t4 / 45.0) + p1 * t4 / 8.0
        q[5] = p2 * dt * (1.0 - t2 / 3.0 + t4 / 15.0) + p1 * t4 / (3.0 * dt)
        return
    w = omega
    s = sin(theta)
    c = cos(theta)
    cs = c * s
    q[1] = p1 * (theta - s) / w
    q[2] = p1 * (1.0 - c)
    q[3] = (p1 * w * w * (3.0 * theta - 4.0 * s + cs) + p2 * (theta - cs)) / (2.0 * w * w * w)
    q[4] = (p1 * w * w * (1.0 - 2.0 * c + c * c) + p2 * s * s) / (2.0 * w * w)
    q[5] = -(p1 * w * w * (cs - theta) - p2 * (cs + theta)) / (2.0 * w)


cdef void _propagate(const double* x, double dt, double* y) noexcept nogil:
    cdef double f[4]
    cdef double omega = x[6]
    cdef int a
    if omega < OMEGA_FLOOR:
        omega = OMEGA_FLOOR
    _transition(omega, dt, f)
    for a in range(0, 6, 3):
        y[a] = x[a]
        y[a + 1] = f[0] * x[a] + f[1] * x[a + 1] + f[2] * x[a + 2]
        y[a + 2] = f[3] * x[a] - f[3] * x[a + 1] + f[1] * x[a + 2]
    y[6] = x[6]


cdef int _filter_point(
    const double* z,       # K x 2
    int n_frames,
    double* mean,          # D, in: initial state
    double* P,             # D x D, in: initial covariance
    double dt,
    const double* wm,
    const double* wc,
    double scale,          # sqrt(d + lambda)
    double q1, double q2, double r, double omega_var,
    double frozen_omega,   # < 0: use the mean omega each frame
    double* out,           # K x 2
) noexcept nogil:
    cdef double L[D * D]
    cdef double X[D]
    cdef double Y[NS * D]
    cdef double Zs[NS * 2]
    cdef double q[6]
    cdef double dx[D]
    cdef double Pxz[D * 2]
    cdef double G[D * 2]
    cdef double mz[2]
    cdef double Pz[4]
    cdef double Pzi[4]
    cdef double innov[2]
    cdef double det, omega_q, u0, u1
    cdef int k, i, j, m, status

    _symmetrize(P)
    status = _safe_chol(P, L)
    if status != OK:
        return status

    for k in range(n_frames):
        # --- predict (L is the factor of the current P) ---
        for j in range(D):
            Y[j] = mean[j]
        for i in range(D):
            for j in range(D):
                X[j] = mean[j] + scale * L[j * D + i]
            memcpy(&Y[(i + 1) * D], X, sizeof(double) * D)
            for j in range(D):
                X[j] = mean[j] - scale * L[j * D + i]
            memcpy(&Y[(i + 1 + D) * D], X, sizeof(double) * D)
        for i in range(NS):
            memcpy(X, &Y[i * D], sizeof(double) * D)
            _propagate(X, dt, &Y[i * D])

        omega_q = frozen_omega if frozen_omega >= 0.0 else mean[6]
        if omega_q < OMEGA_FLOOR:
            omega_q = OMEGA_FLOOR
        _noise(omega_q, dt, q1, q2, q)

        # mean offset by sigma point 0 (see unscented_transform)
        for j in range(D):
            mean[j] = 0.0
        for i in range(1, NS):
            for j in range(D):
                mean[j] += wm[i] * (Y[i * D + j] - Y[j])
        for j in range(D):
            mean[j] += Y[j]
        for j in range(D * D):
            P[j] = 0.0
        for i in range(NS):
            for j in range(D):
                dx[j] = Y[i * D + j] - mean[j]
            for j in range(D):
                for m in range(D):
                    P[j * D + m] += wc[i] * dx[j] * dx[m]
        for m in range(0, 6, 3):
            P[(m + 0) * D + m + 0] += q[0]
            P[(m + 0) * D + m + 1] += q[1]
            P[(m + 0) * D + m + 2] += q[2]
            P[(m + 1) * D + m + 0] += q[1]
            P[(m + 1) * D + m + 1] += q[3]
            P[(m + 1) * D + m + 2] += q[4]
            P[(m + 2) * D + m + 0] += q[2]
            P[(m + 2) * D + m + 1] += q[4]
            P[(m + 2) * D + m + 2] += q[5]
        P[6 * D + 6] += omega_var
        _symmetrize(P)
        status = _safe_chol(P, L)
        if status != OK:
            return status

        # --- update ---
        for i in range(NS):
            Zs[2 * i] = Y[i * D + 1]
            Zs[2 * i + 1] = Y[i * D + 4]
        mz[0] = 0.0
        mz[1] = 0.0
        for i in range(1, NS):
            mz[0] += wm[i] * (Zs[2 * i] - Zs[0])
            mz[1] += wm[i] * (Zs[2 * i + 1] - Zs[1])
        mz[0] += Zs[0]
        mz[1] += Zs[1]
        for j in range(4):
            Pz[j] = 0.0
        for j in range(D * 2):
            Pxz[j] = 0.0
        for i in range(NS):
            u0 = Zs[2 * i] - mz[0]
            u1 = Zs[2 * i + 1] - mz[1]
            Pz[0] += wc[i] * u0 * u0
            Pz[1] += wc[i] * u0 * u1
            Pz[2] += wc[i] * u1 * u0
            Pz[3] += wc[i] * u1 * u1
            for j in range(D):
                dx[j] = Y[i * D + j] - mean[j]
                Pxz[2 * j] += wc[i] * dx[j] * u0
                Pxz[2 * j + 1] += wc[i] * dx[j] * u1
        Pz[0] += r
        Pz[3] += r
        u0 = 0.5 * (Pz[1] + Pz[2])
        Pz[1] = u0
        Pz[2] = u0
        det = Pz[0] * Pz[3] - Pz[1] * Pz[2]
        if not fabs(det) > DET_FLOOR:
            return ERR_SINGULAR
        Pzi[0] = Pz[3] / det
        Pzi[1] = -Pz[1] / det
        Pzi[2] = -Pz[2] / det
        Pzi[3] = Pz[0] / det
        for j in range(D):
            G[2 * j] = Pxz[2 * j] * Pzi[0] + Pxz[2 * j + 1] * Pzi[2]
            G[2 * j + 1] = Pxz[2 * j] * Pzi[1] + Pxz[2 * j + 1] * Pzi[3]
        innov[0] = z[2 * k] - mz[0]
        innov[1] = z[2 * k + 1] - mz[1]
        for j in range(D):
            mean[j] += G[2 * j] * innov[0] + G[2 * j + 1] * innov[1]
        # P -= G Pz G^T
        for j in range(D):
            u0 = G[2 * j] * Pz[0] + G[2 * j + 1] * Pz[2]
            u1 = G[2 * j] * Pz[1] + G[2 * j + 1] * Pz[3]
            for m in range(D):
                P[j * D + m] -= u0 * G[2 * m] + u1 * G[2 * m + 1]
        _symmetrize(P)
        status = _safe_chol(P, L)
        if status != OK:
            return status

        out[2 * k] = mean[1]
        out[2 * k + 1] = mean[4]
    return OK


def filter_points(
    const double[:, :, ::1] z,
    const double[:, ::1] x0,
    const double[:, ::1] P0,
    double dt,
    const double[::1] wm,
    const double[::1] wc,
    double d_plus_lambda,
    double q1,
    double q2,
    double r,
    double omega_var,
    double frozen_omega,
):
    """Run the UKF for every contour point.

    Returns ``(out, status, point)``: ``status`` is 0 on success, 1 when a
    covariance could not be made positive definite, 2 on a singular
    innovation covariance; ``point`` is the first failing index (or -1).
    """
    cdef Py_ssize_t n_points = z.shape[0]
    cdef int n_frames = <int>z.shape[1]
    cdef Py_ssize_t i
    cdef int status = OK
    cdef Py_ssize_t failed = -1
    cdef double scale = sqrt(d_plus_lambda)
    cdef double mean[D]
    cdef double P[D * D]
    out_arr = np.empty((n_points, n_frames, 2), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr

    if x0.shape[0] != n_points or x0.shape[1] != D or P0.shape[0] != D or P0.shape[1] != D:
        raise ValueError("state/covariance shapes do not match the 7-state model")
    if wm.shape[0] != NS or wc.shape[0] != NS:
        raise ValueError("expected 15 sigma-point weights")

    with nogil:
        for i in range(n_points):
            memcpy(mean, &x0[i, 0], sizeof(double) * D)
            memcpy(P, &P0[0, 0], sizeof(double) * D * D)
            status = _filter_point(
                &z[i, 0, 0], n_frames, mean, P, dt, &wm[0], &wc[0], scale,
                q1, q2, r, omega_var, frozen_omega, &out[i, 0, 0],
            )
            if status != OK:
                failed = i
                break
    return out_arr, status, failed
