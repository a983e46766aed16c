from fractions import Fraction

import numpy as np
import pytest
from filterpy.kalman import MerweScaledSigmaPoints, UnscentedKalmanFilter
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclic_ukf import dynamics, synth, ukf
from cyclic_ukf.dynamics import NoiseParams, SequenceMeta
from cyclic_ukf.errors import (
    DegenerateScaling,
    NotPositiveDefinite,
    PointFilterError,
    SingularInnovation,
    TooFewFrames,
)
from cyclic_ukf.ukf import FilterState, UTParams

from . import oracles

BACKENDS = ukf.available_backends()
META = SequenceMeta(60, 25)


def random_spd(rng, d=7, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T / d + 0.1 * np.eye(d))


def random_state(rng):
    s = rng.normal(scale=[5, 5, 20, 5, 5, 20, 0.5])
    s[[0, 1, 3, 4]] += 40
    s[6] += 2 * np.pi
    return s


# ---------------------------------------------------------------- weights


def test_weights_paper_parameters():
    w = ukf.compute_weights(UTParams(0.1, 2.0, -1.0, 7))
    # exact rational evaluation of the scaled-UT formulas
    a2 = Fraction(1, 100)
    lam = a2 * (7 - 1) - 7
    wm0 = lam / (7 + lam)
    wi = 1 / (2 * (7 + lam))
    wc0 = wm0 + 1 - a2 + 2
    assert lam == Fraction(-347, 50)
    assert UTParams().lam == pytest.approx(float(lam), abs=1e-12)
    assert w.wm[0] == pytest.approx(float(wm0), abs=1e-10)
    assert w.wc[0] == pytest.approx(float(wc0), abs=1e-10)
    assert np.allclose(w.wm[1:], float(wi), rtol=0, atol=1e-10)
    assert np.array_equal(w.wm[1:], w.wc[1:])
    assert (round(w.wm[0], 4), round(w.wm[1], 4), round(w.wc[0], 4)) == (-115.6667, 8.3333, -112.6767)
    assert abs(w.wm.sum() - 1.0) < 1e-12


def test_weights_match_longhand_oracle():
    _, wm, wc = oracles.sigma_points_loop(np.zeros(7), np.eye(7), 0.1, 2.0, -1.0)
    w = ukf.compute_weights(UTParams())
    assert np.allclose(w.wm, wm, rtol=1e-14, atol=0)
    assert np.allclose(w.wc, wc, rtol=1e-14, atol=0)


def test_weights_filterpy_agree():
    pts = MerweScaledSigmaPoints(7, alpha=0.1, beta=2.0, kappa=-1.0)
    w = ukf.compute_weights(UTParams())
    assert np.allclose(w.wm, pts.Wm, rtol=1e-14, atol=0)
    assert np.allclose(w.wc, pts.Wc, rtol=1e-14, atol=0)


def test_weights_hand_case():
    w = ukf.compute_weights(UTParams(alpha=1.0, beta=0.0, kappa=2.0, dim=1))
    assert UTParams(1.0, 0.0, 2.0, 1).lam == 2.0
    assert np.allclose(w.wm, [2 / 3, 1 / 6, 1 / 6], rtol=0, atol=1e-15)


@settings(max_examples=200)
@given(st.floats(1e-2, 2.0), st.floats(0.0, 4.0), st.floats(-3.0, 5.0), st.integers(1, 12))
def test_weights_sum_to_one(alpha, beta, kappa, d):
    p = UTParams(alpha, beta, kappa, d)
    if not d + p.lam > 1e-6:
        with pytest.raises(DegenerateScaling):
            ukf.compute_weights(p)
        return
    w = ukf.compute_weights(p)
    assert len(w.wm) == len(w.wc) == 2 * d + 1
    # terms can be as large as 1/(d+lam); bound the rounding accordingly
    assert abs(w.wm.sum() - 1.0) < 1e-12 * max(1.0, 1.0 / (d + p.lam))


@pytest.mark.parametrize(
    "params",
    [UTParams(0.1, 2, -7), UTParams(0.0, 2, 0), UTParams(-1.0, 2, 0), UTParams(1.0, 2, 0, dim=0)],
)
def test_degenerate_scaling(params):
    with pytest.raises(DegenerateScaling):
        ukf.compute_weights(params)


# ---------------------------------------------------------------- sigma points


def test_sigma_points_zero_covariance():
    mean = np.arange(7.0)
    X = ukf.sigma_points(mean, np.zeros((7, 7)))
    assert X.shape == (15, 7)
    assert np.array_equal(X, np.tile(mean, (15, 1)))


def test_sigma_points_identity_offsets():
    X = ukf.sigma_points(np.zeros(7), np.eye(7))
    off = X[1:] - X[0]
    assert np.allclose(np.linalg.norm(off, axis=1), np.sqrt(0.06), rtol=0, atol=1e-12)
    assert np.allclose(off[:7], np.sqrt(0.06) * np.eye(7), atol=1e-12)
    assert np.array_equal(off[7:], -off[:7])


def test_sigma_points_match_longhand_and_filterpy():
    rng = np.random.default_rng(11)
    mean, cov = random_state(rng), random_spd(rng)
    X = ukf.sigma_points(mean, cov)
    ref, _, _ = oracles.sigma_points_loop(mean, cov, 0.1, 2.0, -1.0)
    fp = MerweScaledSigmaPoints(7, 0.1, 2.0, -1.0).sigma_points(mean, cov)
    assert np.allclose(X, ref, rtol=0, atol=1e-12)
    assert np.allclose(X, fp, rtol=0, atol=1e-12)


def test_sigma_points_batched():
    rng = np.random.default_rng(5)
    means = np.stack([random_state(rng) for _ in range(6)])
    covs = np.stack([random_spd(rng) for _ in range(6)])
    X = ukf.sigma_points(means, covs)
    assert X.shape == (6, 15, 7)
    for i in range(6):
        assert np.allclose(X[i], ukf.sigma_points(means[i], covs[i]), rtol=0, atol=1e-13)


def test_identity_transform_reconstructs_inputs():
    rng = np.random.default_rng(12)
    mean, cov = random_state(rng), random_spd(rng)
    Q = random_spd(rng, scale=0.01)
    w = ukf.compute_weights(UTParams())
    m, P = ukf.unscented_transform(ukf.sigma_points(mean, cov), w)
    assert np.allclose(m, mean, rtol=0, atol=1e-10)
    assert np.allclose(P, cov, rtol=0, atol=1e-10)
    m, P = ukf.unscented_transform(ukf.sigma_points(mean, cov), w, Q)
    assert np.allclose(P, cov + Q, rtol=0, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 9))
def test_unscented_transform_linear_exactness(seed, out_dim):
    rng = np.random.default_rng(seed)
    mean, cov = random_state(rng), random_spd(rng)
    A = rng.normal(size=(out_dim, 7))
    Q = random_spd(rng, d=out_dim, scale=0.1)
    w = ukf.compute_weights(UTParams())
    m, P = ukf.unscented_transform(ukf.sigma_points(mean, cov) @ A.T, w, Q)
    m_ref, P_ref = A @ mean, A @ cov @ A.T + Q
    assert np.max(np.abs(m - m_ref)) <= 1e-10 * max(1.0, np.max(np.abs(m_ref)))
    assert np.max(np.abs(P - P_ref)) <= 1e-10 * max(1.0, np.max(np.abs(P_ref)))


# ---------------------------------------------------------------- conditioning


def test_safe_cholesky_jitter_escalation():
    cov = np.diag([1.0, 1.0, -5e-8])
    L, used = ukf.safe_cholesky(cov)
    jitter = used[2, 2] - cov[2, 2]
    assert jitter == pytest.approx(1e-7, rel=1e-9)  # 1e-9, 1e-8 fail; 1e-7 succeeds
    assert np.allclose(L @ L.T, used, atol=1e-15)
    assert np.array_equal(used - np.diag(np.diag(used)), np.zeros((3, 3)))


def test_safe_cholesky_gives_up():
    with pytest.raises(NotPositiveDefinite):
        ukf.safe_cholesky(np.diag([1.0, -1.0]))


def test_safe_cholesky_batch_reports_member():
    covs = np.stack([np.eye(2), np.eye(2), np.diag([1.0, -1.0])])
    with pytest.raises(PointFilterError) as info:
        ukf.safe_cholesky(covs)
    assert info.value.point == 2


def test_condition_symmetrizes():
    cov = np.array([[2.0, 1.0], [0.0, 2.0]])
    assert np.array_equal(ukf.condition(cov), [[2.0, 0.5], [0.5, 2.0]])


# ---------------------------------------------------------------- initialisation


def test_init_state_constant_series():
    s = ukf.init_state(np.full((25, 2), 5.0), 0.04, 2 * np.pi)
    assert np.array_equal(s, [5, 5, 0, 5, 5, 0, 2 * np.pi])


def test_init_state_two_frames():
    s = ukf.init_state([(0.0, 0.0), (1.0, 0.0)], 0.04, 6.0)
    assert s[2] == pytest.approx(25.0, abs=1e-12)
    assert (s[0], s[1], s[3], s[4], s[5], s[6]) == (0.5, 0.0, 0.0, 0.0, 0.0, 6.0)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 20.0))
def test_init_state_carries_omega(seed, omega):
    z = np.random.default_rng(seed).normal(size=(7, 2))
    assert ukf.init_state(z, 0.04, omega)[6] == omega


def test_init_state_too_few_frames():
    with pytest.raises(TooFewFrames):
        ukf.init_state(np.zeros((1, 2)), 0.04, 6.0)


def test_init_cov_example():
    P = ukf.init_cov(0.01, 0.04, 25)
    r, dt, k = Fraction(1, 100), Fraction(1, 25), 25
    phi = [
        [r, r / k, r / (k * dt)],
        [r / k, r, r / dt],
        [r / (k * dt), r / dt, 2 * r / dt**2],
    ]
    assert [[float(v) for v in row] for row in phi] == [
        [0.01, 0.0004, 0.01],
        [0.0004, 0.01, 0.25],
        [0.01, 0.25, 12.5],
    ]
    assert np.allclose(P[:3, :3], np.array(phi, dtype=float), rtol=1e-14, atol=0)
    assert np.array_equal(P[3:6, 3:6], P[:3, :3])
    assert np.array_equal(P, P.T)
    assert P[6, 6] == 1.0
    assert not P[:3, 3:].any() and not P[3:6, 6].any()
    assert np.linalg.eigvalsh(P).min() > 0


@given(st.floats(0.0, 10.0), st.floats(1e-3, 1.0), st.integers(2, 100))
def test_init_cov_structure(r, dt, k):
    P = ukf.init_cov(r, dt, k)
    assert np.array_equal(P, P.T) and P[6, 6] == 1.0


# ---------------------------------------------------------------- predict / update


def filterpy_ukf(mean, cov, noise, dt=0.04):
    f = UnscentedKalmanFilter(
        dim_x=7,
        dim_z=2,
        dt=dt,
        hx=lambda x: x[[1, 4]],
        fx=lambda x, dt: dynamics.propagate(x, dt),
        points=MerweScaledSigmaPoints(7, 0.1, 2.0, -1.0),
    )
    f.x = mean.copy()
    f.P = cov.copy()
    f.R = np.eye(2) * noise.r
    return f


def reference_q(x, noise):
    # the model builds Q from the mean omega, floored like the sigma points
    return dynamics.full_process_cov(max(x[6], dynamics.OMEGA_FLOOR), META.dt, noise)


@pytest.mark.parametrize("seed", range(5))
def test_predict_matches_reference_ukf(seed):
    rng = np.random.default_rng(seed)
    noise = NoiseParams()
    mean, cov = random_state(rng), random_spd(rng)
    ref = filterpy_ukf(mean, cov, noise)
    ref.Q = dynamics.full_process_cov(mean[6], 0.04, noise)
    ref.predict()
    got = ukf.predict(FilterState(mean, cov), 0.04, noise, UTParams())
    assert np.allclose(got.mean, ref.x, rtol=0, atol=1e-8)
    assert np.allclose(got.cov, ref.P, rtol=0, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_update_matches_reference_ukf(seed):
    rng = np.random.default_rng(100 + seed)
    noise = NoiseParams()
    mean, cov = random_state(rng), random_spd(rng)
    z = mean[[1, 4]] + rng.normal(size=2)
    ref = filterpy_ukf(mean, cov, noise)
    ref.Q = dynamics.full_process_cov(mean[6], 0.04, noise)
    ref.predict()
    ref.update(z)
    fs = ukf.predict(FilterState(mean, cov), 0.04, noise, UTParams())
    got = ukf.update(fs, z, noise.r, UTParams())
    assert np.allclose(got.mean, ref.x, rtol=0, atol=1e-8)
    assert np.allclose(got.cov, ref.P, rtol=0, atol=1e-8)


def test_each_step_of_a_run_matches_reference_ukf():
    seq = synth.generate(synth.SynthConfig(n_points=4, seed=3))
    noise = NoiseParams()
    for z in seq.noisy:
        ref = filterpy_ukf(ukf.init_state(z, META.dt, META.omega1), ukf.init_cov(noise.r, META.dt, 25), noise)
        for k in range(25):
            # start both filters from the same state every frame
            fs = FilterState(ref.x.copy(), ref.P.copy())
            ref.Q = reference_q(ref.x, noise)
            ref.predict()
            ref.update(z[k])
            fs = ukf.update(ukf.predict(fs, META.dt, noise), z[k], noise.r)
            assert np.allclose(fs.mean, ref.x, rtol=1e-8, atol=1e-8)
            assert np.allclose(fs.cov, ref.P, rtol=1e-8, atol=1e-8)


def test_free_run_tracks_reference_ukf():
    seq = synth.generate(synth.SynthConfig(n_points=4, seed=3))
    noise = NoiseParams()
    ours = ukf.filter_sequence(seq.noisy, META, noise, backend="python")
    for i, z in enumerate(seq.noisy):
        ref = filterpy_ukf(ukf.init_state(z, META.dt, META.omega1), ukf.init_cov(noise.r, META.dt, 25), noise)
        for k in range(25):
            ref.Q = reference_q(ref.x, noise)
            ref.predict()
            ref.update(z[k])
            # per-step rounding differences (~1e-12) grow over a cycle
            # through the -112 centre covariance weight
            assert np.allclose(ours[i, k], ref.x[[1, 4]], rtol=0, atol=1e-6)


def test_predict_degenerates_to_propagate():
    mean = np.array([3.0, 4.0, 10.0, -1.0, 0.5, -7.0, 6.0])
    fs = ukf.predict(FilterState(mean, np.zeros((7, 7))), 0.04, NoiseParams(0, 0, 0, 0))
    assert np.allclose(fs.mean, dynamics.propagate(mean, 0.04), rtol=0, atol=1e-12)
    assert np.allclose(fs.cov, 0, atol=1e-15)


def test_predict_fixed_omega_is_linear():
    rng = np.random.default_rng(8)
    mean = random_state(rng)
    cov = random_spd(rng)
    cov[6, :] = cov[:, 6] = 0.0
    cov[:6, :6] += np.eye(6)
    fs = ukf.predict(FilterState(mean, cov), 0.04, NoiseParams())
    assert np.max(np.abs(fs.mean - dynamics.propagate(mean, 0.04))) < 1e-9


def test_predict_uses_given_noise_omega():
    rng = np.random.default_rng(9)
    mean, cov = random_state(rng), random_spd(rng)
    noise = NoiseParams(0.5, 0.5, 0.01, 1.0)
    a = ukf.predict(FilterState(mean, cov), 0.04, noise, q_omega=3.0)
    b = ukf.predict(FilterState(mean, cov), 0.04, noise)
    Qa = dynamics.full_process_cov(3.0, 0.04, noise)
    Qb = dynamics.full_process_cov(mean[6], 0.04, noise)
    assert np.allclose(a.cov - b.cov, Qa - Qb, atol=1e-12)


def test_update_zero_innovation():
    rng = np.random.default_rng(13)
    mean, cov = random_state(rng), random_spd(rng)
    fs = ukf.predict(FilterState(mean, cov), 0.04, NoiseParams())
    w = ukf.compute_weights(UTParams())
    mu_z, _ = ukf.unscented_transform(dynamics.measure(fs.sigmas), w)
    post = ukf.update(fs, mu_z, 0.01)
    assert np.allclose(post.mean, fs.mean, rtol=0, atol=1e-12)
    assert np.trace(post.cov) <= np.trace(fs.cov) + 1e-12


def test_update_uninformative_measurement():
    rng = np.random.default_rng(14)
    mean, cov = random_state(rng), random_spd(rng)
    fs = FilterState(mean, cov)
    post = ukf.update(fs, mean[[1, 4]] + 50.0, 1e12)
    assert np.allclose(post.mean, mean, rtol=0, atol=1e-9)
    assert np.allclose(post.cov, cov, rtol=0, atol=1e-9)


def test_update_singular_innovation():
    fs = FilterState(np.arange(7.0), np.zeros((7, 7)))
    with pytest.raises(SingularInnovation):
        ukf.update(fs, (1.0, 4.0), 0.0)


def test_covariance_invariants_along_a_run(monkeypatch):
    raw = []
    original = ukf.condition

    def spy(cov):
        raw.append(np.array(cov))
        return original(cov)

    monkeypatch.setattr(ukf, "condition", spy)
    seq = synth.generate(synth.SynthConfig(n_points=8, seed=21))
    ukf.filter_sequence(seq.noisy, META, backend="python")
    assert len(raw) == 2 * 25
    for P in raw:
        assert np.max(np.abs(P - np.swapaxes(P, -1, -2))) < 1e-10
        assert np.linalg.eigvalsh(0.5 * (P + np.swapaxes(P, -1, -2))).min() >= -1e-9
        conditioned = original(P)
        np.linalg.cholesky(conditioned)  # positive definite after conditioning


# ---------------------------------------------------------------- filter_sequence


@pytest.mark.parametrize("backend", BACKENDS)
def test_constant_measurements_converge(backend):
    z = np.zeros((3, 25, 2))
    z[:] = np.array([[10.0, 20.0], [-3.0, 4.5], [64.0, 64.0]])[:, None, :]
    out = ukf.filter_sequence(z, META, backend=backend)
    assert np.max(np.abs(out[:, 13:] - z[:, 13:])) < 1e-3


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("n", [1, 3, 60])
@pytest.mark.parametrize("k", [2, 25, 30])
def test_shape_contract(backend, n, k):
    rng = np.random.default_rng(n * k)
    z = 50 + rng.normal(size=(n, k, 2))
    out = ukf.filter_sequence(z, SequenceMeta(60, k), backend=backend)
    assert out.shape == z.shape and np.all(np.isfinite(out))


@pytest.mark.parametrize(
    "z,exc",
    [
        (np.zeros((3, 25)), ValueError),
        (np.zeros((3, 25, 3)), ValueError),
        (np.zeros((0, 25, 2)), ValueError),
        (np.zeros((3, 1, 2)), TooFewFrames),
        (np.full((3, 25, 2), np.nan), ValueError),
    ],
)
def test_filter_sequence_rejects_bad_input(z, exc):
    with pytest.raises(exc):
        ukf.filter_sequence(z, META)


def test_filter_sequence_rejects_other_dimension():
    with pytest.raises(DegenerateScaling):
        ukf.filter_sequence(np.zeros((2, 25, 2)), META, ut=UTParams(dim=5))


@pytest.mark.parametrize("backend", BACKENDS)
def test_failures_name_the_point(backend):
    rng = np.random.default_rng(0)
    z = 30 + rng.normal(size=(5, 25, 2))
    z[3] = 1e300 * (1 + rng.random((25, 2)))  # overflows the covariance
    with pytest.raises(PointFilterError) as info:
        ukf.filter_sequence(z, META, backend=backend)
    assert info.value.point == 3
    assert isinstance(info.value.cause, np.linalg.LinAlgError)
    assert "point 3" in str(info.value)


@pytest.mark.parametrize("backend", BACKENDS)
def test_points_are_independent(backend):
    seq = synth.generate(synth.SynthConfig(n_points=20, seed=4))
    perm = np.random.default_rng(4).permutation(20)
    out = ukf.filter_sequence(seq.noisy, META, backend=backend)
    out_perm = ukf.filter_sequence(seq.noisy[perm], META, backend=backend)
    assert np.array_equal(out_perm, out[perm])
    single = ukf.filter_sequence(seq.noisy[7:8], META, backend=backend)
    if backend == "compiled":
        assert np.array_equal(single[0], out[7])
    else:
        # batched LAPACK calls may round differently from single ones
        assert np.allclose(single[0], out[7], rtol=0, atol=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
def test_deterministic(backend):
    seq = synth.generate(synth.SynthConfig(seed=5))
    a = ukf.filter_sequence(seq.noisy, META, backend=backend)
    b = ukf.filter_sequence(seq.noisy.copy(), META, backend=backend)
    assert a.tobytes() == b.tobytes()


@pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled kernel not built")
@pytest.mark.parametrize("freeze", [False, True])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_backends_agree(seed, freeze):
    seq = synth.generate(synth.SynthConfig(seed=seed))
    kw = dict(freeze_process_noise=freeze)
    a = ukf.filter_sequence(seq.noisy, META, backend="compiled", **kw)
    b = ukf.filter_sequence(seq.noisy, META, backend="python", **kw)
    assert np.max(np.abs(a - b)) < 1e-6


def test_backend_env_override(monkeypatch):
    monkeypatch.setenv(ukf.BACKEND_ENV, "python")
    assert ukf.default_backend() == "python"
    monkeypatch.setenv(ukf.BACKEND_ENV, "fortran")
    with pytest.raises(ValueError):
        ukf.default_backend()
    monkeypatch.delenv(ukf.BACKEND_ENV)
    assert ukf.default_backend() == BACKENDS[0]


def test_freeze_process_noise_changes_little_but_something():
    seq = synth.generate(synth.SynthConfig(seed=6))
    a = ukf.filter_sequence(seq.noisy, META, backend="python")
    b = ukf.filter_sequence(seq.noisy, META, backend="python", freeze_process_noise=True)
    assert not np.array_equal(a, b)
    assert np.max(np.abs(a - b)) < 0.5


@pytest.mark.parametrize("seed", range(10))
def test_total_variation_reduced_with_outlier_frames(seed):
    # noise level matched to the measurement variance (sigma = sqrt(r))
    # and outliers of 10 sigma on two isolated frames
    cfg = synth.SynthConfig(gaussian_sigma=0.1, outlier_magnitude=1.0, seed=seed)
    seq = synth.generate(cfg)
    out = ukf.filter_sequence(seq.noisy, META)
    assert np.all(synth.total_variation(out) < synth.total_variation(seq.noisy))


def test_filtered_closer_to_truth_than_measurements():
    for seed in range(10):
        seq = synth.generate(synth.SynthConfig(seed=seed))
        out = ukf.filter_sequence(seq.noisy, META)
        assert synth.rmse(out, seq.truth) < synth.rmse(seq.noisy, seq.truth)
