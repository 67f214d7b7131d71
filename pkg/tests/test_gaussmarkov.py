import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, linalg

from helpers import random_hgmm
from qstat.errors import ResourceLimitError, ValidationError
from qstat.gaussmarkov import (CtGaussMarkovModel, GaussMarkovModel, GaussianRecord, discretize,
                               gaussian_loglik_oracle, gaussian_smoother_oracle, hgmm_sample,
                               kalman_bucy, kalman_filter, mfp_smooth, rts_smooth,
                               sample_discrete, van_loan)


def _scalar(a=0.9, c=1.0, q=0.5, r=0.2, s=0.0, p0=1.0):
    return GaussMarkovModel([[a]], [[c]], [[q]], [[r]], [0.0], [[p0]], S=[[s]])


def _ou_model(gamma=1.0, sigma2=2.0, r=0.5, s=0.3):
    # Ornstein-Uhlenbeck state observed in white noise, correlated noises
    f = np.array([[-gamma]])
    q = np.array([[sigma2]])
    p_ss = sigma2 / (2 * gamma)
    return CtGaussMarkovModel(f, [[1.0]], q, [[r]], [0.0], [[p_ss]], s=[[s]])


# discrete filter -----------------------------------------------------------

def test_single_step_closed_form():
    m = _scalar(c=2.0, r=0.3, p0=0.7)
    y = 0.4
    var = 4 * 0.7 + 0.3
    expected = -0.5 * (math.log(2 * math.pi * var) + y * y / var)
    assert kalman_filter(m, [[y]]).loglik == pytest.approx(expected, rel=1e-14)


def test_loglik_matches_dense_oracle():
    rng = np.random.default_rng(1)
    for _ in range(25):
        m = random_hgmm(rng, with_input=bool(rng.integers(2)))
        K = int(rng.integers(1, 16))
        _, Y = sample_discrete(m, K, seed=rng)
        ll = kalman_filter(m, Y).loglik
        assert ll == pytest.approx(gaussian_loglik_oracle(m, Y), rel=1e-8)


def test_time_varying_model_matches_oracle():
    rng = np.random.default_rng(4)
    K, D, d = 6, 2, 1
    A = rng.standard_normal((K, D, D)) * 0.5
    C = rng.standard_normal((K, d, D))
    Q = np.stack([np.eye(D) * (1 + 0.1 * k) for k in range(K)])
    R = np.stack([np.eye(d) * (0.5 + 0.05 * k) for k in range(K)])
    S = np.full((K, D, d), 0.1)
    m = GaussMarkovModel(A, C, Q, R, np.zeros(D), np.eye(D), S=S)
    _, Y = sample_discrete(m, K, seed=2)
    assert kalman_filter(m, Y).loglik == pytest.approx(gaussian_loglik_oracle(m, Y), rel=1e-10)
    with pytest.raises(ValidationError):
        kalman_filter(m, np.zeros((K + 1, d)))


def test_loglik_is_additive_over_split_records():
    rng = np.random.default_rng(2)
    m = random_hgmm(rng)
    _, Y = sample_discrete(m, 20, seed=3)
    full = kalman_filter(m, Y)
    first = kalman_filter(m, Y[:8])
    second = kalman_filter(m.with_initial(first.x_pred[-1], first.P_pred[-1]), Y[8:])
    assert first.loglik + second.loglik == pytest.approx(full.loglik, rel=1e-12)


def test_innovations_are_white_under_true_model():
    m = _scalar(a=0.95, q=0.3, r=0.4, s=0.1)
    _, Y = sample_discrete(m, 20000, seed=8)
    out = kalman_filter(m, Y)
    z = out.innovations[:, 0] / np.sqrt(out.innovation_cov[:, 0, 0])
    assert np.var(z) == pytest.approx(1.0, abs=0.03)
    assert abs(np.corrcoef(z[1:], z[:-1])[0, 1]) < 0.03


def test_cross_covariance_changes_likelihood():
    rng = np.random.default_rng(0)
    m0 = _scalar(s=0.0)
    m1 = _scalar(s=0.15)
    Y = rng.standard_normal((10, 1))
    assert kalman_filter(m0, Y).loglik != pytest.approx(kalman_filter(m1, Y).loglik)
    assert kalman_filter(m1, Y).loglik == pytest.approx(gaussian_loglik_oracle(m1, Y), rel=1e-12)


def test_invalid_noise_rejected():
    with pytest.raises(ValidationError):
        _scalar(q=0.1, r=0.1, s=0.5)  # joint covariance indefinite
    with pytest.raises(ValidationError):
        _scalar(r=0.0)


def test_oracle_cap():
    m = _scalar()
    with pytest.raises(ResourceLimitError):
        gaussian_loglik_oracle(m, np.zeros((3000, 1)))


# smoother ------------------------------------------------------------------

def test_rts_matches_dense_conditioning():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = random_hgmm(rng)
        K = int(rng.integers(1, 10))
        _, Y = sample_discrete(m, K, seed=rng)
        xs, Ps = rts_smooth(m, kalman_filter(m, Y))
        for k in (0, K // 2, K):
            mean, cov = gaussian_smoother_oracle(m, Y, k)
            np.testing.assert_allclose(xs[k], mean, atol=1e-8)
            np.testing.assert_allclose(Ps[k], cov, atol=1e-8)


def test_smoother_never_worse_than_filter():
    rng = np.random.default_rng(6)
    for _ in range(10):
        m = random_hgmm(rng)
        _, Y = sample_discrete(m, 12, seed=rng)
        filt = kalman_filter(m, Y)
        _, Ps = rts_smooth(m, filt)
        for k in range(len(filt)):
            assert np.linalg.eigvalsh(filt.P_upd[k] - Ps[k]).min() >= -1e-9


# continuous time -----------------------------------------------------------

def test_van_loan_matches_quadrature():
    f = np.array([[-0.5, 1.0], [-1.0, -0.2]])
    q = np.array([[0.3, 0.1], [0.1, 0.6]])
    dt = 0.7
    phi, Qd = van_loan(f, q, dt)
    np.testing.assert_allclose(phi, linalg.expm(f * dt), atol=1e-13)
    ref = integrate.quad_vec(lambda t: linalg.expm(f * t) @ q @ linalg.expm(f * t).T,
                             0, dt, epsabs=1e-13)[0]
    np.testing.assert_allclose(Qd, ref, atol=1e-11)


def test_ou_discretization_closed_form():
    gamma, sigma2, dt = 1.3, 0.8, 0.25
    m = _ou_model(gamma, sigma2)
    d = discretize(m, dt, "euler")
    assert d.A[0, 0] == pytest.approx(math.exp(-gamma * dt))
    assert d.Q[0, 0] == pytest.approx(sigma2 / (2 * gamma) * -math.expm1(-2 * gamma * dt))


def test_exact_and_euler_schemes_agree_to_first_order():
    m = _ou_model()
    gaps = []
    for dt in (0.02, 0.01):
        e, x = discretize(m, dt, "exact"), discretize(m, dt, "euler")
        gaps.append(abs(e.R[0, 0] - x.R[0, 0]) / dt + abs(e.C[0, 0] - x.C[0, 0]) / dt)
    assert gaps[1] == pytest.approx(gaps[0] / 2, rel=0.05)


def test_exact_scheme_loglik_matches_oracle_on_increments():
    m = _ou_model()
    _, rec = hgmm_sample(m, 40, seed=1, dt=0.1)
    d = discretize(m, 0.1)
    ll = kalman_filter(d, rec.increments).loglik
    assert ll == pytest.approx(gaussian_loglik_oracle(d, rec.increments), rel=1e-10)


def test_kalman_bucy_converges_to_stationary_riccati():
    gamma, sigma2, r, s = 1.0, 2.0, 0.5, 0.3
    m = _ou_model(gamma, sigma2, r, s)
    rec = GaussianRecord(0.01, np.zeros((2000, 1)))
    out = kalman_bucy(m, rec)
    # scalar Riccati: -2 gamma P + q - (P + s)^2 / r = 0
    a, b, c = 1 / r, 2 * gamma + 2 * s / r, s * s / r - sigma2
    p_inf = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    assert out.covs[-1, 0, 0] == pytest.approx(p_inf, rel=1e-8)


def test_kalman_bucy_tracks_discrete_filter_for_small_dt():
    m = _ou_model()
    _, rec = hgmm_sample(m, 2000, seed=4, dt=0.002)
    cont = kalman_bucy(m, rec)
    disc = kalman_filter(discretize(m, rec.dt), rec.increments)
    err = np.abs(cont.means[:, 0] - disc.x_pred[:, 0]).max()
    assert err < 0.02 * np.std(disc.x_pred[:, 0])


def test_mfp_smoother_tracks_rts_for_small_dt():
    m = _ou_model()
    _, rec = hgmm_sample(m, 1000, seed=6, dt=0.002)
    sm = mfp_smooth(m, rec)
    d = discretize(m, rec.dt)
    xs, Ps = rts_smooth(d, kalman_filter(d, rec.increments))
    assert np.abs(sm.means[:, 0] - xs[:, 0]).max() < 0.03 * np.std(xs[:, 0])
    np.testing.assert_allclose(sm.covs[:, 0, 0], Ps[:, 0, 0], rtol=0.02)


def test_sampling_deterministic_and_batched():
    m = _ou_model()
    _, a = hgmm_sample(m, 30, seed=12, dt=0.1)
    _, b = hgmm_sample(m, 30, seed=12, dt=0.1)
    assert a.digest() == b.digest()
    _, recs = hgmm_sample(m, 30, seed=12, dt=0.1, n_records=3)
    assert len(recs) == 3 and all(len(r) == 30 for r in recs)


# records -------------------------------------------------------------------

def test_record_round_trip(tmp_path):
    rec = GaussianRecord(0.1, np.random.default_rng(0).standard_normal((7, 2)), seed=3,
                         fingerprint="abc", meta={"detuning": "red"})
    rec.write(tmp_path / "r")
    back = GaussianRecord.read(tmp_path / "r")
    np.testing.assert_array_equal(back.increments, rec.increments)
    assert back.digest() == rec.digest() and back.meta == {"detuning": "red"}


def test_empty_record_round_trip(tmp_path):
    rec = GaussianRecord(0.5, np.empty((0, 2)))
    rec.write(tmp_path / "e")
    assert (tmp_path / "e.csv").read_text() == "t,y_1,y_2\n"
    back = GaussianRecord.read(tmp_path / "e")
    assert back.increments.shape == (0, 2) and back.duration == 0.0


def test_coarsen_and_split():
    inc = np.arange(12.0).reshape(6, 2)
    rec = GaussianRecord(0.1, inc)
    c = rec.coarsen(2)
    assert c.dt == pytest.approx(0.2)
    np.testing.assert_array_equal(c.increments, inc[0::2] + inc[1::2])
    a, b = rec.split(4)
    assert len(a) == 4 and len(b) == 2


def test_record_validation():
    with pytest.raises(ValidationError):
        GaussianRecord(0.0, np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        GaussianRecord(0.1, [[np.nan]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 12))
def test_filter_covariances_stay_psd(seed, k):
    rng = np.random.default_rng(seed)
    m = random_hgmm(rng)
    _, Y = sample_discrete(m, k, seed=rng)
    out = kalman_filter(m, Y)
    assert np.isfinite(out.loglik)
    for P in np.concatenate([out.P_pred, out.P_upd]):
        assert np.linalg.eigvalsh(P).min() >= -1e-9
