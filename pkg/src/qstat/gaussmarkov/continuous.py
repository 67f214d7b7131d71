"""Continuous-time models: discretization, Kalman-Bucy filter, two-filter smoother."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .._linalg import clip_psd, symmetrize
from ..errors import ConditioningError, ValidationError
from .discrete import sample_discrete
from .model import CtGaussMarkovModel, GaussMarkovModel
from .records import GaussianRecord


def van_loan(f, q, dt):
    """Return (expm(f dt), int_0^dt expm(f t) q expm(f t)^T dt)."""
    n = f.shape[0]
    m = np.zeros((2 * n, 2 * n))
    m[:n, :n] = -f
    m[:n, n:] = q
    m[n:, n:] = f.T
    e = linalg.expm(m * dt)
    phi = e[n:, n:].T
    return phi, symmetrize(phi @ e[:n, n:])


def _input_integral(f, g, dt):
    """int_0^dt expm(f t) dt @ g via an augmented exponential."""
    n = f.shape[0]
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = f
    m[:n, n] = g
    return linalg.expm(m * dt)[:n, n]


def discretize(model: CtGaussMarkovModel, dt: float, scheme: str = "exact") -> GaussMarkovModel:
    """Discrete model whose observations are the increments Delta y_k.

    ``scheme="euler"`` uses C = c dt, R = r dt, S = s dt with A and Q exact.
    ``scheme="exact"`` (default) discretizes the augmented state (x, y)
    exactly, so the joint (w_k, v_k) covariance is PSD by construction; it
    agrees with the euler scheme to first order in dt.  The exact scheme
    does not support a deterministic input.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    D, d = model.dim_state, model.dim_obs
    bu = model.bu
    if scheme == "euler":
        A, Q = van_loan(model.f, model.q, dt)
        B = None if model.b is None else _input_integral(model.f, bu, dt)[:, None]
        return GaussMarkovModel(A=A, C=model.c * dt, Q=Q, R=model.r * dt, S=model.s * dt,
                                B=B, u=None if B is None else np.ones(1),
                                x0=model.x0, P0=model.P0, check=False)
    if scheme != "exact":
        raise ValidationError(f"unknown scheme {scheme!r}")
    if np.any(bu != 0):
        raise ValidationError("exact scheme does not support inputs; use scheme='euler'")
    F = np.zeros((D + d, D + d))
    F[:D, :D] = model.f
    F[D:, :D] = model.c
    N = np.block([[model.q, model.s], [model.s.T, model.r]])
    Phi, Qa = van_loan(F, N, dt)
    return GaussMarkovModel(A=Phi[:D, :D], C=Phi[D:, :D], Q=Qa[:D, :D], R=Qa[D:, D:],
                            S=Qa[:D, D:], x0=model.x0, P0=model.P0, check=False)


def hgmm_sample(model, n_steps: int, seed=None, dt: float | None = None,
                scheme: str = "exact", n_records=None):
    """Sample a hidden path and observation record.

    For a continuous-time model ``dt`` is required and the record holds the
    increments Delta y_k; the sampling uses ``discretize(model, dt, scheme)``.
    Returns ``(path, record)``; with ``n_records`` set, ``path`` gains a leading
    axis and ``record`` is a list.
    """
    if isinstance(model, CtGaussMarkovModel):
        if dt is None:
            raise ValidationError("dt is required for continuous-time models")
        disc = discretize(model, dt, scheme)
    else:
        disc, dt = model, 1.0 if dt is None else dt
    xs, ys = sample_discrete(disc, n_steps, seed=seed, n_records=n_records)
    if n_records is None:
        return xs, GaussianRecord(dt, ys.reshape(n_steps, disc.dim_obs), seed=seed)
    return xs, [GaussianRecord(dt, y.reshape(n_steps, disc.dim_obs), seed=seed) for y in ys]


@dataclass
class ContinuousFilterOutput:
    """Filter or smoother output sampled at the record grid t_k = k dt, k = 0..K."""

    times: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    innovations: np.ndarray | None = None
    loglik: float = 0.0


def _riccati_rhs(P, f, q, c, s, r_inv):
    m = P @ c.T + s
    return f @ P + P @ f.T + q - m @ r_inv @ m.T


def _rk4(rhs, P, h, n):
    for _ in range(n):
        k1 = rhs(P)
        k2 = rhs(P + 0.5 * h * k1)
        k3 = rhs(P + 0.5 * h * k2)
        k4 = rhs(P + h * k3)
        P = P + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return symmetrize(P)


def kalman_bucy(model: CtGaussMarkovModel, record: GaussianRecord,
                substeps: int = 4) -> ContinuousFilterOutput:
    """Kalman-Bucy filter driven by the increments of ``record``.

    The Riccati equation is integrated with fixed-step RK4 (``substeps`` per
    record interval); the mean takes one Ito-Euler step per increment with the
    gain (Sigma c^T + s) r^{-1} evaluated at the interval start.  Guidance:
    dt <= 0.01 / ||f||.

    ``loglik`` is the continuous-time functional
    sum_k [(c x'_k)^T r^{-1} dy_k - 1/2 (c x'_k)^T r^{-1} c x'_k dt], i.e. the
    log-density relative to the Wiener measure with covariance r.
    """
    f, c, q, r, s = model.f, model.c, model.q, model.r, model.s
    r_inv = np.linalg.inv(r)
    dt = record.dt
    dY = record.increments
    K = len(record)
    x = model.x0.copy()
    P = np.array(model.P0)
    means = np.empty((K + 1, model.dim_state))
    covs = np.empty((K + 1,) + P.shape)
    innov = np.empty((K, model.dim_obs))
    means[0], covs[0] = x, P
    ll = 0.0
    bu = model.bu

    def rhs(M):
        return _riccati_rhs(M, f, q, c, s, r_inv)

    for k in range(K):
        gain = (P @ c.T + s) @ r_inv
        pred = c @ x
        nu = dY[k] - pred * dt
        ll += pred @ r_inv @ dY[k] - 0.5 * pred @ r_inv @ pred * dt
        x = x + (f @ x + bu) * dt + gain @ nu
        P = clip_psd(_rk4(rhs, P, dt / substeps, substeps), step=k + 1)
        means[k + 1], covs[k + 1], innov[k] = x, P, nu
    return ContinuousFilterOutput(dt * np.arange(K + 1), means, covs, innov, float(ll))


def mfp_smooth(model: CtGaussMarkovModel, record: GaussianRecord,
               substeps: int = 4) -> ContinuousFilterOutput:
    """Two-filter (Mayne-Fraser-Potter) smoother.

    A backward filter in information form propagates Lambda_t = Phi_t^{-1}
    and eta_t = Phi_t^{-1} x''_t from Lambda_T = 0, eta_T = 0:

        -dLambda/dt = ft^T Lambda + Lambda ft - Lambda qt Lambda + c^T r^{-1} c
        eta_t = eta_{t+dt} + [(ft^T - Lambda qt) eta - Lambda b u] dt
                + (c^T - Lambda s) r^{-1} dy

    with ft = f - s r^{-1} c and qt = q - s r^{-1} s^T.  It is fused with the
    forward Kalman-Bucy filter: Pi = (Sigma^{-1} + Lambda)^{-1},
    x = Pi (Sigma^{-1} x' + eta).
    """
    fwd = kalman_bucy(model, record, substeps)
    f, c, q, r, s = model.f, model.c, model.q, model.r, model.s
    r_inv = np.linalg.inv(r)
    ft = f - s @ r_inv @ c
    qt = symmetrize(q - s @ r_inv @ s.T)
    info_obs = c.T @ r_inv @ c
    dt = record.dt
    dY = record.increments
    K = len(record)
    D = model.dim_state
    bu = model.bu

    def rhs(L):
        return ft.T @ L + L @ ft - L @ qt @ L + info_obs

    lam = np.zeros((D, D))
    eta = np.zeros(D)
    means = np.empty_like(fwd.means)
    covs = np.empty_like(fwd.covs)
    for k in range(K, -1, -1):
        try:
            sig_inv = np.linalg.inv(fwd.covs[k])
        except np.linalg.LinAlgError:
            raise ConditioningError("forward covariance is singular", step=k) from None
        pi = clip_psd(np.linalg.inv(sig_inv + lam), step=k, what="fused covariance")
        means[k] = pi @ (sig_inv @ fwd.means[k] + eta)
        covs[k] = pi
        if k == 0:
            break
        eta = eta + ((ft.T - lam @ qt) @ eta - lam @ bu) * dt \
            + (c.T - lam @ s) @ r_inv @ dY[k - 1]
        lam = _rk4(rhs, lam, dt / substeps, substeps)
    return ContinuousFilterOutput(fwd.times, means, covs, None, fwd.loglik)
