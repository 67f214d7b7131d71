"""Kalman filtering, RTS smoothing and sampling for discrete-time models.

Conventions follow the correlated-noise form: the filter carries the
estimate x'_k = E(x_k | Y_k), the observation y_{k+1} = C x_k + v_k first
updates x_k to x'^+_k = E(x_k | Y_{k+1}), and the prediction uses the
decorrelated dynamics A - S R^{-1} C with gain S R^{-1} on y_{k+1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .._linalg import clip_psd, psd_factor, symmetrize
from ..errors import ConditioningError, ResourceLimitError, ValidationError
from .model import GaussMarkovModel

ORACLE_SIZE_CAP = 2000
_LOG2PI = math.log(2.0 * math.pi)


@dataclass
class FilterOutput:
    """Per-step filter quantities.

    ``x_pred[k]``/``P_pred[k]`` hold x'_k, Sigma_k for k = 0..K;
    ``x_upd[k]``/``P_upd[k]`` hold x'^+_k, Sigma^+_k for k = 0..K-1.
    """

    x_pred: np.ndarray
    P_pred: np.ndarray
    x_upd: np.ndarray
    P_upd: np.ndarray
    innovations: np.ndarray
    innovation_cov: np.ndarray
    loglik_steps: np.ndarray
    loglik: float

    def __len__(self):
        return self.x_upd.shape[0]


def _chol(omega, step):
    try:
        return np.linalg.cholesky(omega)
    except np.linalg.LinAlgError:
        raise ConditioningError("innovation covariance not positive definite", step=step) from None


def kalman_filter(model: GaussMarkovModel, observations) -> FilterOutput:
    """Run the Kalman filter with correlated process/measurement noise.

    The log-likelihood is the prediction-error decomposition
    sum_k [-1/2 ln det(2 pi Omega_k) - 1/2 nu_k^T Omega_k^{-1} nu_k].
    Covariance updates use the Joseph form and are symmetrized every step.
    """
    Y = np.asarray(observations, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None] if model.dim_obs == 1 else Y[None, :]
    K = Y.shape[0]
    if K and Y.shape[1] != model.dim_obs:
        raise ValidationError("observation dimension does not match model")
    if model.time_varying and K > model.horizon:
        raise ValidationError("more observations than the model horizon")
    D, d = model.dim_state, model.dim_obs
    x_pred = np.empty((K + 1, D))
    P_pred = np.empty((K + 1, D, D))
    x_upd = np.empty((K, D))
    P_upd = np.empty((K, D, D))
    nus = np.empty((K, d))
    omegas = np.empty((K, d, d))
    lls = np.empty(K)
    x, P = model.x0.copy(), np.array(model.P0)
    x_pred[0], P_pred[0] = x, P
    eye = np.eye(D)
    for k in range(K):
        A, _, C, Q, R, S, bu = model.at(k)
        y = Y[k]
        omega = symmetrize(C @ P @ C.T + R)
        L = _chol(omega, k)
        nu = y - C @ x
        gain = linalg.cho_solve((L, True), C @ P).T
        z = linalg.solve_triangular(L, nu, lower=True)
        lls[k] = -0.5 * (d * _LOG2PI + 2.0 * np.log(np.diag(L)).sum() + z @ z)
        xu = x + gain @ nu
        IKC = eye - gain @ C
        Pu = symmetrize(IKC @ P @ IKC.T + gain @ R @ gain.T)
        T = linalg.solve(R, S.T, assume_a="pos").T
        At = A - T @ C
        x = A @ xu + bu + T @ (y - C @ xu)
        P = clip_psd(At @ Pu @ At.T + Q - T @ S.T, step=k + 1)
        x_upd[k], P_upd[k], nus[k], omegas[k] = xu, Pu, nu, omega
        x_pred[k + 1], P_pred[k + 1] = x, P
    return FilterOutput(x_pred, P_pred, x_upd, P_upd, nus, omegas, lls, float(lls.sum()))


def rts_smooth(model: GaussMarkovModel, filt: FilterOutput):
    """Rauch-Tung-Striebel smoother.

    Returns smoothed means (K+1, D) and covariances (K+1, D, D) for
    k = 0..K.  A singular predicted covariance raises ConditioningError.
    """
    K = len(filt)
    xs = np.empty_like(filt.x_pred)
    Ps = np.empty_like(filt.P_pred)
    xs[K], Ps[K] = filt.x_pred[K], filt.P_pred[K]
    for k in range(K - 1, -1, -1):
        A, _, C, Q, R, S, _ = model.at(k)
        At = A - linalg.solve(R, S.T, assume_a="pos").T @ C
        Pn = filt.P_pred[k + 1]
        try:
            cf = linalg.cho_factor(Pn)
        except linalg.LinAlgError:
            raise ConditioningError("predicted covariance is singular", step=k + 1) from None
        ups = linalg.cho_solve(cf, At @ filt.P_upd[k]).T
        xs[k] = filt.x_upd[k] + ups @ (xs[k + 1] - filt.x_pred[k + 1])
        Ps[k] = symmetrize(filt.P_upd[k] - ups @ (Pn - Ps[k + 1]) @ ups.T)
    return xs, Ps


def _joint_linear_map(model: GaussMarkovModel, K: int):
    """Express (x_0..x_K, y_1..y_K) as mean + G z with z ~ N(0, blockdiag)."""
    D, d = model.dim_state, model.dim_obs
    nz = D + K * (D + d)
    cov_z = np.zeros((nz, nz))
    cov_z[:D, :D] = model.P0
    Gx = np.zeros((K + 1, D, nz))
    Gx[0, :, :D] = np.eye(D)
    mx = np.zeros((K + 1, D))
    mx[0] = model.x0
    Gy = np.zeros((K, d, nz))
    my = np.zeros((K, d))
    for k in range(K):
        A, _, C, Q, R, S, bu = model.at(k)
        o = D + k * (D + d)
        cov_z[o:o + D + d, o:o + D + d] = np.block([[Q, S], [S.T, R]])
        Gx[k + 1] = A @ Gx[k]
        Gx[k + 1, :, o:o + D] += np.eye(D)
        mx[k + 1] = A @ mx[k] + bu
        Gy[k] = C @ Gx[k]
        Gy[k, :, o + D:o + D + d] += np.eye(d)
        my[k] = C @ mx[k]
    return mx, Gx, my, Gy, cov_z


def gaussian_loglik_oracle(model: GaussMarkovModel, observations,
                           cap: int = ORACLE_SIZE_CAP) -> float:
    """ln P(Y) from the explicitly assembled joint Gaussian of y_1..y_K."""
    Y = np.asarray(observations, dtype=float).reshape(-1, model.dim_obs)
    K, d = Y.shape
    if K * d > cap:
        raise ResourceLimitError(f"d*K = {K * d} exceeds oracle cap {cap}")
    if K == 0:
        return 0.0
    _, _, my, Gy, cov_z = _joint_linear_map(model, K)
    G = Gy.reshape(K * d, -1)
    cov = symmetrize(G @ cov_z @ G.T)
    return float(stats.multivariate_normal(my.reshape(-1), cov).logpdf(Y.reshape(-1)))


def gaussian_smoother_oracle(model: GaussMarkovModel, observations, k: int):
    """Mean and covariance of x_k given all observations, by dense conditioning."""
    Y = np.asarray(observations, dtype=float).reshape(-1, model.dim_obs)
    K = Y.shape[0]
    if K * model.dim_obs > ORACLE_SIZE_CAP:
        raise ResourceLimitError("record too long for the dense oracle")
    mx, Gx, my, Gy, cov_z = _joint_linear_map(model, K)
    G = Gy.reshape(K * model.dim_obs, -1)
    syy = G @ cov_z @ G.T
    sxy = Gx[k] @ cov_z @ G.T
    sxx = Gx[k] @ cov_z @ Gx[k].T
    gain = linalg.solve(syy, sxy.T, assume_a="pos").T
    mean = mx[k] + gain @ (Y.reshape(-1) - my.reshape(-1))
    return mean, symmetrize(sxx - gain @ sxy.T)


def sample_discrete(model: GaussMarkovModel, n_steps: int, seed=None, n_records=None):
    """Sample hidden states and observations.

    With ``n_records=None`` returns ``(x (K+1, D), y (K, d))``; otherwise the
    arrays gain a leading axis of length ``n_records``.  The joint noise
    (w_k, v_k) is drawn from [[Q, S], [S^T, R]].
    """
    rng = np.random.default_rng(seed)
    D, d = model.dim_state, model.dim_obs
    n = 1 if n_records is None else int(n_records)
    if model.time_varying and n_steps > model.horizon:
        raise ValidationError("n_steps exceeds the model horizon")
    x = model.x0 + rng.standard_normal((n, D)) @ psd_factor(model.P0).T
    xs = np.empty((n, n_steps + 1, D))
    ys = np.empty((n, n_steps, d))
    xs[:, 0] = x
    factor = None
    for k in range(n_steps):
        A, _, C, Q, R, S, bu = model.at(k)
        if factor is None or model.time_varying:
            factor = psd_factor(np.block([[Q, S], [S.T, R]]))
        noise = rng.standard_normal((n, D + d)) @ factor.T
        ys[:, k] = x @ C.T + noise[:, D:]
        x = x @ A.T + bu + noise[:, :D]
        xs[:, k + 1] = x
    if n_records is None:
        return xs[0], ys[0]
    return xs, ys
