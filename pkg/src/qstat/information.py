"""Information measures for two-hypothesis problems and parameter estimation.

Spectral rates are for complex (two-sided) stationary Gaussian processes:
integrands are evaluated through the generalized eigenvalues lambda of
(S_0, S_1) and integrated over omega with the trapezoidal rule, then divided
by 2 pi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import ConditioningError, ValidationError

FISHER_REL_STEP = 1e-3
FISHER_ABS_STEP = 1e-4
PSD_REL_TOL = 1e-6


@dataclass(frozen=True)
class SpectralPair:
    """Spectral density matrices of two hypotheses on a common omega grid.

    ``s0``/``s1`` may be (W,) scalar spectra, (W, n) diagonals, or full
    (W, n, n) Hermitian matrices.
    """

    omega: np.ndarray
    s0: np.ndarray
    s1: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=float)
        if w.ndim != 1 or w.size < 2 or np.any(np.diff(w) <= 0):
            raise ValidationError("omega grid must be strictly increasing with >= 2 points")
        s0, s1 = np.asarray(self.s0), np.asarray(self.s1)
        if s0.shape != s1.shape or s0.shape[0] != w.size:
            raise ValidationError("spectra must share shape (W, ...) with the omega grid")
        if s0.ndim == 1:
            s0, s1 = s0[:, None], s1[:, None]
        if s0.ndim == 2:
            s0, s1 = s0.real.astype(float), s1.real.astype(float)
            if np.any(s0 <= 0) or np.any(s1 <= 0):
                raise ConditioningError("spectral density not positive definite")
        elif s0.ndim == 3:
            for m in (s0, s1):
                if not np.allclose(m, np.conj(np.swapaxes(m, 1, 2)), atol=1e-12):
                    raise ValidationError("spectral matrices must be Hermitian")
        else:
            raise ValidationError("spectra must be 1-, 2- or 3-dimensional")
        object.__setattr__(self, "omega", w)
        object.__setattr__(self, "s0", s0)
        object.__setattr__(self, "s1", s1)

    @property
    def diagonal(self) -> bool:
        return self.s0.ndim == 2

    def eigenvalues(self) -> np.ndarray:
        """Generalized eigenvalues of S_1 relative to S_0, shape (W, n)."""
        if self.diagonal:
            return self.s1 / self.s0
        try:
            L = np.linalg.cholesky(self.s0)
        except np.linalg.LinAlgError:
            raise ConditioningError("S_0 is singular or indefinite") from None
        Li = np.linalg.inv(L)
        lam = np.linalg.eigvalsh(Li @ self.s1 @ np.conj(np.swapaxes(Li, 1, 2)))
        if np.any(lam <= 0):
            raise ConditioningError("S_1 is singular or indefinite")
        return lam

    def restrict(self, lo: float, hi: float) -> "SpectralPair":
        m = (self.omega >= lo) & (self.omega <= hi)
        return SpectralPair(self.omega[m], self.s0[m], self.s1[m])


def _integrate(omega, integrand):
    return float(np.trapezoid(integrand, omega) / (2.0 * math.pi))


def relative_entropy_rate(pair: SpectralPair) -> float:
    """D(P_1 || P_0) / T in nats per unit time."""
    lam = pair.eigenvalues()
    x = lam - 1.0
    return _integrate(pair.omega, (x - np.log1p(x)).sum(axis=1))


def chernoff_rate(pair: SpectralPair, s: float) -> float:
    """C(s) / T for C(s) = -ln E[Lambda^s | H_0].

    int dw/2pi ln |s S_0 + (1-s) S_1| / (|S_0|^s |S_1|^{1-s}).  For Gaussians
    the weights sit on the inverse spectra, (1-s) S_0^{-1} + s S_1^{-1}, which
    swaps s and 1-s relative to the covariances themselves.
    """
    if not 0.0 <= s <= 1.0:
        raise ValidationError("s must lie in [0, 1]")
    x = pair.eigenvalues() - 1.0
    u = 1.0 - s
    return _integrate(pair.omega, (np.log1p(u * x) - u * np.log1p(x)).sum(axis=1))


def max_chernoff_rate(pair: SpectralPair, xtol: float = 1e-6):
    """Return ``(s*, C(s*)/T)`` maximizing the Chernoff rate over [0, 1]."""
    res = optimize.minimize_scalar(lambda s: -chernoff_rate(pair, s), bounds=(0.0, 1.0),
                                   method="bounded", options={"xatol": xtol})
    return float(res.x), float(-res.fun)


@dataclass(frozen=True)
class DiscreteDistPair:
    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        p0 = np.asarray(self.p0, dtype=float)
        p1 = np.asarray(self.p1, dtype=float)
        if p0.shape != p1.shape or p0.ndim != 1:
            raise ValidationError("distributions must be 1-d on a common support")
        for p in (p0, p1):
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValidationError("distributions must be nonnegative and sum to 1")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    def bayes_error(self, prior1: float = 0.5) -> float:
        """Exact minimum error probability of the MAP test."""
        return float(np.minimum((1 - prior1) * self.p0, prior1 * self.p1).sum())

    def relative_entropy(self) -> float:
        """D(p1 || p0); +inf if p1 is not absolutely continuous w.r.t. p0."""
        m = self.p1 > 0
        if np.any(self.p0[m] == 0):
            return math.inf
        return float(np.sum(self.p1[m] * (np.log(self.p1[m]) - np.log(self.p0[m]))))


def chernoff_discrete(pair: DiscreteDistPair, s: float) -> float:
    """C(s) = -ln sum_y p0^{1-s} p1^s (with 0^0 = 1); +inf for disjoint supports."""
    if not 0.0 <= s <= 1.0:
        raise ValidationError("s must lie in [0, 1]")
    m = pair.p0 > 0
    p0, p1 = pair.p0[m], pair.p1[m]
    if s > 0:
        keep = p1 > 0
        if not keep.any():
            return math.inf
        p0, p1 = p0[keep], p1[keep]
        return float(-logsumexp((1 - s) * np.log(p0) + s * np.log(p1)))
    return 0.0


def max_chernoff_discrete(pair: DiscreteDistPair, xtol: float = 1e-6):
    """Return ``(s*, C(s*))``; C is concave so a bounded scalar search suffices."""
    if math.isinf(chernoff_discrete(pair, 0.5)):
        return 0.5, math.inf
    res = optimize.minimize_scalar(lambda s: -chernoff_discrete(pair, s), bounds=(0.0, 1.0),
                                   method="bounded", options={"xatol": xtol})
    return float(res.x), float(-res.fun)


def error_prob_bounds(c_half: float, c_opt: float) -> tuple[float, float]:
    """Equal-prior bounds on the minimum error probability.

    lower = (1 - sqrt(1 - exp(-2 C(0.5)))) / 2, upper = exp(-max_s C(s)) / 2.
    """
    if c_half < 0 or c_opt < 0:
        raise ValidationError("Chernoff information is nonnegative")
    e = math.exp(-2.0 * c_half)
    lower = 0.5 * e / (1.0 + math.sqrt(1.0 - e))  # = (1 - sqrt(1-e))/2 without cancellation
    return lower, 0.5 * math.exp(-c_opt)


def chernoff_relent_bound(s_grid, c_values) -> float:
    """max_s C(s) / (1 - s), a lower bound on D(P_1 || P_0)."""
    s = np.asarray(s_grid, dtype=float)
    c = np.asarray(c_values, dtype=float)
    m = s < 1.0
    if not m.any():
        raise ValidationError("s grid must contain points below 1")
    return float(np.max(c[m] / (1.0 - s[m])))


def fisher_from_bhattacharyya(bhat, theta, rel_step: float = FISHER_REL_STEP,
                              abs_step: float = FISHER_ABS_STEP) -> np.ndarray:
    """Fisher matrix J = 4 d^2 B(t, theta) / dt_j dt_k at t = theta.

    ``bhat(t, theta)`` is the Bhattacharyya distance C(0.5) between the
    models at ``t`` and ``theta``.  Both derivatives act on the first
    argument; the second is held at ``theta``.  Central differences with
    step max(rel_step |theta_j|, abs_step); if the result is not PSD to
    1e-6 relative, a Richardson-extrapolated estimate at half the step is
    used instead.
    """
    theta = np.asarray(theta, dtype=float)
    h = np.maximum(rel_step * np.abs(theta), abs_step)

    def hessian(h):
        n = theta.size
        H = np.empty((n, n))
        b0 = bhat(theta, theta)
        cache = {}

        def B(*shifts):
            key = tuple(shifts)
            if key not in cache:
                t = theta.copy()
                for j, sgn in shifts:
                    t[j] += sgn * h[j]
                cache[key] = bhat(t, theta)
            return cache[key]

        for j in range(n):
            H[j, j] = (B((j, 1)) - 2 * b0 + B((j, -1))) / h[j] ** 2
            for k in range(j):
                H[j, k] = H[k, j] = (B((j, 1), (k, 1)) - B((j, 1), (k, -1))
                                     - B((j, -1), (k, 1)) + B((j, -1), (k, -1))) \
                    / (4 * h[j] * h[k])
        return 4.0 * H

    def psd_ok(J):
        ev = np.linalg.eigvalsh(J)
        return ev.min() >= -PSD_REL_TOL * max(abs(ev).max(), 1e-300), ev.min()

    J = hessian(h)
    ok, _ = psd_ok(J)
    if ok:
        return J
    J = (4.0 * hessian(h / 2) - J) / 3.0
    J = 0.5 * (J + J.T)
    ok, ev = psd_ok(J)
    if not ok:
        raise ConditioningError("Fisher matrix is not PSD", eigenvalue=float(ev))
    return J


def bayesian_crb(j_avg, j_prior=None) -> np.ndarray:
    """(J + J_prior)^{-1}."""
    j = np.asarray(j_avg, dtype=float)
    if j_prior is not None:
        j = j + np.asarray(j_prior, dtype=float)
    j = 0.5 * (j + j.T)
    if np.linalg.cond(j) > 1e14:
        raise ConditioningError("information matrix is singular")
    out = np.linalg.inv(j)
    return 0.5 * (out + out.T)


# optomechanics helpers

def default_omega(config, n: int = 4096, span: float = 20.0) -> np.ndarray:
    w = span * max(config.gamma_a, config.gamma_b)
    return np.linspace(-w, w, n)


class OptomechSpectra:
    """Cached red/blue spectral bases for fast pair construction."""

    def __init__(self, config, omega=None):
        from .optomech import Detuning, SpectrumBasis
        self.config = config
        self.omega = default_omega(config) if omega is None else np.asarray(omega, dtype=float)
        self.red = SpectrumBasis(config, Detuning.RED, self.omega)
        self.blue = SpectrumBasis(config, Detuning.BLUE, self.omega)

    def matrix(self, theta) -> np.ndarray:
        """(W, 2) diagonal diag(S_-, S_+)."""
        sa, sb = _theta_pair(theta)
        return np.column_stack([self.red(sa, sb), self.blue(sa, sb)])

    def pair(self, theta0, theta1) -> SpectralPair:
        return SpectralPair(self.omega, self.matrix(theta0), self.matrix(theta1))

    def bhattacharyya(self, T: float):
        def bhat(t, theta):
            return T * chernoff_rate(self.pair(theta, t), 0.5)
        return bhat


def _theta_pair(theta):
    if hasattr(theta, "s_a"):
        return float(theta.s_a), float(theta.s_b)
    sa, sb = theta
    return float(sa), float(sb)


def optomech_pair(config, theta0, theta1, omega=None) -> SpectralPair:
    return OptomechSpectra(config, omega).pair(theta0, theta1)


def fisher_matrix(config, theta, T: float, omega=None, spectra: OptomechSpectra | None = None):
    """Fisher information of (S_A, S_B) for both records of duration T."""
    if not T > 0:
        raise ValidationError("T must be positive")
    sp = spectra if spectra is not None else OptomechSpectra(config, omega)
    return fisher_from_bhattacharyya(sp.bhattacharyya(T), np.array(_theta_pair(theta)))


def info_report(config, theta0, theta1, T: float, omega=None, n_s: int = 21) -> dict:
    """Rates, finite-T bounds, Fisher matrix and CRB as a JSON-ready dict."""
    sp = OptomechSpectra(config, omega)
    pair = sp.pair(theta0, theta1)
    d_rate = relative_entropy_rate(pair)
    c_half = chernoff_rate(pair, 0.5)
    s_star, c_max = max_chernoff_rate(pair)
    s_grid = np.linspace(0.0, 0.95, n_s)
    c_curve = [chernoff_rate(pair, s) for s in s_grid]
    lower, upper = error_prob_bounds(T * c_half, T * c_max)
    J = fisher_matrix(config, theta1, T, spectra=sp)
    try:
        crb = bayesian_crb(J).tolist()
    except ConditioningError:
        crb = None
    return {
        "theta0": list(_theta_pair(theta0)),
        "theta1": list(_theta_pair(theta1)),
        "T": T,
        "relative_entropy_rate": d_rate,
        "chernoff_half_rate": c_half,
        "chernoff_max_rate": c_max,
        "chernoff_s_star": s_star,
        "chernoff_relent_bound_rate": chernoff_relent_bound(s_grid, c_curve),
        "error_prob_lower": lower,
        "error_prob_upper": upper,
        "fisher_matrix": J.tolist(),
        "crb": crb,
        "omega_span": [float(sp.omega[0]), float(sp.omega[-1])],
        "n_omega": int(sp.omega.size),
    }
