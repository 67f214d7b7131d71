"""Two-pump cavity optomechanics as a continuous-time Gauss-Markov model.

State x = (Re a, Im a, Re b, Im b); observation = (Re, Im) of the heterodyne
output sqrt(gamma_a) a - A + A'.  Complex multiplication by z acts on a
quadrature pair as [[Re z, -Im z], [Im z, Re z]] and conjugation as
diag(1, -1).  Noise is phase-insensitive: a complex white source of power S
contributes density S/2 to each quadrature.

The shared input A(t) enters both the optical drift (+sqrt(gamma_a) A) and the
output (-A), so the process/observation cross-density is
s = -sqrt(gamma_a) S_A / 2 on the optical quadratures.  A Monte Carlo check of
this sign lives in the test suite.

Rates are in units of gamma_b unless the caller normalizes otherwise.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._linalg import symmetrize
from .errors import StabilityError, ValidationError
from .gaussmarkov import CtGaussMarkovModel, GaussianRecord

WEAK_COUPLING_LIMIT = 0.1


class Detuning(enum.Enum):
    RED = "red"
    BLUE = "blue"

    @classmethod
    def parse(cls, value) -> "Detuning":
        if isinstance(value, cls):
            return value
        v = str(value).lower()
        if v in ("red", "minus", "-", "reddetuned"):
            return cls.RED
        if v in ("blue", "plus", "+", "bluedetuned"):
            return cls.BLUE
        raise ValidationError(f"unknown detuning {value!r}")


@dataclass(frozen=True)
class OptomechConfig:
    g: complex
    gamma_a: float
    gamma_b: float
    s_a_prime: float

    def __post_init__(self):
        object.__setattr__(self, "g", complex(self.g))
        if not (self.gamma_a > 0 and self.gamma_b > 0):
            raise ValidationError("damping rates must be positive")
        if self.s_a_prime < 0:
            raise ValidationError("excess noise S_A' must be nonnegative")

    @property
    def cooperativity(self) -> float:
        """4|g|^2 / (gamma_a gamma_b)."""
        return 4.0 * abs(self.g) ** 2 / (self.gamma_a * self.gamma_b)

    @property
    def weak_coupling(self) -> bool:
        return self.cooperativity < WEAK_COUPLING_LIMIT

    def to_dict(self) -> dict:
        return {"g": [self.g.real, self.g.imag], "gamma_a": self.gamma_a,
                "gamma_b": self.gamma_b, "s_a_prime": self.s_a_prime}

    @classmethod
    def from_dict(cls, doc: dict) -> "OptomechConfig":
        g = doc["g"]
        if isinstance(g, (list, tuple)):
            g = complex(g[0], g[1])
        return cls(g, doc["gamma_a"], doc["gamma_b"], doc["s_a_prime"])


@dataclass(frozen=True)
class Theta:
    s_a: float
    s_b: float

    def __post_init__(self):
        if self.s_a < 0 or self.s_b < 0:
            raise ValidationError("noise powers must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([self.s_a, self.s_b])


def _cmul(z: complex) -> np.ndarray:
    return np.array([[z.real, -z.imag], [z.imag, z.real]])


_CONJ = np.diag([1.0, -1.0])


def drift_matrix(config: OptomechConfig, detuning) -> np.ndarray:
    detuning = Detuning.parse(detuning)
    g = config.g
    f = np.zeros((4, 4))
    f[:2, :2] = -0.5 * config.gamma_a * np.eye(2)
    f[2:, 2:] = -0.5 * config.gamma_b * np.eye(2)
    if detuning is Detuning.RED:
        f[:2, 2:] = _cmul(1j * g)
        f[2:, :2] = _cmul(1j * np.conj(g))
    else:
        f[:2, 2:] = _cmul(1j * g) @ _CONJ
        f[2:, :2] = _cmul(1j * g) @ _CONJ
    return f


def noise_densities(config: OptomechConfig, s_a: float, s_b: float):
    """(q, r, s) for given noise powers; linear in (s_a, s_b), no validation."""
    ga, gb = config.gamma_a, config.gamma_b
    q = np.diag([ga * s_a / 2, ga * s_a / 2, gb * s_b / 2, gb * s_b / 2])
    r = 0.5 * (s_a + config.s_a_prime) * np.eye(2)
    s = np.zeros((4, 2))
    s[:2, :2] = -0.5 * np.sqrt(ga) * s_a * np.eye(2)
    return q, r, s


def observation_matrix(config: OptomechConfig) -> np.ndarray:
    c = np.zeros((2, 4))
    c[:, :2] = np.sqrt(config.gamma_a) * np.eye(2)
    return c


def check_hurwitz(f) -> None:
    eig = np.linalg.eigvals(f)
    if eig.real.max() >= 0:
        raise StabilityError(f"drift is not Hurwitz (max Re eigenvalue {eig.real.max():.3e})")


def steady_state_covariance(model: CtGaussMarkovModel) -> np.ndarray:
    """Solve f P + P f^T + q = 0; raises StabilityError unless f is Hurwitz."""
    check_hurwitz(model.f)
    return symmetrize(linalg.solve_continuous_lyapunov(model.f, -model.q))


def build_model(config: OptomechConfig, theta: Theta, detuning) -> CtGaussMarkovModel:
    """Continuous-time model for one pump configuration, started in steady state."""
    if not config.weak_coupling:
        warnings.warn(f"cooperativity {config.cooperativity:.3g} is not << 1", stacklevel=2)
    f = drift_matrix(config, detuning)
    q, r, s = noise_densities(config, theta.s_a, theta.s_b)
    c = observation_matrix(config)
    model = CtGaussMarkovModel(f=f, c=c, q=q, r=r, s=s, x0=np.zeros(4),
                               P0=np.zeros((4, 4)), check=False)
    P0 = steady_state_covariance(model)
    return CtGaussMarkovModel(f=f, c=c, q=q, r=r, s=s, x0=np.zeros(4), P0=P0)


def mechanical_energy(config: OptomechConfig, theta: Theta, detuning) -> float:
    """Steady-state E|b|^2."""
    P = build_model(config, theta, detuning).P0
    return float(P[2, 2] + P[3, 3])


def _spectrum_from_densities(f, c, q, r, s, omega):
    """Complex-signal spectrum u Phi(omega) u^H of the output c x + noise.

    Fourier convention int A(t) exp(+i omega t) dt, so d/dt -> -i omega.
    """
    omega = np.asarray(omega, dtype=float)
    n = f.shape[0]
    m = (-1j * omega)[:, None, None] * np.eye(n) - f
    H = c @ np.linalg.solve(m, np.broadcast_to(np.eye(n), m.shape))
    G = np.concatenate([H, np.broadcast_to(np.eye(c.shape[0]), H.shape[:-1] + (c.shape[0],))],
                       axis=-1)
    N = np.block([[q, s], [s.T, r]])
    u = np.array([1.0, 1.0j])
    Gu = np.einsum("i,wij->wj", u, G)
    return np.einsum("wj,jk,wk->w", Gu, N, Gu.conj()).real


def output_spectrum(config: OptomechConfig, theta: Theta, detuning, omega) -> np.ndarray:
    """Heterodyne output power spectral density S_pm(omega | theta).

    Computed from the state-space transfer matrix c (-i omega - f)^{-1}
    including the direct -A + A' feedthrough and its correlation with the
    drift noise.
    """
    f = drift_matrix(config, detuning)
    check_hurwitz(f)
    q, r, s = noise_densities(config, theta.s_a, theta.s_b)
    return _spectrum_from_densities(f, observation_matrix(config), q, r, s, omega)


class SpectrumBasis:
    """Output spectra as an affine function of (S_A, S_B).

    The noise densities are linear in the noise powers, so
    S(omega | theta) = base + S_A * d_sa + S_B * d_sb exactly; evaluating
    arbitrary (even slightly negative) theta is then cheap.
    """

    def __init__(self, config: OptomechConfig, detuning, omega):
        self.omega = np.asarray(omega, dtype=float)
        f = drift_matrix(config, detuning)
        check_hurwitz(f)
        c = observation_matrix(config)

        def spec(sa, sb, sap):
            cfg = OptomechConfig(config.g, config.gamma_a, config.gamma_b, sap)
            return _spectrum_from_densities(f, c, *noise_densities(cfg, sa, sb), self.omega)

        self.base = spec(0.0, 0.0, config.s_a_prime)
        self.d_sa = spec(1.0, 0.0, 0.0)
        self.d_sb = spec(0.0, 1.0, 0.0)

    def __call__(self, s_a, s_b):
        return self.base + s_a * self.d_sa + s_b * self.d_sb


def fit_transfer(config: OptomechConfig, detuning, omega, thetas=None):
    """Least-squares fit of S - S_A' - S_A = k(omega) (S_B -/+ S_A).

    Returns ``(k, relative_residual)``; ``k`` estimates |chi(omega)|^2.  The
    sign is - for red and + for blue detuning.
    """
    detuning = Detuning.parse(detuning)
    sign = -1.0 if detuning is Detuning.RED else 1.0
    if thetas is None:
        thetas = [Theta(a, b) for a in (0.0, 0.5, 1.3) for b in (0.2, 0.5, 2.0)]
    lhs, rhs = [], []
    for th in thetas:
        S = output_spectrum(config, th, detuning, omega)
        lhs.append(S - config.s_a_prime - th.s_a)
        rhs.append(np.full_like(S, th.s_b + sign * th.s_a))
    lhs, rhs = np.array(lhs), np.array(rhs)
    k = (lhs * rhs).sum(axis=0) / (rhs * rhs).sum(axis=0)
    resid = lhs - rhs * k
    scale = np.abs(lhs).max() + config.s_a_prime
    return k, float(np.abs(resid).max() / scale)


def periodogram(record: GaussianRecord, n_windows: int = 16, window: str = "boxcar"):
    """Welch estimate of the complex-signal spectrum of a 2-d increment record.

    The record is split into ``n_windows`` non-overlapping segments; each
    contributes |sum_k dz_k w_k exp(i omega t_k)|^2 / (sum w^2 dt) with
    dz = dy_1 + i dy_2.  Standard error per bin is mean / sqrt(n_windows).

    Returns ``(omega, estimate, stderr)`` with omega in fftshift order.
    """
    if record.dim != 2:
        raise ValidationError("periodogram expects 2-d (quadrature) increments")
    if n_windows < 8:
        raise ValidationError("at least 8 windows are required")
    n = len(record) // n_windows
    if n < 2:
        raise ValidationError(f"record of {len(record)} increments too short for "
                              f"{n_windows} windows")
    dz = record.increments[:, 0] + 1j * record.increments[:, 1]
    segs = dz[: n * n_windows].reshape(n_windows, n)
    if window == "boxcar":
        w = np.ones(n)
    elif window == "hann":
        w = np.hanning(n)
    else:
        raise ValidationError(f"unknown window {window!r}")
    spec = np.abs(np.fft.ifft(segs * w, axis=1) * n) ** 2 / ((w**2).sum() * record.dt)
    est = np.fft.fftshift(spec.mean(axis=0))
    omega = np.fft.fftshift(2 * np.pi * np.fft.fftfreq(n, record.dt))
    return omega, est, est / np.sqrt(n_windows)


def spectra_table(config: OptomechConfig, theta: Theta, omega) -> np.ndarray:
    """Columns omega, S_minus, S_plus."""
    omega = np.asarray(omega, dtype=float)
    return np.column_stack([omega, output_spectrum(config, theta, Detuning.RED, omega),
                            output_spectrum(config, theta, Detuning.BLUE, omega)])
