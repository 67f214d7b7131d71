"""Mechanical energy dynamics: continuous (H0) versus quantized ladder (H1).

H0 is the square-root diffusion  d eps = -gamma (eps - S) dt + sqrt(2 gamma S eps) dW
with exponential steady state; H1 is the birth-death chain on
{0.5, 1.5, ...} with rates Gamma_+-(eps) = gamma (S -+ 0.5)(eps +- 0.5) and
geometric steady state.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, linalg
from scipy.special import expit

from .errors import ValidationError

LADDER_TAIL = 1e-12


@dataclass(frozen=True)
class EnergyModelH0:
    gamma: float
    s: float

    def __post_init__(self):
        if not (self.gamma > 0 and self.s > 0):
            raise ValidationError("H0 needs gamma > 0 and S > 0")

    tag = "H0"


@dataclass(frozen=True)
class EnergyModelH1:
    gamma: float
    s: float
    level_cap: int | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")
        if self.s < 0.5:
            raise ValidationError("H1 needs S >= 0.5 (nonnegative upward rate)")
        if self.level_cap is None:
            object.__setattr__(self, "level_cap", ladder_size(self.s))
        elif self.level_cap < 1:
            raise ValidationError("level_cap must be >= 1")

    tag = "H1"

    def rates(self, eps):
        eps = np.asarray(eps, dtype=float)
        up = self.gamma * (self.s - 0.5) * (eps + 0.5)
        down = self.gamma * (self.s + 0.5) * (eps - 0.5)
        return up, down

    def generator(self) -> np.ndarray:
        """Rate matrix G[to, from] on the truncated ladder; the top level reflects."""
        n = self.level_cap
        eps = np.arange(n) + 0.5
        up, down = self.rates(eps)
        up[-1] = 0.0
        G = np.diag(up[:-1], -1) + np.diag(down[1:], 1)
        G -= np.diag(up + down)
        return G


def ladder_ratio(s: float) -> float:
    return (s - 0.5) / (s + 0.5)


def ladder_size(s: float, tail: float = LADDER_TAIL) -> int:
    """Number of levels so the geometric tail beyond them is below ``tail``."""
    r = ladder_ratio(s)
    if r <= 0:
        return 1
    return max(1, int(math.ceil(math.log(tail) / math.log(r))))


@dataclass
class EnergyDistribution:
    """Probability masses on a support.

    H1: ``points`` are ladder levels.  H0: ``points`` are cell centres of a
    uniform grid with spacing ``width`` starting at 0; masses are cell masses.
    """

    tag: str
    points: np.ndarray
    masses: np.ndarray
    width: float | None = None
    truncation_error: float = 0.0

    def mean(self) -> float:
        return float(self.masses @ self.points)

    def variance(self) -> float:
        m = self.mean()
        return float(self.masses @ (self.points - m) ** 2)

    def total_variation(self, other: "EnergyDistribution") -> float:
        return 0.5 * float(np.abs(self.masses - other.masses).sum())


def steady_state(tag: str, s: float, n_levels: int | None = None,
                 width: float = 0.01, upper: float | None = None) -> EnergyDistribution:
    """Analytic steady state on a finite support.

    H1: geometric masses (1-r) r^n on ``n_levels`` levels (default: tail < 1e-12).
    H0: exact exponential cell masses on [0, upper] with cell ``width``
    (default upper = 40 S); the mass beyond ``upper`` is reported as
    ``truncation_error`` and not included.
    """
    if tag == "H1":
        r = ladder_ratio(s)
        if s < 0.5:
            raise ValidationError("H1 needs S >= 0.5")
        n = ladder_size(s) if n_levels is None else int(n_levels)
        k = np.arange(n)
        masses = (1 - r) * r ** k
        return EnergyDistribution("H1", k + 0.5, masses, None, float(r ** n))
    if tag == "H0":
        if not s > 0:
            raise ValidationError("H0 needs S > 0")
        upper = 40.0 * s if upper is None else upper
        n = int(round(upper / width))
        edges = width * np.arange(n + 1)
        masses = np.exp(-edges[:-1] / s) * -math.expm1(-width / s)
        return EnergyDistribution("H0", 0.5 * (edges[1:] + edges[:-1]), masses, width,
                                  float(math.exp(-edges[-1] / s)))
    raise ValidationError(f"unknown model tag {tag!r}")


def steady_state_density(tag: str, s: float, eps):
    """P_ss(eps): exponential density for H0, ladder probabilities for H1."""
    eps = np.asarray(eps, dtype=float)
    if tag == "H0":
        return np.where(eps >= 0, np.exp(-eps / s) / s, 0.0)
    if tag == "H1":
        n = eps - 0.5
        on = (n >= 0) & (np.abs(n - np.round(n)) < 1e-9)
        r = ladder_ratio(s)
        return np.where(on, (1 - r) * r ** np.round(np.where(on, n, 0)), 0.0)
    raise ValidationError(f"unknown model tag {tag!r}")


def steady_state_moment(tag: str, s: float, m: int) -> float:
    """E_ss[eps^m] by quadrature (H0) or direct summation (H1)."""
    if tag == "H0":
        val, _ = integrate.quad(lambda e: e ** m * math.exp(-e / s) / s, 0, np.inf,
                                epsabs=0, epsrel=1e-13, limit=200)
        return float(val)
    d = steady_state("H1", s, n_levels=ladder_size(s, 1e-300) if s > 0.5 else 1)
    return math.fsum(d.masses * d.points ** m)


def _h0_fluxes(gamma, s, dist):
    """Interface conductances for the finite-volume Fokker-Planck operator."""
    h = dist.width
    faces = h * np.arange(1, dist.points.size)
    return gamma * s * faces * np.exp(-faces / s) / s / h


def h0_cfl_limit(model: EnergyModelH0, dist: EnergyDistribution) -> float:
    ref = steady_state("H0", model.s, width=dist.width, upper=dist.width * dist.points.size)
    cond = _h0_fluxes(model.gamma, model.s, dist)
    out = np.zeros(dist.points.size)
    out[:-1] += cond
    out[1:] += cond
    return float(np.min(ref.masses / out))


def kolmogorov_step(model, dist: EnergyDistribution, dt: float) -> EnergyDistribution:
    """Advance a distribution by dt under the forward Kolmogorov equation.

    H1 uses the exact matrix exponential of the truncated rate matrix.  H0
    uses an explicit finite-volume scheme written in u = P / P_ss, so the
    discrete steady state is an exact fixed point and mass is conserved; a
    step larger than the CFL limit raises ValidationError.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if dist.tag != model.tag:
        raise ValidationError("distribution and model disagree on the hypothesis")
    if model.tag == "H1":
        if dist.points.size != model.level_cap:
            raise ValidationError("distribution size must equal the model's level_cap")
        p = linalg.expm(model.generator() * dt) @ dist.masses
        return EnergyDistribution("H1", dist.points, p, None, dist.truncation_error)
    ref = steady_state("H0", model.s, width=dist.width, upper=dist.width * dist.points.size)
    cond = _h0_fluxes(model.gamma, model.s, dist)
    limit = h0_cfl_limit(model, dist)
    if dt > limit:
        raise ValidationError(f"dt={dt:.3g} exceeds the CFL limit {limit:.3g}")
    u = dist.masses / ref.masses
    flux = cond * np.diff(u)  # mass flowing from cell i+1 into cell i
    dm = np.zeros_like(u)
    dm[:-1] += flux
    dm[1:] -= flux
    return EnergyDistribution("H0", dist.points, dist.masses + dt * dm, dist.width,
                              dist.truncation_error)


def kolmogorov_evolve(model, dist: EnergyDistribution, t: float) -> EnergyDistribution:
    """Evolve for time t (H0 subdivides to stay inside the CFL limit)."""
    if model.tag == "H1":
        return kolmogorov_step(model, dist, t)
    n = max(1, int(math.ceil(t / (0.9 * h0_cfl_limit(model, dist)))))
    for _ in range(n):
        dist = kolmogorov_step(model, dist, t / n)
    return dist


# simulation ----------------------------------------------------------------

@dataclass
class EnergyPath:
    times: np.ndarray
    energy: np.ndarray
    model: str
    piecewise_constant: bool = False
    t_end: float | None = None  # simulated horizon; jump paths stop at the last jump

    def sample_at(self, t) -> np.ndarray:
        """Energy at times ``t`` (right-continuous for jump paths)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right") - 1
        if self.piecewise_constant:
            return self.energy[np.clip(idx, 0, None)]
        return np.interp(t, self.times, self.energy)

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "energy"])
            for t, e in zip(self.times, self.energy):
                w.writerow([repr(float(t)), repr(float(e))])
        return path


def simulate_energy_sde(model: EnergyModelH0, T: float, dt: float, seed=None,
                        eps0=None, n_paths: int | None = None):
    """Euler-Maruyama with full truncation at zero.

    ``eps0`` defaults to S.  With ``n_paths`` set returns ``(times, energies)``
    with energies of shape (n_paths, K+1); otherwise an EnergyPath.
    """
    if dt > 0.01 / model.gamma * (1 + 1e-12):
        raise ValidationError("dt must be <= 0.01 / gamma")
    rng = np.random.default_rng(seed)
    K = int(round(T / dt))
    n = 1 if n_paths is None else int(n_paths)
    eps = np.empty((n, K + 1))
    eps[:, 0] = model.s if eps0 is None else eps0
    g, s = model.gamma, model.s
    sq = math.sqrt(2.0 * g * s * dt)
    for k in range(K):
        e = eps[:, k]
        eps[:, k + 1] = np.maximum(0.0, e - g * (e - s) * dt
                                   + sq * np.sqrt(e) * rng.standard_normal(n))
    times = dt * np.arange(K + 1)
    if n_paths is None:
        return EnergyPath(times, eps[0], "H0")
    return times, eps


def gillespie_jump(model: EnergyModelH1, T: float, seed=None, eps0: float | None = None):
    """Exact jump-path simulation on the (untruncated) ladder up to time T."""
    rng = np.random.default_rng(seed)
    eps = float(round(model.s - 0.5) + 0.5) if eps0 is None else float(eps0)
    if eps < 0.5 or abs((eps - 0.5) - round(eps - 0.5)) > 1e-12:
        raise ValidationError("eps0 must be a ladder level")
    times, levels = [0.0], [eps]
    t = 0.0
    while True:
        up, down = (float(v) for v in model.rates(eps))
        total = up + down
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > T:
            break
        eps += 1.0 if rng.random() * total < up else -1.0
        times.append(t)
        levels.append(eps)
    return EnergyPath(np.array(times), np.array(levels), "H1", piecewise_constant=True,
                      t_end=float(T))


def gillespie_ensemble(model: EnergyModelH1, T: float, n_paths: int, seed=None,
                       eps0=None) -> np.ndarray:
    """Levels of ``n_paths`` independent exact paths at time T (vectorized)."""
    rng = np.random.default_rng(seed)
    start = float(round(model.s - 0.5) + 0.5) if eps0 is None else float(eps0)
    eps = np.full(n_paths, start)
    t = np.zeros(n_paths)
    live = np.ones(n_paths, dtype=bool)
    while live.any():
        idx = np.flatnonzero(live)
        up, down = model.rates(eps[idx])
        total = up + down
        stuck = total <= 0
        wait = rng.exponential(1.0, idx.size) / np.where(stuck, 1.0, total)
        u = rng.random(idx.size)
        t_new = t[idx] + wait
        done = stuck | (t_new > T)
        step = np.where(u * total < up, 1.0, -1.0)
        move = ~done
        eps[idx[move]] += step[move]
        t[idx[move]] = t_new[move]
        live[idx[done]] = False
    return eps


# i.i.d. test ---------------------------------------------------------------

@dataclass
class EnergySamples:
    values: np.ndarray
    sampling_interval: float | None = None
    model: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()


def sample_steady_state(tag: str, s: float, n: int, seed=None) -> EnergySamples:
    """Independent draws from the analytic steady state."""
    rng = np.random.default_rng(seed)
    if tag == "H0":
        vals = rng.exponential(s, n)
    elif tag == "H1":
        r = ladder_ratio(s)
        vals = 0.5 + (np.zeros(n) if r == 0 else rng.geometric(1 - r, n) - 1.0)
    else:
        raise ValidationError(f"unknown model tag {tag!r}")
    return EnergySamples(vals, None, tag)


def sample_sparse(path: EnergyPath, interval: float, n: int | None = None) -> EnergySamples:
    """Sample a path every ``interval`` (skipping t = 0)."""
    horizon = path.times[-1] if path.t_end is None else path.t_end
    k = int(horizon // interval) if n is None else n
    t = interval * np.arange(1, k + 1)
    return EnergySamples(path.sample_at(t), interval, path.model)


def binned_h0_mass(s: float, bins) -> np.ndarray:
    """H0 probability of the unit bin [n, n+1) for each bin index n."""
    n = np.asarray(bins, dtype=float)
    return np.exp(-n / s) * -np.expm1(-1.0 / s)


def binned_pair(s: float, n_levels: int | None = None):
    """(p0, p1) on ladder bins; the last bin absorbs both tails."""
    from .information import DiscreteDistPair
    n = ladder_size(s) if n_levels is None else int(n_levels)
    k = np.arange(n)
    p0 = binned_h0_mass(s, k)
    p0[-1] = math.exp(-(n - 1) / s)
    r = ladder_ratio(s)
    p1 = (1 - r) * r ** k
    p1[-1] = r ** (n - 1)
    return DiscreteDistPair(p0, p1)


@dataclass
class IidTestResult:
    ln_lambda: float
    n_samples: int
    posterior_h1: float
    s: float

    def to_dict(self) -> dict:
        return {"ln_lambda": self.ln_lambda, "n_samples": self.n_samples,
                "posterior_h1": self.posterior_h1, "s": self.s,
                "binning": "unit bins [n, n+1) mapped to ladder level n + 0.5"}

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def iid_energy_test(samples: EnergySamples, s: float, prior_h1: float = 0.5) -> IidTestResult:
    """Log-likelihood ratio of the ladder (H1) against the binned continuum (H0).

    Every sample eps >= 0 is assigned to the unit bin n = floor(eps), i.e. the
    ladder level n + 0.5; H1 scores it with the geometric steady state and H0
    with the exponential mass of [n, n+1).  Negative samples are rejected.
    """
    v = samples.values
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValidationError("energy samples must be finite and nonnegative")
    if s < 0.5:
        raise ValidationError("S must be >= 0.5 for the ladder model")
    n = np.floor(v)
    r = ladder_ratio(s)
    with np.errstate(divide="ignore"):
        l1 = math.log(1 - r) + (n * math.log(r) if r > 0 else np.where(n == 0, 0.0, -np.inf))
    l0 = -n / s + math.log(-math.expm1(-1.0 / s))
    ln_lambda = float(np.sum(l1 - l0))
    prior_logit = math.log(prior_h1) - math.log1p(-prior_h1)
    return IidTestResult(ln_lambda, int(v.size), float(expit(ln_lambda + prior_logit)), s)
