"""Grid posteriors, credible regions, composite hypothesis tests and priors.

All densities live on a ThetaGrid and integrate with its trapezoidal
weights: sum(weights * density) == 1.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .bank import LogLikSurface, ThetaGrid
from .errors import ConditioningError, DegeneratePosterior, ValidationError

_EDGE_TOL = 1e-9


@dataclass(frozen=True)
class Region:
    """Axis-aligned half-open box [lo, hi) per axis; ``None`` is unbounded."""

    sa: tuple = (None, None)
    sb: tuple = (None, None)

    @classmethod
    def uncertainty(cls, eps: float = 0.0) -> "Region":
        """S_A >= 0.5 and S_B >= 0.5 + eps."""
        return cls(sa=(0.5, None), sb=(0.5 + eps, None))

    @classmethod
    def from_dict(cls, doc) -> "Region":
        return cls(tuple(doc.get("s_a", (None, None))), tuple(doc.get("s_b", (None, None))))

    def to_dict(self) -> dict:
        return {"s_a": list(self.sa), "s_b": list(self.sb)}

    @staticmethod
    def _axis_mask(x, bounds):
        lo, hi = bounds
        m = np.ones(x.shape, dtype=bool)
        if lo is not None:
            m &= x >= lo - _EDGE_TOL * max(1.0, abs(lo))
        if hi is not None:
            m &= x < hi - _EDGE_TOL * max(1.0, abs(hi))
        return m

    def mask(self, grid: ThetaGrid) -> np.ndarray:
        return np.outer(self._axis_mask(grid.axis_sa, self.sa),
                        self._axis_mask(grid.axis_sb, self.sb))


def _as_mask(constraint, grid: ThetaGrid) -> np.ndarray:
    if constraint is None:
        return np.ones(grid.shape, dtype=bool)
    if isinstance(constraint, Region):
        return constraint.mask(grid)
    m = np.asarray(constraint, dtype=bool)
    if m.shape != grid.shape:
        raise ValidationError("constraint mask does not match the grid")
    return m


def normalize_density(grid: ThetaGrid, values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != grid.shape:
        raise ValidationError(f"density shape {v.shape} does not match grid {grid.shape}")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValidationError("density must be finite and nonnegative")
    z = float((grid.weights * v).sum())
    if not z > 0:
        raise ValidationError("density has zero mass on the grid")
    return v / z


def _snap(axis, value, name):
    i = int(np.argmin(np.abs(axis - value)))
    h = 0.5 * (axis[1] - axis[0] if i == 0 else axis[i] - axis[i - 1])
    if i + 1 < axis.size:
        h = max(h, 0.5 * (axis[i + 1] - axis[i]))
    if abs(axis[i] - value) > h + 1e-12:
        raise ValidationError(f"{name}={value} lies more than half a cell outside the grid")
    return i


def uniform_prior(grid: ThetaGrid, region: Region | None = None) -> np.ndarray:
    return normalize_density(grid, _as_mask(region, grid).astype(float))


def delta_prior(grid: ThetaGrid, s_a: float, s_b: float) -> np.ndarray:
    """Point mass snapped to the nearest cell (within half a cell)."""
    i, j = _snap(grid.axis_sa, s_a, "s_a"), _snap(grid.axis_sb, s_b, "s_b")
    p = np.zeros(grid.shape)
    p[i, j] = 1.0 / grid.weights[i, j]
    return p


def delta_line_prior(grid: ThetaGrid, s_a: float | None = None, s_b: float | None = None,
                     density=None) -> np.ndarray:
    """Point mass on one axis times a density on the other (uniform by default)."""
    if (s_a is None) == (s_b is None):
        raise ValidationError("fix exactly one of s_a, s_b")
    p = np.zeros(grid.shape)
    if s_a is not None:
        i = _snap(grid.axis_sa, s_a, "s_a")
        w_other = grid.weights_sb
        d = np.ones(grid.shape[1]) if density is None else np.asarray(density, dtype=float)
        p[i, :] = d / (w_other @ d) / grid.weights_sa[i]
    else:
        j = _snap(grid.axis_sb, s_b, "s_b")
        w_other = grid.weights_sa
        d = np.ones(grid.shape[0]) if density is None else np.asarray(density, dtype=float)
        p[:, j] = d / (w_other @ d) / grid.weights_sb[j]
    if np.any(p < 0):
        raise ValidationError("density must be nonnegative")
    return p


def jeffreys_prior(config, grid: ThetaGrid, T: float = 1.0, omega=None) -> np.ndarray:
    """Prior proportional to sqrt(det J(theta)) from the spectral Bhattacharyya rate.

    Cells where J is not positive definite get zero prior (with a warning).
    The result does not depend on T after normalization.
    """
    from .information import OptomechSpectra, fisher_matrix
    sp = OptomechSpectra(config, omega)
    vals = np.zeros(grid.shape)
    bad = []
    for i, sa in enumerate(grid.axis_sa):
        for j, sb in enumerate(grid.axis_sb):
            try:
                J = fisher_matrix(config, (sa, sb), T, spectra=sp)
                det = float(np.linalg.det(J))
            except ConditioningError:
                det = -1.0
            if det > 0:
                vals[i, j] = math.sqrt(det)
            else:
                bad.append((float(sa), float(sb)))
    if bad:
        warnings.warn(f"Fisher matrix not positive definite at {len(bad)} cells; "
                      f"prior set to zero there (first: {bad[0]})", stacklevel=2)
    return normalize_density(grid, vals)


@dataclass(frozen=True)
class ThetaPrior:
    """Declarative prior, resolved against a grid by ``density(grid)``.

    kind: "delta" (s_a, s_b), "delta_line" (s_a or s_b, optional density on the
    other axis), "uniform" (optional region) or "density" (values).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def density(self, grid: ThetaGrid) -> np.ndarray:
        p = self.params
        if self.kind == "delta":
            return delta_prior(grid, p["s_a"], p["s_b"])
        if self.kind == "delta_line":
            return delta_line_prior(grid, p.get("s_a"), p.get("s_b"), p.get("density"))
        if self.kind == "uniform":
            reg = p.get("region")
            if isinstance(reg, dict):
                reg = Region.from_dict(reg)
            return uniform_prior(grid, reg)
        if self.kind == "density":
            return normalize_density(grid, p["values"])
        raise ValidationError(f"unknown prior kind {self.kind!r}")


@dataclass(frozen=True)
class HypothesisSpec:
    """A composite hypothesis: P(H_j) and P(theta | H_j).

    ``constraint`` marks the set where the hypothesis allows theta; the
    theta prior is zeroed outside it and renormalized.
    """

    name: str
    prior_weight: float
    theta_prior: ThetaPrior
    constraint: Region | None = None

    def density(self, grid: ThetaGrid) -> np.ndarray:
        p = self.theta_prior.density(grid)
        if self.constraint is not None:
            p = p * self.constraint.mask(grid)
            if not (grid.weights * p).sum() > 0:
                raise ValidationError(f"hypothesis {self.name!r}: prior vanishes on its constraint")
            p = normalize_density(grid, p)
        return p

    @classmethod
    def from_dict(cls, doc) -> "HypothesisSpec":
        prior = doc["theta_prior"]
        params = {k: v for k, v in prior.items() if k != "kind"}
        cons = doc.get("constraint")
        return cls(doc["name"], float(doc.get("prior", doc.get("prior_weight", 0.0))),
                   ThetaPrior(prior["kind"], params),
                   None if cons is None else Region.from_dict(cons))


def sideband_hypotheses(sb_density=None) -> list[HypothesisSpec]:
    """Classical S_A = 0 against quantum S_A = 0.5, same P(S_B), equal priors."""
    return [HypothesisSpec("classical_sa0", 0.5,
                           ThetaPrior("delta_line", {"s_a": 0.0, "density": sb_density})),
            HypothesisSpec("quantum_sa05", 0.5,
                           ThetaPrior("delta_line", {"s_a": 0.5, "density": sb_density}))]


def zero_point_hypotheses(eps: float) -> list[HypothesisSpec]:
    """Standard uncertainty relation against the eps-modified one, equal priors."""
    std, mod = Region.uncertainty(0.0), Region.uncertainty(eps)
    return [HypothesisSpec("standard", 0.5, ThetaPrior("uniform", {"region": std}), std),
            HypothesisSpec(f"modified_eps_{eps:g}", 0.5, ThetaPrior("uniform", {"region": mod}),
                           mod)]


@dataclass
class PosteriorGrid:
    grid: ThetaGrid
    density: np.ndarray
    log_normalizer: float
    prior: np.ndarray

    @property
    def mass(self) -> np.ndarray:
        return self.density * self.grid.weights

    def marginal(self, axis: str) -> np.ndarray:
        """Marginal density on the ``"s_a"`` or ``"s_b"`` axis."""
        if axis == "s_a":
            return self.density @ self.grid.weights_sb
        if axis == "s_b":
            return self.grid.weights_sa @ self.density
        raise ValidationError("axis must be 's_a' or 's_b'")

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s_a", "s_b", "posterior"])
            for (a, b), d in zip(self.grid.points(), self.density.ravel()):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(d))])
        return path


def _log_weighted(surface: LogLikSurface, prior: np.ndarray):
    """Return (log integrand per cell, valid mask); integrand is w * L * prior / max L."""
    rel = surface.relative()
    ok = np.isfinite(rel) & (prior > 0)
    with np.errstate(divide="ignore"):
        lw = np.where(ok, rel + np.log(np.where(ok, prior * surface.grid.weights, 1.0)), -np.inf)
    return lw, ok


def posterior(surface: LogLikSurface, prior) -> PosteriorGrid:
    """Posterior density on the surface's grid.

    Cells whose log-likelihood failed (NaN) are treated as having zero
    likelihood.  ``log_normalizer`` is ln of the integral of P(Y|theta) P(theta).
    """
    grid = surface.grid
    prior = np.asarray(prior, dtype=float)
    if prior.shape != grid.shape:
        raise ValidationError("prior shape does not match the grid")
    z = float((grid.weights * prior).sum())
    if abs(z - 1.0) > 1e-8:
        raise ValidationError(f"prior integrates to {z}, not 1")
    lw, ok = _log_weighted(surface, prior)
    if not ok.any():
        raise DegeneratePosterior("prior and likelihood supports do not overlap")
    lz = float(logsumexp(lw[ok]))
    mass = np.where(ok, np.exp(lw - lz), 0.0)
    dens = np.zeros(grid.shape)
    np.divide(mass, grid.weights, out=dens, where=grid.weights > 0)
    return PosteriorGrid(grid, dens, surface.max_loglik + lz, prior)


@dataclass
class CredibleRegion:
    mask: np.ndarray
    mass: float
    level: float

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    def contains(self, grid: ThetaGrid, s_a: float, s_b: float) -> bool:
        """True if the cell nearest to (s_a, s_b) belongs to the region."""
        return bool(self.mask[grid.nearest(s_a, s_b)])


def credible_region(post: PosteriorGrid, p_c: float) -> CredibleRegion:
    """Highest-posterior-density set with mass >= p_c (ties by cell index)."""
    if not 0.0 < p_c < 1.0:
        raise ValidationError("p_c must lie in (0, 1)")
    d = post.density.ravel()
    m = post.mass.ravel()
    order = np.lexsort((np.arange(d.size), -d))
    cum = np.cumsum(m[order])
    k = int(np.searchsorted(cum, p_c * cum[-1] - 1e-12 * cum[-1]))
    k = min(k, d.size - 1)
    mask = np.zeros(d.size, dtype=bool)
    mask[order[:k + 1]] = True
    return CredibleRegion(mask.reshape(post.grid.shape), float(cum[k]), p_c)


def posterior_moments(post: PosteriorGrid):
    """Posterior mean (2,) and covariance (2, 2)."""
    pts = post.grid.points()
    m = post.mass.ravel()
    mean = m @ pts
    dev = pts - mean
    cov = (dev * m[:, None]).T @ dev
    return mean, 0.5 * (cov + cov.T)


@dataclass
class CompositeResult:
    names: list
    priors: np.ndarray
    log_marginal: np.ndarray
    posteriors: np.ndarray

    def ln_lambda(self, j: int, k: int) -> float:
        """ln P(Y|H_k) - ln P(Y|H_j)."""
        return float(self.log_marginal[k] - self.log_marginal[j])

    def to_dict(self) -> dict:
        n = len(self.names)
        return {
            "hypotheses": [{"name": self.names[i], "prior": float(self.priors[i]),
                            "log_marginal_likelihood": float(self.log_marginal[i]),
                            "posterior": float(self.posteriors[i])} for i in range(n)],
            "ln_lambda": {f"{self.names[k]}:{self.names[j]}": self.ln_lambda(j, k)
                          for j in range(n) for k in range(n) if j != k},
        }

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path


def composite_test(surface: LogLikSurface, hypotheses) -> CompositeResult:
    """P(H_j | Y) from P(Y|H_j) = integral of P(Y|theta) P(theta|H_j)."""
    hyps = list(hypotheses)
    if not hyps:
        raise ValidationError("no hypotheses given")
    w = np.array([h.prior_weight for h in hyps], dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValidationError("hypothesis priors must be nonnegative and sum to 1")
    top = surface.max_loglik
    lml = np.empty(len(hyps))
    for i, h in enumerate(hyps):
        lw, ok = _log_weighted(surface, h.density(surface.grid))
        lml[i] = top + float(logsumexp(lw[ok])) if ok.any() else -np.inf
    with np.errstate(divide="ignore"):
        lj = lml + np.log(w)
    if not np.isfinite(lj).any():
        raise DegeneratePosterior("every hypothesis has zero marginal likelihood")
    post = np.exp(lj - logsumexp(lj[np.isfinite(lj)]))
    return CompositeResult([h.name for h in hyps], w, lml, post)


@dataclass(frozen=True)
class LossMatrix:
    """entries[j, k] = L(H_j true, H_k chosen)."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValidationError("loss matrix must be square")
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValidationError("losses must be finite and nonnegative")
        object.__setattr__(self, "entries", e)

    @classmethod
    def zero_one(cls, n: int) -> "LossMatrix":
        return cls(1.0 - np.eye(n))


def bayes_decide(posteriors, loss: LossMatrix) -> int:
    """argmin_k sum_j L(H_j, H_k) P(H_j | Y); ties go to the lowest index."""
    p = np.asarray(posteriors, dtype=float)
    if p.shape != (loss.entries.shape[0],):
        raise ValidationError("posterior and loss dimensions disagree")
    return int(np.argmin(p @ loss.entries))


def glrt(surface: LogLikSurface, constraint_0, constraint_1) -> float:
    """max ln P(Y|theta) over constraint_1 minus the max over constraint_0."""
    t = surface.loglik_total
    out = []
    for c in (constraint_0, constraint_1):
        m = _as_mask(c, surface.grid) & np.isfinite(t)
        if not m.any():
            raise ValidationError("constraint contains no valid grid cell")
        out.append(float(t[m].max()))
    return out[1] - out[0]
