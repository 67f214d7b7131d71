"""Log-likelihood surfaces over a (S_A, S_B) grid from a bank of Kalman filters.

Every cell runs an exact discrete Kalman filter on the raw increments of both
records.  Cells are processed in fixed-size chunks (by cell index) so the
result does not depend on how many worker processes evaluate them.

Within a chunk the filters are vectorized: A and C do not depend on theta,
and Q, R, S and the stationary P0 are linear in (S_A, S_B), so per-cell
matrices are assembled from three basis discretizations.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .errors import ConditioningError, DegeneratePosterior, QstatError, ValidationError
from .gaussmarkov import GaussianRecord, van_loan
from .optomech import (Detuning, OptomechConfig, check_hurwitz, drift_matrix,
                       noise_densities, observation_matrix)

CHUNK_SIZE = 64
REFINE_THRESHOLD = 1e-6
REFINE_MARGIN = 0.2
ZOOM_FACTOR = 0.25
_LOG2PI = math.log(2.0 * math.pi)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("QSTAT_WORKERS", "1")))
    except ValueError:
        raise ValidationError("QSTAT_WORKERS must be an integer") from None


@dataclass(frozen=True)
class ThetaGrid:
    """Cartesian grid over (S_A, S_B); cells are ordered S_A-major."""

    axis_sa: np.ndarray
    axis_sb: np.ndarray

    def __post_init__(self):
        for name in ("axis_sa", "axis_sb"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 1 or a.size < 2:
                raise ValidationError(f"{name} needs at least 2 points")
            if np.any(np.diff(a) <= 0):
                raise ValidationError(f"{name} must be strictly increasing")
            if a[0] < 0:
                raise ValidationError(f"{name} must be nonnegative")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def uniform(cls, sa_range=(0.0, 2.0), sb_range=(0.0, 3.0), shape=(41, 41)):
        return cls(np.linspace(*sa_range, shape[0]), np.linspace(*sb_range, shape[1]))

    @property
    def shape(self) -> tuple[int, int]:
        return self.axis_sa.size, self.axis_sb.size

    @property
    def n_cells(self) -> int:
        return self.axis_sa.size * self.axis_sb.size

    def points(self) -> np.ndarray:
        """(n_cells, 2) array of (S_A, S_B)."""
        sa, sb = np.meshgrid(self.axis_sa, self.axis_sb, indexing="ij")
        return np.column_stack([sa.ravel(), sb.ravel()])

    @staticmethod
    def _trapz_weights(a):
        w = np.zeros_like(a)
        d = np.diff(a)
        w[:-1] += d / 2
        w[1:] += d / 2
        return w

    @property
    def weights_sa(self) -> np.ndarray:
        return self._trapz_weights(self.axis_sa)

    @property
    def weights_sb(self) -> np.ndarray:
        return self._trapz_weights(self.axis_sb)

    @property
    def weights(self) -> np.ndarray:
        """(n_sa, n_sb) trapezoidal integration weights."""
        return np.outer(self.weights_sa, self.weights_sb)

    def nearest(self, s_a: float, s_b: float) -> tuple[int, int]:
        return (int(np.argmin(np.abs(self.axis_sa - s_a))),
                int(np.argmin(np.abs(self.axis_sb - s_b))))

    def to_dict(self) -> dict:
        return {"axis_sa": self.axis_sa.tolist(), "axis_sb": self.axis_sb.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["axis_sa"], doc["axis_sb"])


@dataclass
class LogLikSurface:
    """Absolute log-likelihoods of both records on a grid.

    Arrays have the grid shape.  Failed cells hold NaN and are listed in
    ``errors`` as ``{flat_index: note}``.  ``relative()`` gives the total
    shifted by its maximum, which is what exponentiation should use.
    """

    grid: ThetaGrid
    loglik_minus: np.ndarray
    loglik_plus: np.ndarray
    errors: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def loglik_total(self) -> np.ndarray:
        return self.loglik_minus + self.loglik_plus

    @property
    def max_loglik(self) -> float:
        t = self.loglik_total
        if not np.isfinite(t).any():
            raise DegeneratePosterior("no finite cell in the surface")
        return float(np.nanmax(t))

    def relative(self) -> np.ndarray:
        return self.loglik_total - self.max_loglik

    def argmax(self) -> tuple[float, float]:
        t = np.where(np.isfinite(self.loglik_total), self.loglik_total, -np.inf)
        i, j = np.unravel_index(int(np.argmax(t)), t.shape)
        return float(self.grid.axis_sa[i]), float(self.grid.axis_sb[j])

    def write(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        pts = self.grid.points()
        csv_path, json_path = stem.with_suffix(".csv"), stem.with_suffix(".json")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s_a", "s_b", "loglik_minus", "loglik_plus", "loglik_total"])
            for (a, b), m, p, t in zip(pts, self.loglik_minus.ravel(),
                                       self.loglik_plus.ravel(), self.loglik_total.ravel()):
                w.writerow([repr(float(v)) for v in (a, b, m, p, t)])
        meta = dict(self.metadata)
        meta.update(grid=self.grid.to_dict(), errors={str(k): v for k, v in self.errors.items()},
                    max_loglik=self.max_loglik if np.isfinite(self.loglik_total).any() else None)
        json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    @classmethod
    def read(cls, stem) -> "LogLikSurface":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        grid = ThetaGrid.from_dict(meta.pop("grid"))
        errors = {int(k): v for k, v in meta.pop("errors", {}).items()}
        meta.pop("max_loglik", None)
        data = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
        shape = grid.shape
        return cls(grid, data[:, 2].reshape(shape), data[:, 3].reshape(shape), errors, meta)


# batched filter ------------------------------------------------------------

class _DiscreteBasis:
    """Discretized optomech model at step dt, affine in (S_A, S_B)."""

    def __init__(self, config: OptomechConfig, detuning, dt: float):
        f = drift_matrix(config, detuning)
        check_hurwitz(f)
        c = observation_matrix(config)
        D, d = 4, 2
        F = np.zeros((D + d, D + d))
        F[:D, :D] = f
        F[D:, :D] = c
        self.parts = []
        zero = OptomechConfig(config.g, config.gamma_a, config.gamma_b, 0.0)
        for cfg, sa, sb in ((config, 0.0, 0.0), (zero, 1.0, 0.0), (zero, 0.0, 1.0)):
            q, r, s = noise_densities(cfg, sa, sb)
            N = np.block([[q, s], [s.T, r]])
            Phi, Qa = van_loan(F, N, dt)
            P0 = linalg.solve_continuous_lyapunov(f, -q)
            self.parts.append((Qa, 0.5 * (P0 + P0.T)))
        self.A = Phi[:D, :D]
        self.C = Phi[D:, :D]

    def matrices(self, thetas):
        """Per-cell (Q, R, S, P0) for an (n, 2) array of thetas."""
        (Qb, Pb), (Qa_, Pa), (Qs, Ps) = self.parts
        sa = thetas[:, 0, None, None]
        sb = thetas[:, 1, None, None]
        Qa = Qb + sa * Qa_ + sb * Qs
        P0 = Pb + sa * Pa + sb * Ps
        return Qa[:, :4, :4], Qa[:, 4:, 4:], Qa[:, :4, 4:], P0


def _sym(m):
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def batch_loglik(basis: _DiscreteBasis, thetas, Y, conv_tol: float = 1e-15) -> np.ndarray:
    """Kalman log-likelihoods for every (record, cell) pair.

    ``thetas`` is (n, 2); ``Y`` is (R, K, 2) increments.  Returns (R, n).
    Each cell's Riccati recursion is frozen once its predicted covariance
    stops changing (relative change <= ``conv_tol``); the decision is made per
    cell, so results do not depend on which other cells share the batch.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    Y = np.asarray(Y, dtype=float)
    n = thetas.shape[0]
    R_, K, d = Y.shape
    ll = np.zeros((n, R_))
    if K == 0:
        return ll.T
    A, C = basis.A, basis.C
    Q, R, S, P = basis.matrices(thetas)
    try:
        Rc = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise ConditioningError("observation noise covariance not positive definite") from None
    T = np.swapaxes(linalg_cho_solve_batch(Rc, np.swapaxes(S, 1, 2)), 1, 2)  # S R^-1
    At = A - T @ C
    Qt = _sym(Q - T @ np.swapaxes(S, 1, 2))
    AtT = np.swapaxes(At, 1, 2)
    TT = np.swapaxes(T, 1, 2)
    CT = C.T
    eye = np.eye(4)
    x = np.zeros((n, R_, 4))
    frozen = np.zeros(n, dtype=bool)
    all_frozen = False
    gainT = logdet = om_inv = None
    for k in range(K):
        if not all_frozen:
            om = _sym(C @ P @ CT + R)
            try:
                L = np.linalg.cholesky(om)
            except np.linalg.LinAlgError:
                raise ConditioningError("innovation covariance not positive definite",
                                        step=k + 1) from None
            ld_new = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
            oi_new = np.linalg.inv(om)
            g_new = P @ CT @ oi_new
            IKC = eye - g_new @ C
            Pu = _sym(IKC @ P @ np.swapaxes(IKC, 1, 2) + g_new @ R @ np.swapaxes(g_new, 1, 2))
            P_new = _sym(At @ Pu @ AtT + Qt)
            if gainT is None:
                logdet, om_inv, gainT = ld_new, oi_new, np.swapaxes(g_new, 1, 2)
            else:
                live = ~frozen
                logdet = np.where(live, ld_new, logdet)
                om_inv = np.where(live[:, None, None], oi_new, om_inv)
                gainT = np.where(live[:, None, None], np.swapaxes(g_new, 1, 2), gainT)
            change = np.abs(P_new - P).max(axis=(1, 2))
            scale = np.abs(P).max(axis=(1, 2))
            frozen = frozen | (change <= conv_tol * np.maximum(scale, 1e-300))
            P = np.where(frozen[:, None, None], P, P_new)
            all_frozen = bool(frozen.all())
        y = Y[:, k, :]
        nu = y[None, :, :] - x @ CT
        quad = np.einsum("nri,nij,nrj->nr", nu, om_inv, nu)
        ll -= 0.5 * (d * _LOG2PI + logdet[:, None] + quad)
        xu = x + nu @ gainT
        x = xu @ AtT + (y[None, :, :] @ TT)
    return ll.T


def linalg_cho_solve_batch(L, B):
    """Solve (L L^T) X = B for stacked lower Cholesky factors."""
    Z = np.linalg.solve(L, B)
    return np.linalg.solve(np.swapaxes(L, 1, 2), Z)


def _eval_chunk(args):
    """Worker entry: evaluate one chunk, falling back to single cells on failure."""
    config_dict, detuning, dt, thetas, Y = args
    config = OptomechConfig.from_dict(config_dict)
    basis = _DiscreteBasis(config, detuning, dt)
    try:
        return batch_loglik(basis, thetas, Y), {}
    except (QstatError, np.linalg.LinAlgError, FloatingPointError):
        pass
    out = np.full((Y.shape[0], thetas.shape[0]), np.nan)
    notes = {}
    for i, th in enumerate(thetas):
        try:
            out[:, i] = batch_loglik(basis, th[None, :], Y)[:, 0]
        except (QstatError, np.linalg.LinAlgError, FloatingPointError) as exc:
            notes[i] = f"{type(exc).__name__} at (s_a={th[0]:.6g}, s_b={th[1]:.6g}): {exc}"
    return out, notes


def _stack(records):
    if isinstance(records, GaussianRecord):
        records = [records]
    dts = {r.dt for r in records}
    lens = {len(r) for r in records}
    if len(dts) != 1 or len(lens) != 1:
        raise ValidationError("batched records must share dt and length")
    if records[0].dim != 2:
        raise ValidationError("optomech records have two quadratures")
    return dts.pop(), np.stack([r.increments for r in records])


def loglik_bank(config: OptomechConfig, thetas, records, detuning, workers=None,
                chunk_size: int = CHUNK_SIZE):
    """Log-likelihoods (R, n) of R equal-length records at n parameter points.

    Returns ``(loglik, notes)`` with ``notes`` mapping failed cell indices to
    messages.
    """
    detuning = Detuning.parse(detuning)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    dt, Y = _stack(records)
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    cdict = config.to_dict()
    tasks = [(cdict, detuning.value, dt, thetas[i:i + chunk_size], Y)
             for i in range(0, thetas.shape[0], chunk_size)]
    if workers == 1 or len(tasks) == 1:
        results = [_eval_chunk(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_eval_chunk, tasks))
    out = np.concatenate([r[0] for r in results], axis=1)
    notes = {}
    for c, (_, nts) in enumerate(results):
        for i, msg in nts.items():
            notes[c * chunk_size + i] = f"{detuning.value}: {msg}"
    return out, notes


def loglik_surface(config: OptomechConfig, grid: ThetaGrid, record_minus: GaussianRecord,
                   record_plus: GaussianRecord, workers=None) -> LogLikSurface:
    """Evaluate ln P(Y_-|theta) + ln P(Y_+|theta) on every grid cell."""
    pts = grid.points()
    lm, nm = loglik_bank(config, pts, record_minus, Detuning.RED, workers)
    lp, np_ = loglik_bank(config, pts, record_plus, Detuning.BLUE, workers)
    errors = dict(nm)
    for k, v in np_.items():
        errors[k] = errors[k] + "; " + v if k in errors else v
    meta = {"dt_minus": record_minus.dt, "dt_plus": record_plus.dt,
            "fingerprint_minus": record_minus.fingerprint or record_minus.digest(),
            "fingerprint_plus": record_plus.fingerprint or record_plus.digest(),
            "config": config.to_dict()}
    return LogLikSurface(grid, lm[0].reshape(grid.shape), lp[0].reshape(grid.shape),
                         errors, meta)


def refine_grid(surface: LogLikSurface, target_cells=None) -> ThetaGrid:
    """Re-mesh the region where the uniform-prior posterior is non-negligible.

    Cells with mass above 1e-6 of the peak define a bounding box that is
    widened by 20% of its width per side and clipped to the original grid.
    An axis on which only one cell survives is zoomed to 0.25 of its old
    extent around that cell.  ``target_cells`` is ``(n_sa, n_sb)`` or a total
    count (split evenly); default keeps the current shape.
    """
    grid = surface.grid
    t = surface.loglik_total
    ok = np.isfinite(t)
    if not ok.any():
        raise DegeneratePosterior("surface has no finite cells")
    mass = np.where(ok, np.exp(np.where(ok, t, 0.0) - np.nanmax(t)), 0.0) * grid.weights
    sel = mass > REFINE_THRESHOLD * mass.max()
    if target_cells is None:
        shape = grid.shape
    elif np.isscalar(target_cells):
        m = max(2, int(round(math.sqrt(target_cells))))
        shape = (m, m)
    else:
        shape = tuple(int(v) for v in target_cells)
    axes = []
    for ax, axis, n in ((1, grid.axis_sa, shape[0]), (0, grid.axis_sb, shape[1])):
        idx = np.flatnonzero(sel.any(axis=ax))
        lo, hi = axis[idx[0]], axis[idx[-1]]
        if idx[0] == idx[-1]:
            half = 0.5 * ZOOM_FACTOR * (axis[-1] - axis[0])
            lo, hi = max(0.0, lo - half), lo + half
        else:
            w = hi - lo
            lo = max(axis[0], lo - REFINE_MARGIN * w)
            hi = min(axis[-1], hi + REFINE_MARGIN * w)
        axes.append(np.linspace(lo, hi, n))
    return ThetaGrid(*axes)
