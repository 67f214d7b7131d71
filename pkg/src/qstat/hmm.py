"""Finite-state hidden Markov models with a joint transition-observation kernel.

The kernel is stored as ``kernel[y_next, x_next, x]`` = P(y_{k+1}, x_{k+1} | x_k),
so system and observation noise may be dependent.  Filtering uses the scaling
method: every step is normalized and the normalizers accumulate the
log-likelihood.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ResourceLimitError, ValidationError, ZeroProbabilityRecord

ORACLE_PATH_CAP = 10**7
_TOL = 1e-12


@dataclass(frozen=True)
class HmmModel:
    initial: np.ndarray
    kernel: np.ndarray

    def __post_init__(self):
        initial = np.asarray(self.initial, dtype=float)
        kernel = np.asarray(self.kernel, dtype=float)
        if kernel.ndim != 3 or initial.ndim != 1:
            raise ValidationError("kernel must be 3-d and initial 1-d")
        if kernel.shape[1] != kernel.shape[2] or kernel.shape[2] != initial.size:
            raise ValidationError(
                f"kernel shape {kernel.shape} inconsistent with {initial.size} states")
        if (initial < 0).any() or (kernel < 0).any():
            raise ValidationError("probabilities must be nonnegative")
        if abs(initial.sum() - 1.0) > _TOL:
            raise ValidationError("initial distribution must sum to 1")
        col = kernel.sum(axis=(0, 1))
        if np.abs(col - 1.0).max() > _TOL:
            raise ValidationError("kernel[:, :, x] must sum to 1 for every x")
        initial.setflags(write=False)
        kernel.setflags(write=False)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "kernel", kernel)

    @property
    def n_states(self) -> int:
        return self.initial.size

    @property
    def n_obs(self) -> int:
        return self.kernel.shape[0]

    @classmethod
    def from_independent(cls, initial, transition, emission):
        """Build from P(x'|x) = transition[x', x] and P(y|x) = emission[y, x].

        The observation y_{k+1} depends on x_k, matching the joint-kernel
        convention.
        """
        transition = np.asarray(transition, dtype=float)
        emission = np.asarray(emission, dtype=float)
        return cls(initial, emission[:, None, :] * transition[None, :, :])

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_obs": self.n_obs,
            "initial": self.initial.tolist(),
            "kernel": self.kernel.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "HmmModel":
        model = cls(doc["initial"], doc["kernel"])
        if model.n_states != doc.get("n_states", model.n_states) or \
                model.n_obs != doc.get("n_obs", model.n_obs):
            raise ValidationError("declared n_states/n_obs do not match arrays")
        return model

    @classmethod
    def from_json(cls, text: str) -> "HmmModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class DiscreteRecord:
    observations: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.int64).reshape(-1)
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    def __len__(self):
        return self.observations.size

    def check(self, model: HmmModel):
        obs = self.observations
        if obs.size and (obs.min() < 0 or obs.max() >= model.n_obs):
            raise ValidationError(f"observation index outside [0, {model.n_obs})")


def _as_record(record) -> DiscreteRecord:
    return record if isinstance(record, DiscreteRecord) else DiscreteRecord(record)


def _forward(model, record):
    obs = record.observations
    alpha = np.empty((obs.size + 1, model.n_states))
    norms = np.empty(obs.size)
    alpha[0] = model.initial
    for k, y in enumerate(obs):
        a = model.kernel[y] @ alpha[k]
        c = a.sum()
        if c <= 0.0:
            raise ZeroProbabilityRecord(k + 1)
        norms[k] = c
        alpha[k + 1] = a / c
    return alpha, norms


def hmm_filter(model: HmmModel, record) -> tuple[np.ndarray, float]:
    """Filtered posteriors P(x_k | Y_k) for k = 0..K and ln P(Y).

    Returns
    -------
    posteriors : ndarray, shape (K+1, N)
        Row 0 is the initial distribution.
    log_likelihood : float
        Sum of the per-step ln P(y_{k+1} | Y_k).
    """
    record = _as_record(record)
    record.check(model)
    alpha, norms = _forward(model, record)
    return alpha, float(np.log(norms).sum())


def hmm_step_loglik(model: HmmModel, record) -> np.ndarray:
    """Per-step ln P(y_{k+1} | Y_k), k = 0..K-1."""
    record = _as_record(record)
    record.check(model)
    return np.log(_forward(model, record)[1])


def hmm_smooth(model: HmmModel, record) -> np.ndarray:
    """Smoothed posteriors P(x_k | Y) for k = 0..K.

    The backward quantity P(Ybar_k | x_k) is rescaled by the forward
    normalizers, which cancel in the final normalization.
    """
    record = _as_record(record)
    record.check(model)
    alpha, norms = _forward(model, record)
    obs = record.observations
    beta = np.ones(model.n_states)
    out = np.empty_like(alpha)
    out[-1] = alpha[-1]
    for k in range(obs.size - 1, -1, -1):
        beta = (beta @ model.kernel[obs[k]]) / norms[k]
        p = beta * alpha[k]
        out[k] = p / p.sum()
    return out


def hmm_joint_oracle(model: HmmModel, record, cap: int = ORACLE_PATH_CAP) -> float:
    """ln P(Y) by brute-force summation of P(Y, X) over every hidden path."""
    record = _as_record(record)
    record.check(model)
    obs = record.observations
    n, steps = model.n_states, obs.size + 1
    n_paths = n**steps
    if n_paths > cap:
        raise ResourceLimitError(f"{n_paths} hidden paths exceed the cap of {cap}")
    total = 0.0
    chunk = 1 << 16
    for start in range(0, n_paths, chunk):
        idx = np.arange(start, min(start + chunk, n_paths))
        paths = np.stack(np.unravel_index(idx, (n,) * steps), axis=1)
        p = model.initial[paths[:, 0]].copy()
        for k, y in enumerate(obs):
            p *= model.kernel[y, paths[:, k + 1], paths[:, k]]
        total += math.fsum(p)
    if total <= 0.0:
        return -math.inf
    return math.log(total)


def hmm_sample(model: HmmModel, n_steps: int, seed=None):
    """Draw a hidden path x_0..x_K and observations y_1..y_K from P(Y, X)."""
    if n_steps < 0:
        raise ValidationError("n_steps must be nonnegative")
    rng = np.random.default_rng(seed)
    n, m = model.n_states, model.n_obs
    flat = model.kernel.reshape(m * n, n)
    path = np.empty(n_steps + 1, dtype=np.int64)
    obs = np.empty(n_steps, dtype=np.int64)
    path[0] = rng.choice(n, p=model.initial)
    for k in range(n_steps):
        j = rng.choice(m * n, p=flat[:, path[k]])
        obs[k], path[k + 1] = divmod(j, n)
    return path, DiscreteRecord(obs)
