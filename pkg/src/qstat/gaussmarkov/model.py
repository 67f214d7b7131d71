"""Discrete- and continuous-time linear-Gaussian state-space models."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .._linalg import is_pd, is_psd
from ..errors import ValidationError


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussMarkovModel:
    """x_{k+1} = A x_k + B u_k + w_k,  y_{k+1} = C x_k + v_k.

    Matrices are either 2-d (time-homogeneous) or 3-d with a leading time
    axis of length ``horizon``.  ``u`` is an input sequence (K, U) or a
    constant vector.  Noise cross-covariance E[w v^T] = S.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    P0: np.ndarray
    S: np.ndarray | None = None
    B: np.ndarray | None = None
    u: np.ndarray | None = None
    horizon: int | None = None
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        A = _freeze(self.A)
        C = _freeze(self.C)
        D = A.shape[-1]
        d = C.shape[-2]
        S = _freeze(np.zeros(A.shape[:-2] + (D, d)) if self.S is None else self.S)
        B = None if self.B is None else _freeze(self.B)
        u = None if self.u is None else _freeze(self.u)
        for name, val in (("A", A), ("C", C), ("S", S), ("Q", _freeze(self.Q)),
                          ("R", _freeze(self.R)), ("x0", _freeze(self.x0)),
                          ("P0", _freeze(self.P0)), ("B", B), ("u", u)):
            object.__setattr__(self, name, val)
        if A.shape[-2:] != (D, D) or self.Q.shape[-2:] != (D, D):
            raise ValidationError("A and Q must be D x D")
        if C.shape[-1] != D or self.R.shape[-2:] != (d, d) or S.shape[-2:] != (D, d):
            raise ValidationError("C, R, S shapes inconsistent with state/obs dims")
        if self.x0.shape != (D,) or self.P0.shape != (D, D):
            raise ValidationError("x0/P0 shapes inconsistent")
        lengths = {m.shape[0] for m in (A, C, S, self.Q, self.R) if m.ndim == 3}
        if len(lengths) > 1:
            raise ValidationError("time-varying matrices have different lengths")
        if lengths:
            (n,) = lengths
            if self.horizon is not None and self.horizon != n:
                raise ValidationError("horizon disagrees with time-varying matrices")
            object.__setattr__(self, "horizon", n)
        if self.check:
            self.validate()

    @property
    def dim_state(self) -> int:
        return self.A.shape[-1]

    @property
    def dim_obs(self) -> int:
        return self.C.shape[-2]

    @property
    def time_varying(self) -> bool:
        return any(m.ndim == 3 for m in (self.A, self.C, self.S, self.Q, self.R))

    def validate(self):
        if not is_psd(self.P0):
            raise ValidationError("initial covariance must be symmetric PSD")
        n = self.horizon if self.time_varying else 1
        for k in range(n):
            A, B, C, Q, R, S = self.at(k)[:6]
            if not np.allclose(Q, Q.T) or not np.allclose(R, R.T):
                raise ValidationError(f"Q/R not symmetric at step {k}")
            if not is_pd(R):
                raise ValidationError(f"R must be positive definite (step {k})")
            if not is_psd(np.block([[Q, S], [S.T, R]])):
                raise ValidationError(f"joint noise covariance not PSD (step {k})")

    def at(self, k: int):
        """Matrices (A, B, C, Q, R, S, Bu) in force at step k."""
        def pick(m):
            return m[k] if m.ndim == 3 else m
        A, C, Q, R, S = (pick(m) for m in (self.A, self.C, self.Q, self.R, self.S))
        if self.B is None or self.u is None:
            bu = np.zeros(self.dim_state)
        else:
            u = self.u[k] if self.u.ndim == 2 else self.u
            bu = pick(self.B) @ u
        return A, self.B, C, Q, R, S, bu

    def with_initial(self, x0, P0) -> "GaussMarkovModel":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(x0=x0, P0=P0, check=False)
        return GaussMarkovModel(**kw)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "check":
                continue
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussMarkovModel":
        return cls(**{k: v for k, v in doc.items() if k in {f.name for f in fields(cls)}})

    @classmethod
    def from_json(cls, text: str) -> "GaussMarkovModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CtGaussMarkovModel:
    """dx = (f x + b u) dt + dw,  dy = c x dt + dv.

    ``q``, ``r``, ``s`` are noise densities per unit time:
    E[dw dw^T] = q dt, E[dv dv^T] = r dt, E[dw dv^T] = s dt.
    """

    f: np.ndarray
    c: np.ndarray
    q: np.ndarray
    r: np.ndarray
    x0: np.ndarray
    P0: np.ndarray
    s: np.ndarray | None = None
    b: np.ndarray | None = None
    u: np.ndarray | None = None
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        D = np.shape(self.f)[-1]
        d = np.shape(self.c)[0]
        s = np.zeros((D, d)) if self.s is None else self.s
        for name, val in (("f", self.f), ("c", self.c), ("q", self.q), ("r", self.r),
                          ("x0", self.x0), ("P0", self.P0), ("s", s)):
            object.__setattr__(self, name, _freeze(val))
        if self.b is not None:
            object.__setattr__(self, "b", _freeze(self.b))
            object.__setattr__(self, "u", _freeze(self.u if self.u is not None
                                                  else np.zeros(self.b.shape[1])))
        if self.f.shape != (D, D) or self.q.shape != (D, D) or self.c.shape != (d, D):
            raise ValidationError("f, q, c shapes inconsistent")
        if self.r.shape != (d, d) or self.s.shape != (D, d):
            raise ValidationError("r, s shapes inconsistent")
        if self.x0.shape != (D,) or self.P0.shape != (D, D):
            raise ValidationError("x0/P0 shapes inconsistent")
        if self.check:
            if not is_pd(self.r):
                raise ValidationError("observation noise density r must be positive definite")
            if not is_psd(np.block([[self.q, self.s], [self.s.T, self.r]])):
                raise ValidationError("joint noise density [[q, s], [s^T, r]] not PSD")
            if not is_psd(self.P0):
                raise ValidationError("initial covariance must be PSD")

    @property
    def dim_state(self) -> int:
        return self.f.shape[0]

    @property
    def dim_obs(self) -> int:
        return self.c.shape[0]

    @property
    def bu(self) -> np.ndarray:
        if self.b is None:
            return np.zeros(self.dim_state)
        return self.b @ self.u

    def with_initial(self, x0, P0) -> "CtGaussMarkovModel":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(x0=x0, P0=P0, check=False)
        return CtGaussMarkovModel(**kw)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "check":
                continue
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "CtGaussMarkovModel":
        return cls(**{k: v for k, v in doc.items() if k in {f.name for f in fields(cls)}})

    @classmethod
    def from_json(cls, text: str) -> "CtGaussMarkovModel":
        return cls.from_dict(json.loads(text))
