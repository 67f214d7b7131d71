"""Uniformly sampled observation-increment records and their file format.

A record is written as ``<stem>.csv`` with header ``t,y_1,...,y_d`` (``t`` is
the end time of each increment) plus a ``<stem>.json`` sidecar holding
``dt``, ``seed`` and ``fingerprint``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class GaussianRecord:
    dt: float
    increments: np.ndarray
    seed: int | None = None
    fingerprint: str | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim == 1:
            inc = inc[:, None]
        if inc.ndim != 2:
            raise ValidationError("increments must be a (K, d) array")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not np.isfinite(inc).all():
            raise ValidationError("increments must be finite")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        object.__setattr__(self, "dt", float(self.dt))

    def __len__(self):
        return self.increments.shape[0]

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @property
    def duration(self) -> float:
        return len(self) * self.dt

    @property
    def times(self) -> np.ndarray:
        """End time of each increment."""
        return self.dt * np.arange(1, len(self) + 1)

    def split(self, k: int) -> tuple["GaussianRecord", "GaussianRecord"]:
        return (GaussianRecord(self.dt, self.increments[:k]),
                GaussianRecord(self.dt, self.increments[k:]))

    def coarsen(self, factor: int) -> "GaussianRecord":
        """Sum consecutive groups of ``factor`` increments (drops a ragged tail)."""
        n = len(self) // factor
        inc = self.increments[: n * factor].reshape(n, factor, self.dim).sum(axis=1)
        return GaussianRecord(self.dt * factor, inc, self.seed, self.fingerprint)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.float64(self.dt).tobytes())
        h.update(np.ascontiguousarray(self.increments).tobytes())
        return h.hexdigest()[:16]

    def write(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        csv_path = stem.with_suffix(".csv")
        json_path = stem.with_suffix(".json")
        header = ["t"] + [f"y_{i + 1}" for i in range(self.dim)]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, row in zip(self.times, self.increments):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        sidecar = {"dt": self.dt, "seed": self.seed, "fingerprint": self.fingerprint,
                   "n_increments": len(self), "dim": self.dim, "digest": self.digest()}
        sidecar.update(self.meta)
        json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    @classmethod
    def read(cls, stem) -> "GaussianRecord":
        stem = Path(stem)
        sidecar = json.loads(stem.with_suffix(".json").read_text())
        with open(stem.with_suffix(".csv"), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        dim = len(header) - 1
        if header[0] != "t" or dim < 1:
            raise ValidationError(f"bad record header {header}")
        inc = np.array([[float(v) for v in r[1:]] for r in body], dtype=float).reshape(-1, dim)
        meta = {k: v for k, v in sidecar.items()
                if k not in {"dt", "seed", "fingerprint", "n_increments", "dim", "digest"}}
        return cls(sidecar["dt"], inc, sidecar.get("seed"), sidecar.get("fingerprint"), meta)
