"""Ensemble-averaged counting functions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass
class IdsCurve:
    """Counting function per unit length on an energy grid.

    ``counts`` keeps the per-realization integer counts (reps x energies);
    the mean and standard error are derived from it.
    """

    energies: np.ndarray
    counts: np.ndarray
    ell: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        self.counts = np.atleast_2d(np.asarray(self.counts, dtype=np.int64))
        if self.counts.shape[1] != self.energies.size:
            raise ValueError("counts and energies disagree in length")

    @property
    def reps(self):
        return self.counts.shape[0]

    @property
    def per_realization(self):
        return self.counts / self.ell

    @property
    def nu_mean(self):
        # integer sum first: independent of reduction order
        return self.counts.sum(axis=0) / (self.reps * self.ell)

    @property
    def nu_stderr(self):
        if self.reps < 2:
            return np.zeros(self.energies.size)
        return self.per_realization.std(axis=0, ddof=1) / np.sqrt(self.reps)

    @property
    def sigma0(self):
        """Smallest grid energy with a nonzero estimate (None if all zero)."""
        hit = np.nonzero(self.nu_mean > 0)[0]
        return float(self.energies[hit[0]]) if hit.size else None

    def columns(self):
        return ["E", "nu_mean", "nu_stderr", "reps", "ell", "h_s", "eps", "seed"] + [
            k for k in ("h_t", "geometry") if k in self.metadata
        ]

    def rows(self):
        meta = self.metadata
        extra = [k for k in ("h_t", "geometry") if k in meta]
        for E, m, se in zip(self.energies, self.nu_mean, self.nu_stderr):
            row = [repr(float(E)), repr(float(m)), repr(float(se)), self.reps, repr(float(self.ell)),
                   repr(float(meta.get("h_s", float("nan")))), repr(float(meta.get("eps", 0.0))),
                   meta.get("seed", "")]
            row += [meta[k] if isinstance(meta[k], str) else repr(float(meta[k])) for k in extra]
            yield row

    def csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns())
        writer.writerows(self.rows())
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path} holds no data")
        energies = np.array([float(r["E"]) for r in rows])
        reps = int(rows[0]["reps"])
        ell = float(rows[0]["ell"])
        mean = np.array([float(r["nu_mean"]) for r in rows])
        # per-realization counts are not stored; keep the pooled total as one row
        total = np.rint(mean * reps * ell)[None, :].astype(np.int64)
        meta = {"h_s": float(rows[0]["h_s"]), "eps": float(rows[0]["eps"]), "seed": rows[0]["seed"],
                "reps_declared": reps}
        return cls(energies, total, ell * reps, meta)
