"""Per-channel z-score normalization and singular-value diagnostics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InsufficientData, NonFiniteInput

EFFECTIVE_RANK_RTOL = 1e-9
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True, eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        for name in ("mean", "std"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DimensionMismatch("mean and std must be vectors of equal length")
        if np.any(self.std < 0):
            raise ValueError("std entries must be non-negative")

    def __eq__(self, other):
        if not isinstance(other, NormStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_norm(features) -> NormStats:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientData("fit_norm needs a matrix with at least 2 rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # Exactly-constant columns must report std 0, not rounding noise.
    std[np.all(x == x[0], axis=0)] = 0.0
    return NormStats(mean, std)


def apply_norm(features, stats: NormStats) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != stats.dim:
        raise DimensionMismatch(f"expected {stats.dim} columns, got {x.shape[-1]}")
    scale = np.where(stats.std > 0, stats.std, 1.0)
    z = (x - stats.mean) / scale
    z[..., stats.std == 0] = 0.0
    return z


def singular_values(matrix) -> np.ndarray:
    """Singular values of an N x D matrix by one-sided (Hestenes) Jacobi.

    Column pairs are rotated until every pair is orthogonal to within
    ``JACOBI_TOL`` relative to the product of their norms; the singular values
    are then the column norms.  Always returns D values, sorted descending,
    zero-padded when the matrix is rank deficient.
    """
    a = np.array(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionMismatch("singular_values needs a non-empty 2-D matrix")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("matrix contains non-finite entries")
    # Work on columns stored contiguously.
    cols = np.ascontiguousarray(a.T)
    d = cols.shape[0]
    sq = np.einsum("ij,ij->i", cols, cols)
    tiny = np.finfo(float).tiny

    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for i in range(d - 1):
            for j in range(i + 1, d):
                alpha, beta = sq[i], sq[j]
                if alpha <= tiny or beta <= tiny:
                    continue
                gamma = float(cols[i] @ cols[j])
                if abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ci = cols[i].copy()
                cols[i] = c * ci - s * cols[j]
                cols[j] = s * ci + c * cols[j]
                sq[i] = alpha - t * gamma
                sq[j] = beta + t * gamma
        # Refresh norms so drift in the running updates cannot accumulate.
        sq = np.einsum("ij,ij->i", cols, cols)
        if not rotated:
            break
    return np.sort(np.sqrt(sq))[::-1]


def effective_rank(sigma: np.ndarray, rtol: float = EFFECTIVE_RANK_RTOL) -> int:
    sigma = np.asarray(sigma)
    if sigma.size == 0 or sigma[0] == 0:
        return 0
    return int(np.count_nonzero(sigma > rtol * sigma[0]))


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    singular_values_raw: np.ndarray
    singular_values_normalized: np.ndarray

    @property
    def effective_rank_raw(self) -> int:
        return effective_rank(self.singular_values_raw)

    @property
    def effective_rank_normalized(self) -> int:
        return effective_rank(self.singular_values_normalized)

    # Kept under the field name used in reports.
    @property
    def effective_rank(self) -> int:
        return self.effective_rank_normalized

    def to_csv(self, variant: str) -> str:
        """Two-column ``index, sigma`` CSV for ``variant`` in {"raw", "normalized"}."""
        sigma = {"raw": self.singular_values_raw, "normalized": self.singular_values_normalized}[variant]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "sigma"])
        for k, s in enumerate(sigma):
            w.writerow([k, repr(float(s))])
        return buf.getvalue()


def spectrum(features) -> SpectrumReport:
    """Raw (uncentered) and z-scored spectra of a feature matrix."""
    x = np.asarray(features, dtype=float)
    return SpectrumReport(singular_values(x), singular_values(apply_norm(x, fit_norm(x))))
