"""Epsilon-insensitive support vector regression trained with SMO.

The dual is solved in the usual doubled form: for each sample ``n`` there are
two variables ``alpha[n]`` (residual above the tube) and ``alpha_star[n]``
(below), both in ``[0, C]``, and the model coefficient is
``beta = alpha - alpha_star``.  With ``E = K @ beta - y`` the gradient of the
minimised dual is ``E + eps`` for ``alpha`` and ``-E + eps`` for
``alpha_star``, so the solver only ever tracks ``F = K @ beta``.

Working-set selection is the maximal violating pair: ``i`` maximises
``-y_t G_t`` over the variables that may move up, ``j`` minimises it over
those that may move down; ties go to the lowest index, alpha block first.
"""

from __future__ import annotations

import logging
import re
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    CorruptPayload,
    DimensionMismatch,
    InsufficientData,
    NoConvergence,
    NonFiniteInput,
    VersionMismatch,
)
from .normdiag import NormStats, apply_norm, fit_norm
from .telemetry import RegressionDataset

log = logging.getLogger(__name__)

FORMAT_MAGIC = "driftlab-svr-pair"
FORMAT_VERSION = 1
MAX_ITERATIONS = 10**6
FULL_GRAM_MAX_ROWS = 16384
LRU_ROWS = 1024
TAU = 1e-12
SV_EPS = 1e-12

DEFAULT_C = 10.0
DEFAULT_EPSILON = 1.0
DEFAULT_TOL = 1e-3


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("RBF kernel needs gamma > 0")
            object.__setattr__(self, "gamma", float(self.gamma))
        else:
            object.__setattr__(self, "gamma", None)

    @classmethod
    def default(cls, dim: int = 60) -> "KernelSpec":
        return cls("rbf", 1.0 / dim)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of ``a`` and ``b``."""
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        g = a @ b.T
        if self.kind == "linear":
            return g
        g *= -2.0
        g += np.einsum("ij,ij->i", a, a)[:, None]
        g += np.einsum("ij,ij->i", b, b)[None, :]
        np.maximum(g, 0.0, out=g)
        g *= -self.gamma
        return np.exp(g, out=g)


class KernelCache:
    """Gram-matrix rows on demand.

    Up to ``full_max_rows`` samples the whole Gram matrix is built once;
    beyond that an LRU cache of ``lru_rows`` rows is kept.
    """

    def __init__(self, x: np.ndarray, kernel: KernelSpec,
                 full_max_rows: int = FULL_GRAM_MAX_ROWS, lru_rows: int = LRU_ROWS):
        self.x = np.ascontiguousarray(x, dtype=float)
        self.kernel = kernel
        n = self.x.shape[0]
        self.full = n <= full_max_rows
        self.lru_rows = lru_rows
        self.misses = 0
        if self.full:
            self._gram = np.empty((n, n))
            block = 1024
            for s in range(0, n, block):
                self._gram[s:s + block] = kernel(self.x[s:s + block], self.x)
            self.diag = self._gram.diagonal().copy()
        else:
            self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
            if kernel.kind == "rbf":
                self.diag = np.ones(n)
            else:
                self.diag = np.einsum("ij,ij->i", self.x, self.x)

    def __len__(self) -> int:
        return self.x.shape[0]

    def row(self, i: int) -> np.ndarray:
        if self.full:
            return self._gram[i]
        r = self._rows.get(i)
        if r is not None:
            self._rows.move_to_end(i)
            return r
        self.misses += 1
        r = self.kernel(self.x[i:i + 1], self.x)[0]
        self._rows[i] = r
        if len(self._rows) > self.lru_rows:
            self._rows.popitem(last=False)
        return r


@dataclass
class SmoResult:
    beta: np.ndarray
    bias: float
    iterations: int
    gap: float


def smo_solve(
    cache: KernelCache,
    y: np.ndarray,
    C: float,
    epsilon: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
    callback: Optional[Callable[[np.ndarray], None]] = None,
) -> SmoResult:
    """Solve the epsilon-SVR dual for one target vector.

    ``callback(beta)`` is invoked after every pair update (slow; for tests).
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    alpha = np.zeros(n)
    alpha_s = np.zeros(n)
    F = np.zeros(n)
    diag = cache.diag
    ninf = -np.inf
    it = 0
    while True:
        E = F - y
        # -y_t G_t for each half of the doubled problem.
        va = -E - epsilon
        vs = -E + epsilon
        up_a = np.where(alpha < C, va, ninf)
        up_s = np.where(alpha_s > 0, vs, ninf)
        lo_a = np.where(alpha > 0, va, np.inf)
        lo_s = np.where(alpha_s < C, vs, np.inf)
        ia, is_ = int(np.argmax(up_a)), int(np.argmax(up_s))
        ja, js = int(np.argmin(lo_a)), int(np.argmin(lo_s))
        if up_a[ia] >= up_s[is_]:
            i, yi, m = ia, 1, up_a[ia]
        else:
            i, yi, m = is_, -1, up_s[is_]
        if lo_a[ja] <= lo_s[js]:
            j, yj, M = ja, 1, lo_a[ja]
        else:
            j, yj, M = js, -1, lo_s[js]
        gap = m - M
        if gap <= tol:
            break
        if it >= max_iter:
            raise NoConvergence(max_iter)
        it += 1

        ai = alpha[i] if yi == 1 else alpha_s[i]
        aj = alpha[j] if yj == 1 else alpha_s[j]
        Gi = E[i] + epsilon if yi == 1 else -E[i] + epsilon
        Gj = E[j] + epsilon if yj == 1 else -E[j] + epsilon
        Ki = cache.row(i)
        Qij = yi * yj * Ki[j]
        ai_old, aj_old = ai, aj
        if yi != yj:
            quad = diag[i] + diag[j] + 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (-Gi - Gj) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            elif ai < 0:
                ai = 0.0
                aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            elif aj > C:
                aj = C
                ai = C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * Qij
            if quad <= 0:
                quad = TAU
            delta = (Gi - Gj) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            elif aj < 0:
                aj = 0.0
                ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            elif ai < 0:
                ai = 0.0
                aj = total

        if yi == 1:
            alpha[i] = ai
        else:
            alpha_s[i] = ai
        if yj == 1:
            alpha[j] = aj
        else:
            alpha_s[j] = aj
        dbi = yi * (ai - ai_old)
        dbj = yj * (aj - aj_old)
        if i != j:
            if dbi != 0.0:
                F += dbi * Ki
            if dbj != 0.0:
                F += dbj * cache.row(j)
        if callback is not None:
            callback(alpha - alpha_s)

    beta = alpha - alpha_s
    E = F - y
    free_a = (alpha > 0) & (alpha < C)
    free_s = (alpha_s > 0) & (alpha_s < C)
    nfree = np.count_nonzero(free_a) + np.count_nonzero(free_s)
    if nfree:
        bias = (np.sum(-E[free_a] - epsilon) + np.sum(-E[free_s] + epsilon)) / nfree
    else:
        bias = 0.5 * (m + M)
    log.debug("smo: %d updates, gap %.3g, %d free", it, gap, nfree)
    return SmoResult(beta, float(bias), it, float(gap))


def dual_objective(beta: np.ndarray, K: np.ndarray, y: np.ndarray, epsilon: float) -> float:
    """-1/2 b'Kb + y'b - eps*|b|_1 (the maximised form)."""
    return float(-0.5 * beta @ K @ beta + y @ beta - epsilon * np.abs(beta).sum())


@dataclass(frozen=True, eq=False)
class SvrModel:
    kernel: KernelSpec
    support_vectors: np.ndarray
    dual_coeffs: np.ndarray
    bias: float
    norm: NormStats
    C: float
    epsilon: float
    support_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        sv = np.array(self.support_vectors, dtype=float).reshape(-1, self.norm.dim)
        coef = np.array(self.dual_coeffs, dtype=float).reshape(-1)
        idx = np.array(self.support_indices, dtype=np.int64).reshape(-1)
        if sv.shape[0] != coef.shape[0]:
            raise DimensionMismatch("one dual coefficient per support vector")
        if idx.size == 0:
            idx = np.full(coef.shape[0], -1, dtype=np.int64)
        for name, a in (("support_vectors", sv), ("dual_coeffs", coef), ("support_indices", idx)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def n_support(self) -> int:
        return self.dual_coeffs.shape[0]

    def decision(self, z: np.ndarray) -> np.ndarray:
        """Predictions for rows of an already-normalized matrix."""
        z = np.atleast_2d(z)
        if self.n_support == 0:
            return np.full(z.shape[0], self.bias)
        out = np.empty(z.shape[0])
        block = 2048
        for s in range(0, z.shape[0], block):
            out[s:s + block] = self.kernel(z[s:s + block], self.support_vectors) @ self.dual_coeffs
        return out + self.bias

    def predict(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.shape[-1] != self.norm.dim:
            raise DimensionMismatch(f"expected {self.norm.dim} features, got {x.shape[-1]}")
        return self.decision(apply_norm(np.atleast_2d(x), self.norm))


@dataclass(frozen=True, eq=False)
class SvrPair:
    model_x: SvrModel
    model_y: SvrModel

    def __post_init__(self):
        if not self.model_x.norm == self.model_y.norm:
            raise ValueError("both axis models must share the same normalization")

    @property
    def norm(self) -> NormStats:
        return self.model_x.norm

    @property
    def dim(self) -> int:
        return self.norm.dim


def _fit_axis(cache, z, y, kernel, C, epsilon, tol, norm, max_iter, callback=None) -> SvrModel:
    res = smo_solve(cache, y, C, epsilon, tol, max_iter, callback)
    sv = np.flatnonzero(np.abs(res.beta) > SV_EPS)
    return SvrModel(kernel, z[sv], res.beta[sv], res.bias, norm, C, epsilon, sv)


def train(
    dataset: RegressionDataset,
    kernel: Optional[KernelSpec] = None,
    C: float = DEFAULT_C,
    epsilon: float = DEFAULT_EPSILON,
    tol: float = DEFAULT_TOL,
    max_iter: int = MAX_ITERATIONS,
    full_max_rows: int = FULL_GRAM_MAX_ROWS,
) -> SvrPair:
    """Fit one model per axis on z-scored features (both share one Gram matrix)."""
    if len(dataset) < 2:
        raise InsufficientData("training needs at least 2 samples")
    if not C > 0 or not epsilon >= 0 or not tol > 0:
        raise ValueError("need C > 0, epsilon >= 0, tol > 0")
    kernel = kernel or KernelSpec.default(dataset.features.shape[1])
    norm = fit_norm(dataset.features)
    z = apply_norm(dataset.features, norm)
    cache = KernelCache(z, kernel, full_max_rows=full_max_rows)
    mx = _fit_axis(cache, z, dataset.target_x, kernel, C, epsilon, tol, norm, max_iter)
    my = _fit_axis(cache, z, dataset.target_y, kernel, C, epsilon, tol, norm, max_iter)
    log.info("trained: %d / %d support vectors (x / y) of %d", mx.n_support, my.n_support, len(dataset))
    return SvrPair(mx, my)


def predict(pair: SvrPair, onboard) -> tuple[float, float]:
    x = np.asarray(onboard, dtype=float)
    if x.shape != (pair.dim,):
        raise DimensionMismatch(f"expected a vector of {pair.dim} channels, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("onboard vector contains non-finite values")
    return float(pair.model_x.predict(x)[0]), float(pair.model_y.predict(x)[0])


def predict_many(pair: SvrPair, features) -> np.ndarray:
    """N x 2 array of (vx_hat, vy_hat)."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    if x.shape[1] != pair.dim:
        raise DimensionMismatch(f"expected {pair.dim} features, got {x.shape[1]}")
    z = apply_norm(x, pair.norm)
    return np.column_stack([pair.model_x.decision(z), pair.model_y.decision(z)])


# ---------------------------------------------------------------- KKT audit


@dataclass
class KktReport:
    max_violation: float
    n_violations: int
    equality_residual: float
    box_ok: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.n_violations == 0 and self.box_ok


def kkt_audit(model: SvrModel, features, targets, tol: float = DEFAULT_TOL) -> KktReport:
    """Scan every training point against the epsilon-SVR optimality conditions.

    Works from the stored model alone: predictions are recomputed from the
    support vectors and the per-sample coefficients are rebuilt from
    ``support_indices``.  A point with coefficient ``b`` and residual
    ``r = y - f(x)`` must satisfy::

        b == 0          ->  |r| <= eps
        0 < b < C       ->  r == eps          -C < b < 0  ->  r == -eps
        b == C          ->  r >= eps          b == -C     ->  r <= -eps

    each to within ``tol``.
    """
    y = np.asarray(targets, dtype=float)
    n = y.shape[0]
    if np.any(model.support_indices < 0) or np.any(model.support_indices >= n):
        raise ValueError("model does not carry training indices for this dataset")
    beta = np.zeros(n)
    beta[model.support_indices] = model.dual_coeffs
    r = y - model.predict(features)
    C, eps = model.C, model.epsilon
    at_upper = beta >= C * (1 - 1e-12)
    at_lower = beta <= -C * (1 - 1e-12)
    zero = beta == 0
    pos_free = (beta > 0) & ~at_upper
    neg_free = (beta < 0) & ~at_lower
    viol = np.zeros(n)
    viol[zero] = np.abs(r[zero]) - eps
    viol[pos_free] = np.abs(r[pos_free] - eps)
    viol[neg_free] = np.abs(r[neg_free] + eps)
    viol[at_upper] = eps - r[at_upper]
    viol[at_lower] = r[at_lower] + eps
    viol = np.maximum(viol, 0.0)
    # Allow for rounding between the solver's running sums and this recomputation.
    slack = 1e-9 * max(1.0, float(np.max(np.abs(y))))
    return KktReport(
        max_violation=float(viol.max()),
        n_violations=int(np.count_nonzero(viol > tol + slack)),
        equality_residual=float(abs(beta.sum())),
        box_ok=bool(np.all(np.abs(beta) <= C * (1 + 1e-12))),
        tol=tol,
    )


# ------------------------------------------------------------ serialization


def _f(x: float) -> str:
    return repr(float(x))


def _model_lines(tag: str, m: SvrModel) -> list[str]:
    lines = [
        f"[{tag}]",
        f"kernel = {m.kernel.kind}",
        f"gamma = {_f(m.kernel.gamma) if m.kernel.gamma is not None else 'none'}",
        f"C = {_f(m.C)}",
        f"epsilon = {_f(m.epsilon)}",
        f"bias = {_f(m.bias)}",
        f"M = {m.n_support}",
        f"D = {m.norm.dim}",
        "mean = " + " ".join(map(_f, m.norm.mean)),
        "std = " + " ".join(map(_f, m.norm.std)),
    ]
    for k in range(m.n_support):
        lines.append(
            f"sv {int(m.support_indices[k])} {_f(m.dual_coeffs[k])} "
            + " ".join(map(_f, m.support_vectors[k]))
        )
    return lines


def save_model(pair: SvrPair) -> bytes:
    """Serialize a pair to the versioned text format (exact float round-trip)."""
    body = [FORMAT_MAGIC, f"version = {FORMAT_VERSION}"]
    body += _model_lines("x", pair.model_x)
    body += _model_lines("y", pair.model_y)
    text = "\n".join(body) + "\n"
    crc = zlib.crc32(text.encode("utf-8"))
    return (text + f"end crc32={crc:08x}\n").encode("utf-8")


_KV = re.compile(r"^(\w+) = (.*)$")


def _parse_model(lines: list[str], pos: int, tag: str) -> tuple[SvrModel, int]:
    if lines[pos] != f"[{tag}]":
        raise CorruptPayload(f"expected section [{tag}]")
    pos += 1
    kv = {}
    for key in ("kernel", "gamma", "C", "epsilon", "bias", "M", "D", "mean", "std"):
        mt = _KV.match(lines[pos])
        if not mt or mt.group(1) != key:
            raise CorruptPayload(f"expected key {key!r} in section [{tag}]")
        kv[key] = mt.group(2)
        pos += 1
    M, D = int(kv["M"]), int(kv["D"])
    mean = np.array(kv["mean"].split(), dtype=float)
    std = np.array(kv["std"].split(), dtype=float)
    if mean.shape != (D,) or std.shape != (D,):
        raise CorruptPayload("normalization vectors do not match D")
    idx = np.empty(M, dtype=np.int64)
    coef = np.empty(M)
    sv = np.empty((M, D))
    for k in range(M):
        parts = lines[pos].split()
        if len(parts) != D + 3 or parts[0] != "sv":
            raise CorruptPayload(f"bad support-vector row {k} in section [{tag}]")
        idx[k] = int(parts[1])
        coef[k] = float(parts[2])
        sv[k] = np.array(parts[3:], dtype=float)
        pos += 1
    gamma = None if kv["gamma"] == "none" else float(kv["gamma"])
    kernel = KernelSpec(kv["kernel"], gamma)
    model = SvrModel(kernel, sv, coef, float(kv["bias"]), NormStats(mean, std),
                     float(kv["C"]), float(kv["epsilon"]), idx)
    return model, pos


def load_model(data: bytes) -> SvrPair:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise CorruptPayload("model file is not UTF-8") from None
    lines = text.split("\n")
    if not lines or lines[0] != FORMAT_MAGIC:
        raise CorruptPayload("missing driftlab model header")
    mt = _KV.match(lines[1]) if len(lines) > 1 else None
    if not mt or mt.group(1) != "version":
        raise CorruptPayload("missing version line")
    if mt.group(2).strip() != str(FORMAT_VERSION):
        raise VersionMismatch(f"model format version {mt.group(2)!r}, expected {FORMAT_VERSION}")
    end = text.rfind("end crc32=")
    if end < 0 or not text.endswith("\n"):
        raise CorruptPayload("payload truncated (no end marker)")
    try:
        crc = int(text[end + len("end crc32="):].strip(), 16)
    except ValueError:
        raise CorruptPayload("bad checksum line") from None
    if zlib.crc32(text[:end].encode("utf-8")) != crc:
        raise CorruptPayload("checksum mismatch")
    try:
        body = text[:end].split("\n")
        mx, pos = _parse_model(body, 2, "x")
        my, pos = _parse_model(body, pos, "y")
        return SvrPair(mx, my)
    except CorruptPayload:
        raise
    except (ValueError, IndexError) as exc:
        raise CorruptPayload(str(exc)) from None
