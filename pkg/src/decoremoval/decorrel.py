"""Feature dependence via weighted cross-covariance and sample-weight search.

Each scalar column of ``Z`` is lifted through its own small family of random
cosine functions. The dependence between columns ``i`` and ``j`` is the
squared Frobenius norm of the weighted cross-covariance of the two lifted
columns, and sample weights on the scaled simplex ``{w >= 0, sum(w) = n}``
are tuned by projected gradient descent to shrink the sum over all pairs.

The weighting follows the literal form: row ``i`` of each lifted column is
multiplied by ``w_i`` before centering with the plain mean.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

logger = logging.getLogger(__name__)

DENSE_PAIR_LIMIT = 128
_BLOCK = 128
_PAIR_CHUNK = 256


@dataclass(frozen=True, eq=False)
class SampleWeights:
    w: np.ndarray
    trace: tuple = field(default=(), compare=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise InputError("sample weights must be a nonempty vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("sample weights must be finite and nonnegative")
        if abs(w.sum() - w.size) > 1e-6 * max(1.0, w.size):
            raise InputError(f"sample weights sum to {w.sum()!r}, expected {w.size}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def uniform(cls, n):
        return cls(np.ones(n))

    @property
    def n(self):
        return self.w.size

    def restrict(self, rows):
        """Raw weights of the retained ``rows``.

        Not renormalized: the objective on the retained rows must equal the
        full objective minus the removed terms.
        """
        return self.w[np.asarray(rows, dtype=np.int64)].copy()


@dataclass(frozen=True, eq=False)
class ColumnFeatureMaps:
    """Per-column random cosine families, arrays of shape (num_columns, num_functions)."""

    frequencies: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        f = np.array(self.frequencies, dtype=np.float64)
        p = np.array(self.phases, dtype=np.float64)
        if f.ndim != 2 or f.shape != p.shape or f.shape[1] < 1:
            raise InputError(f"bad column map shapes {f.shape} / {p.shape}")
        if np.any(p < 0) or np.any(p >= 2 * np.pi):
            raise InputError("phases must lie in [0, 2*pi)")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "phases", p)

    @property
    def num_columns(self):
        return self.frequencies.shape[0]

    @property
    def num_functions(self):
        return self.frequencies.shape[1]

    def lift(self, Z, columns=None):
        """Return the lifted tensor of shape (n, len(columns), num_functions)."""
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != self.num_columns:
            raise InputError(f"expected {self.num_columns} columns, got {Z.shape}")
        if columns is None:
            columns = np.arange(self.num_columns)
        cols = Z[:, columns]
        return math.sqrt(2.0) * np.cos(cols[:, :, None] * self.frequencies[columns]
                                       + self.phases[columns])


def sample_column_maps(num_columns, num_functions=5, seed=0):
    if num_columns < 1 or num_functions < 1:
        raise InputError("num_columns and num_functions must be positive")
    rng = np.random.default_rng(seed)
    freqs = rng.standard_normal((num_columns, num_functions))
    phases = np.mod(rng.uniform(0, 2 * np.pi, (num_columns, num_functions)), 2 * np.pi)
    return ColumnFeatureMaps(freqs, phases)


@dataclass(frozen=True, eq=False)
class DependenceEstimate:
    pair_norms: np.ndarray
    total: float


@dataclass(frozen=True)
class DecorrelConfig:
    num_steps: int = 100
    step_size: float = 0.1
    seed: int = 0
    max_pairs: int = 2048
    max_halvings: int = 40


def _weights_vector(weights, n):
    w = weights.w if isinstance(weights, SampleWeights) else np.asarray(weights, float)
    if w.shape != (n,):
        raise InputError(f"expected {n} weights, got {w.shape}")
    return w


def _center_weighted(F, w):
    WF = w.reshape((-1,) + (1,) * (F.ndim - 1)) * F
    return WF - WF.mean(axis=0)


def weighted_cross_covariance(a_feats, b_feats, weights):
    """``(1/(n-1)) sum_i (w_i a_i - mean(w a))^T (w_i b_i - mean(w b))``."""
    a = np.asarray(a_feats, dtype=np.float64)
    b = np.asarray(b_feats, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    n = a.shape[0]
    if b.shape[0] != n:
        raise InputError(f"row count mismatch: {a.shape[0]} vs {b.shape[0]}")
    if n < 2:
        raise InputError("need at least two samples for a covariance")
    w = _weights_vector(weights, n)
    return _center_weighted(a, w).T @ _center_weighted(b, w) / (n - 1)


def _constant_columns(Z):
    return np.ptp(Z, axis=0) == 0.0


def column_dependence(Z, col_i, col_j, maps, weights):
    Z = np.asarray(Z, dtype=np.float64)
    if col_i == col_j:
        raise InputError("column_dependence is undefined for i == j")
    m = Z.shape[1]
    if not (0 <= col_i < m and 0 <= col_j < m):
        raise InputError(f"column index out of range for {m} columns")
    if np.ptp(Z[:, col_i]) == 0.0 or np.ptp(Z[:, col_j]) == 0.0:
        return 0.0
    F = maps.lift(Z, [col_i, col_j])
    S = weighted_cross_covariance(F[:, 0], F[:, 1], weights)
    return float(np.sum(S * S))


def _flat_lift(Z, maps):
    F = maps.lift(Z)
    F[:, _constant_columns(Z), :] = 0.0
    return F


def _pair_norms_dense(F, w):
    n, m, p = F.shape
    Ft = _center_weighted(F, w).reshape(n, m * p)
    out = np.zeros((m, m))
    for s in range(0, m, _BLOCK):
        a = Ft[:, s * p:min(m, s + _BLOCK) * p]
        for t in range(s, m, _BLOCK):
            b = Ft[:, t * p:min(m, t + _BLOCK) * p]
            C = a.T @ b / (n - 1)
            mb, nb = a.shape[1] // p, b.shape[1] // p
            blk = np.einsum("iajb->ij", (C * C).reshape(mb, p, nb, p))
            out[s:s + mb, t:t + nb] = blk
            out[t:t + nb, s:s + mb] = blk.T
    np.fill_diagonal(out, 0.0)
    return out


def total_dependence(Z, maps, weights):
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise InputError("total_dependence needs at least two columns")
    if Z.shape[0] < 2:
        raise InputError("total_dependence needs at least two samples")
    w = _weights_vector(weights, Z.shape[0])
    pair_norms = _pair_norms_dense(_flat_lift(Z, maps), w)
    return DependenceEstimate(pair_norms, float(np.triu(pair_norms, 1).sum()))


def _dense_objective(F2, w, p, with_grad):
    # F2 is (n, m*p); f = sum_{i<j} |S_ij|^2 = 0.5 * |C - blockdiag(C)|^2
    n, K = F2.shape
    c = 1.0 / (n - 1)
    Ft = w[:, None] * F2
    Ft -= Ft.mean(axis=0)
    C = c * (Ft.T @ Ft)
    m = K // p
    M = C.reshape(m, p, m, p).copy()
    M[np.arange(m), :, np.arange(m), :] = 0.0
    M = M.reshape(K, K)
    f = 0.5 * float(np.sum(M * M))
    if not with_grad:
        return f, None
    grad = 2.0 * c * np.einsum("nk,nk->n", F2 @ M, Ft)
    return f, grad


def _pair_objective(FT, w, pairs, with_grad):
    # FT is the lifted tensor laid out (m, n, p) so pair slices are contiguous
    n = FT.shape[1]
    c = 1.0 / (n - 1)
    Ft = FT * w[None, :, None]
    Ft -= Ft.mean(axis=1, keepdims=True)
    f = 0.0
    grad = np.zeros(n) if with_grad else None
    I, J = pairs
    for s in range(0, I.size, _PAIR_CHUNK):
        i, j = I[s:s + _PAIR_CHUNK], J[s:s + _PAIR_CHUNK]
        Ai, Bj = Ft[i], Ft[j]
        S = c * np.matmul(Ai.transpose(0, 2, 1), Bj)
        f += float(np.sum(S * S))
        if with_grad:
            grad += 2.0 * c * (np.einsum("qnb,qnb->n", np.matmul(FT[i], S), Bj)
                               + np.einsum("qna,qna->n", Ai,
                                           np.matmul(FT[j], S.transpose(0, 2, 1))))
    return f, grad


def dependence_objective(Z, maps, w, pairs=None):
    """Objective and gradient in ``w``; ``pairs`` restricts the sum to (I, J)."""
    Z = np.asarray(Z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    F = _flat_lift(Z, maps)
    if pairs is None:
        n, m, p = F.shape
        return _dense_objective(F.reshape(n, m * p), w, p, True)
    return _pair_objective(np.ascontiguousarray(F.transpose(1, 0, 2)), w, pairs, True)


def project_to_scaled_simplex(v, total):
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}`` (sort based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    x = np.maximum(v - theta, 0.0)
    # renormalize away rounding drift; support is unchanged
    return x * (total / x.sum())


def _sample_pairs(rng, m, count):
    total = m * (m - 1) // 2
    if count >= total:
        I, J = np.triu_indices(m, 1)
        return I, J
    flat = rng.choice(total, size=count, replace=False)
    flat.sort()
    I, J = np.triu_indices(m, 1)
    return I[flat], J[flat]


def optimize_sample_weights(Z, maps, config=None):
    """Projected gradient descent on the pairwise dependence objective.

    Starts from uniform weights. Each step tries twice the previously
    accepted step (capped at ``config.step_size``) and halves it until the
    objective does not increase. With more than
    ``DENSE_PAIR_LIMIT`` columns each step works on a seeded random subset
    of ``config.max_pairs`` pairs. The returned weights never have a larger
    full objective than the uniform start.
    """
    config = config or DecorrelConfig()
    Z = np.asarray(Z, dtype=np.float64)
    n, m = Z.shape
    if n < 2:
        raise InputError("optimize_sample_weights needs n >= 2")
    if m < 2:
        raise InputError("optimize_sample_weights needs at least two columns")
    if config.num_steps < 1:
        raise InputError("num_steps must be >= 1")
    rng = np.random.default_rng(config.seed)
    F = _flat_lift(Z, maps)
    p = F.shape[2]
    F2 = F.reshape(n, m * p)
    subsample = m > DENSE_PAIR_LIMIT
    FT = np.ascontiguousarray(F.transpose(1, 0, 2)) if subsample else None
    total_pairs = m * (m - 1) // 2

    def evaluate(w, pairs, with_grad):
        if pairs is None:
            return _dense_objective(F2, w, p, with_grad)
        f, g = _pair_objective(FT, w, pairs, with_grad)
        scale = total_pairs / pairs[0].size
        return f * scale, (None if g is None else g * scale)

    w = np.ones(n)
    f_uniform = evaluate(w, None, False)[0] if not subsample else None
    trace = [(0, f_uniform if f_uniform is not None else float("nan"), 0.0)]
    eta = config.step_size
    for step in range(1, config.num_steps + 1):
        pairs = _sample_pairs(rng, m, config.max_pairs) if subsample else None
        f, g = evaluate(w, pairs, True)
        eta = min(config.step_size, 2.0 * eta)
        for _ in range(config.max_halvings):
            cand = project_to_scaled_simplex(w - eta * g, n)
            f_new = evaluate(cand, pairs, False)[0]
            if f_new <= f:
                break
            eta *= 0.5
        else:
            logger.debug("no descent step found at step %d", step)
            eta = config.step_size
            continue
        w = cand
        trace.append((step, f_new, eta))

    if subsample:
        f_final = _pair_norms_total(F, w)
        f_uniform = _pair_norms_total(F, np.ones(n))
        trace[0] = (0, f_uniform, 0.0)
        if f_final > f_uniform:
            logger.info("subsampled descent ended above the uniform objective; restarting at uniform")
            w = np.ones(n)
    return SampleWeights(w, trace=tuple(trace))


def _pair_norms_total(F, w):
    return float(np.triu(_pair_norms_dense(F, w), 1).sum())
