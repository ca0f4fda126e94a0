"""Random Fourier features for the unit-bandwidth Gaussian kernel."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class RffMap:
    """Frozen projection ``z = normalization * cos(bandwidth * omega @ x + phi)``.

    ``omega`` has shape (num_features, input_dim).
    """

    omega: np.ndarray
    phi: np.ndarray
    normalization: float = SQRT2
    bandwidth: float = 1.0

    def __post_init__(self):
        omega = np.array(self.omega, dtype=np.float64)
        phi = np.array(self.phi, dtype=np.float64)
        if omega.ndim != 2 or phi.shape != (omega.shape[0],):
            raise InputError(f"incompatible omega {omega.shape} / phi {phi.shape}")
        if not np.all(np.isfinite(omega)):
            raise InputError("omega has non-finite entries")
        if np.any(phi < 0) or np.any(phi >= 2 * np.pi):
            raise InputError("phases must lie in [0, 2*pi)")
        if not self.normalization > 0 or not self.bandwidth > 0:
            raise InputError("normalization and bandwidth must be positive")
        omega.setflags(write=False)
        phi.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "normalization", float(self.normalization))
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def input_dim(self):
        return self.omega.shape[1]

    @property
    def num_features(self):
        return self.omega.shape[0]


def sample_rff_map(input_dim, num_features, seed, normalization=SQRT2, bandwidth=1.0):
    if input_dim < 1 or num_features < 1:
        raise InputError("input_dim and num_features must be positive")
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((num_features, input_dim))
    # uniform() draws from [0, 2pi) but rounding can land on 2pi exactly
    phi = np.mod(rng.uniform(0.0, 2 * np.pi, size=num_features), 2 * np.pi)
    return RffMap(omega, phi, normalization, bandwidth)


def rff_transform(rff_map, X):
    """Map rows of ``X`` (n, input_dim) to features of shape (n, num_features)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != rff_map.input_dim:
        raise InputError(
            f"expected {rff_map.input_dim} input columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError("input has non-finite entries")
    proj = X @ (rff_map.bandwidth * rff_map.omega).T
    return rff_map.normalization * np.cos(proj + rff_map.phi)


def kernel_estimate(rff_map, x, y):
    """Monte-Carlo estimate of ``exp(-|x - y|^2 / 2)`` (scaled by the bandwidth).

    Uses the sqrt(2) normalization with explicit 1/m averaging regardless of
    the map's own normalization.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != (rff_map.input_dim,) or y.shape != (rff_map.input_dim,):
        raise InputError("x and y must match the map's input dimension")
    w = rff_map.bandwidth * rff_map.omega
    zx = SQRT2 * np.cos(w @ x + rff_map.phi)
    zy = SQRT2 * np.cos(w @ y + rff_map.phi)
    # elementwise product is commutative, so the estimate is exactly symmetric
    return float(np.mean(zx * zy))
