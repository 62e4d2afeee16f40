# Path: subtrack/core_model.py
# Purpose: Frame/mask/basis value types, the observation projections, soft
#          thresholding and the per-frame robust loss.
# Version: 0.4.0

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .errors import DimensionMismatchError, InvalidArgumentError


def _frozen(a: np.ndarray) -> np.ndarray:
    # C order so products match arrays read back from disk bit for bit
    a = np.array(a, copy=True, order="C")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ObservationMask:
    """Sorted indices of the observed entries of an n-vector."""

    ambient_dim: int
    indices: np.ndarray

    def __post_init__(self):
        n = int(self.ambient_dim)
        if n < 1:
            raise InvalidArgumentError(f"ambient_dim must be positive, got {self.ambient_dim}")
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size:
            if idx[0] < 0 or idx[-1] >= n:
                raise InvalidArgumentError(f"mask indices must lie in [0, {n})")
            if np.any(np.diff(idx) <= 0):
                raise InvalidArgumentError("mask indices must be strictly increasing")
        object.__setattr__(self, "ambient_dim", n)
        object.__setattr__(self, "indices", _frozen(idx))

    @classmethod
    def full(cls, n: int) -> "ObservationMask":
        return cls(n, np.arange(n))

    @classmethod
    def from_indices(cls, n: int, indices: Iterable[int]) -> "ObservationMask":
        return cls(n, np.unique(np.fromiter(indices, dtype=np.int64)))

    @classmethod
    def from_bool(cls, flags: Sequence[bool]) -> "ObservationMask":
        flags = np.asarray(flags, dtype=bool)
        return cls(flags.size, np.flatnonzero(flags))

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def as_bool(self) -> np.ndarray:
        out = np.zeros(self.ambient_dim, dtype=bool)
        out[self.indices] = True
        return out

    def complement(self) -> "ObservationMask":
        return ObservationMask(self.ambient_dim, np.flatnonzero(~self.as_bool()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ObservationMask):
            return NotImplemented
        return self.ambient_dim == other.ambient_dim and np.array_equal(self.indices, other.indices)

    def __hash__(self) -> int:
        return hash((self.ambient_dim, self.indices.tobytes()))


@dataclass(frozen=True, eq=False)
class Frame:
    """One measurement b_t, stored dense with zeros outside its mask."""

    values: np.ndarray
    mask: ObservationMask

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != self.mask.ambient_dim:
            raise DimensionMismatchError("frame length", self.mask.ambient_dim, v.size)
        if np.any(v[~self.mask.as_bool()] != 0.0):
            raise InvalidArgumentError("frame has non-zero values outside its observation mask")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_observed(cls, mask: ObservationMask, observed: Sequence[float]) -> "Frame":
        observed = np.asarray(observed, dtype=float).reshape(-1)
        if observed.size != mask.size:
            raise DimensionMismatchError("observed values", mask.size, observed.size)
        v = np.zeros(mask.ambient_dim)
        v[mask.indices] = observed
        return cls(v, mask)

    @property
    def ambient_dim(self) -> int:
        return self.mask.ambient_dim

    def observed(self) -> np.ndarray:
        return self.values[self.mask.indices]


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """n x r matrix U whose columns span the tracked subspace."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[1] < 1 or m.shape[0] < m.shape[1]:
            raise InvalidArgumentError(f"basis must be n x r with n >= r >= 1, got shape {m.shape}")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def r(self) -> int:
        return self.matrix.shape[1]

    def singular_values(self) -> np.ndarray:
        return linalg.svd(self.matrix, compute_uv=False)

    def is_full_rank(self, rank_tol: float = 1e-10) -> bool:
        sv = self.singular_values()
        return bool(sv[-1] > rank_tol * sv[0])


@dataclass(frozen=True, eq=False)
class FitResult:
    coeffs: np.ndarray      # a_t
    outliers: np.ndarray    # s_t, supported on the mask
    completion: np.ndarray  # e_t, supported on the complement
    iterations: int = 0
    final_loss: float = float("nan")

    def __post_init__(self):
        for name in ("coeffs", "outliers", "completion"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float).reshape(-1)))
        if self.outliers.size != self.completion.size:
            raise DimensionMismatchError("completion length", self.outliers.size, self.completion.size)

    @classmethod
    def zeros(cls, n: int, r: int) -> "FitResult":
        return cls(np.zeros(r), np.zeros(n), np.zeros(n))


def _check_len(v: np.ndarray, mask: ObservationMask) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != mask.ambient_dim:
        raise DimensionMismatchError("vector length", mask.ambient_dim, v.shape)
    return v


def project_mask(v: np.ndarray, mask: ObservationMask) -> np.ndarray:
    v = _check_len(v, mask)
    out = np.zeros_like(v)
    out[mask.indices] = v[mask.indices]
    return out


def project_complement(v: np.ndarray, mask: ObservationMask) -> np.ndarray:
    v = _check_len(v, mask)
    return v - project_mask(v, mask)


def soft_threshold(v: np.ndarray, tau: float) -> np.ndarray:
    """Proximal map of tau*||.||_1."""
    if tau < 0:
        raise InvalidArgumentError(f"threshold must be non-negative, got {tau}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def fit_residual(U: SubspaceBasis, fit: FitResult, b: Frame) -> np.ndarray:
    """b - (U a + s + e)."""
    if U.n != b.ambient_dim:
        raise DimensionMismatchError("basis rows", b.ambient_dim, U.n)
    if fit.coeffs.size != U.r:
        raise DimensionMismatchError("coefficient length", U.r, fit.coeffs.size)
    if fit.outliers.size != U.n:
        raise DimensionMismatchError("outlier length", U.n, fit.outliers.size)
    return b.values - (U.matrix @ fit.coeffs + fit.outliers + fit.completion)


def loss_value(U: SubspaceBasis, fit: FitResult, b: Frame, mu: float, lam: float) -> float:
    """(mu/2)||b - (U a + s + e)||^2 + lam ||s||_1"""
    if mu <= 0:
        raise InvalidArgumentError(f"mu must be positive, got {mu}")
    if lam < 0:
        raise InvalidArgumentError(f"lambda must be non-negative, got {lam}")
    res = fit_residual(U, fit, b)
    return float(0.5 * mu * (res @ res) + lam * np.abs(fit.outliers).sum())
