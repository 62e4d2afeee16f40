# Path: subtrack/subspace_update.py
# Purpose: Rank-one basis update along the descent direction and the
#          adaptive step-size controller.
# Version: 0.4.0

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from .core_model import FitResult, Frame, SubspaceBasis, fit_residual
from .errors import DimensionMismatchError, InvalidArgumentError, RankDeficiencyError
from .params import Hyperparams

log = logging.getLogger("subtrack.update")


def descent_direction(U: SubspaceBasis, fit: FitResult, b: Frame) -> np.ndarray:
    """residual * a^T / (1 + a^T a), residual taken against the pre-update U."""
    res = fit_residual(U, fit, b)
    a = fit.coeffs
    return np.outer(res, a) / (1.0 + a @ a)


def apply_update(U: SubspaceBasis, D: np.ndarray, mu: float, rank_tol: float = 1e-10) -> SubspaceBasis:
    if not mu > 0:
        raise InvalidArgumentError(f"mu must be positive, got {mu}")
    D = np.asarray(D, dtype=float)
    if D.shape != U.matrix.shape:
        raise DimensionMismatchError("direction shape", U.matrix.shape, D.shape)
    out = SubspaceBasis(U.matrix + D / mu)
    if not out.is_full_rank(rank_tol):
        log.warning("updated basis lost numerical rank (rank_tol=%.1e)", rank_tol)
    return out


def surrogate_value(
    U: np.ndarray,
    U_prev: SubspaceBasis,
    fit: FitResult,
    b: Frame,
    mu: float,
    lam: float,
) -> float:
    """Quadratic model Q(U) of the loss around U_prev for fixed (a, s, e)."""
    U = np.asarray(U, dtype=float)
    a = fit.coeffs
    res = fit_residual(U_prev, fit, b)
    base = 0.5 * (res @ res) + lam * np.abs(fit.outliers).sum()
    grad = -np.outer(res, a)
    dU = U - U_prev.matrix
    curvature = np.eye(a.size) + np.outer(a, a)
    return float(base + np.sum(grad * dU) + 0.5 * mu * np.trace(dU @ curvature @ dU.T))


def sigmoid(x: float, f: float = 1.0, slope: float = 10.0, mode: str = "default") -> float:
    """Step-size increment as a function of the direction cosine.

    default: -f + 2f/(1 + exp(-slope*x)); odd, increasing, range (-f, f).
    paper-literal: f + 2f/(1 + exp(slope*x)); positive everywhere, larger for x < 0.
    """
    if f <= 0 or slope <= 0:
        raise InvalidArgumentError(f"sigmoid needs f > 0 and slope > 0 (got f={f}, slope={slope})")
    if mode == "default":
        return float(-f + 2.0 * f * expit(slope * x))
    if mode == "paper-literal":
        return float(f + 2.0 * f * expit(-slope * x))
    raise InvalidArgumentError(f"unknown sigmoid mode {mode!r}")


@dataclass(frozen=True, eq=False)
class StepSizeState:
    mu: float
    eta: float
    prev_direction: Optional[np.ndarray] = None
    last_cosine: Optional[float] = None

    @classmethod
    def initial(cls, params: Hyperparams) -> "StepSizeState":
        eta = params.eta_init
        return cls(mu=params.C / (1.0 + eta), eta=eta)


def _clamp(x: float, lo: float, hi: float) -> float:
    return min(hi, max(lo, x))


def update_step_size(state: StepSizeState, D: np.ndarray, params: Hyperparams) -> StepSizeState:
    D = np.array(D, dtype=float, copy=True)
    D.flags.writeable = False
    prev = state.prev_direction
    cosine = None
    increment = 0.0
    if prev is not None:
        denom = np.linalg.norm(prev) * np.linalg.norm(D)
        # zero direction: cosine undefined, no increment
        if denom > 0:
            cosine = float(np.clip(np.sum(prev * D) / denom, -1.0, 1.0))
            increment = sigmoid(cosine, params.f, params.sigmoid_slope, params.sigmoid_mode)
    eta = _clamp(state.eta + increment, params.eta_low, params.eta_max)
    # a zero direction is not remembered; the next cosine uses the last non-zero one
    keep = D if np.any(D) else prev
    return StepSizeState(mu=params.C / (1.0 + eta), eta=eta, prev_direction=keep, last_cosine=cosine)


def reorthonormalize(U: SubspaceBasis, rank_tol: float = 1e-10) -> SubspaceBasis:
    """Orthonormal basis of the same column span (thin QR, positive diag(R))."""
    if not U.is_full_rank(rank_tol):
        sv = U.singular_values()
        raise RankDeficiencyError(sv[-1], sv[0], rank_tol)
    Q, R = linalg.qr(U.matrix, mode="economic")
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return SubspaceBasis(Q * signs)
