# Path: subtrack/inner_solver.py
# Purpose: Per-frame LASSO fit of (a, s, e) against a fixed basis by
#          alternating exact block updates.
# Version: 0.4.0

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from .core_model import (
    FitResult,
    Frame,
    SubspaceBasis,
    project_complement,
    project_mask,
    soft_threshold,
)
from .errors import DimensionMismatchError, RankDeficiencyError
from .params import Hyperparams

log = logging.getLogger("subtrack.inner")


class PseudoInverse:
    """Thin-SVD factorization of U, reused for every a-step of one frame."""

    def __init__(self, W: np.ndarray, sigma: np.ndarray, Vt: np.ndarray):
        self._W = W
        self._sigma = sigma
        self._Vt = Vt

    @classmethod
    def of(cls, U: SubspaceBasis, rank_tol: float = 1e-10) -> "PseudoInverse":
        W, sigma, Vt = linalg.svd(U.matrix, full_matrices=False)
        if not sigma[-1] > rank_tol * sigma[0]:
            raise RankDeficiencyError(sigma[-1], sigma[0], rank_tol)
        return cls(W, sigma, Vt)

    @property
    def n(self) -> int:
        return self._W.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """argmin_a ||U a - v||_2"""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise DimensionMismatchError("vector length", self.n, v.shape)
        return self._Vt.T @ ((self._W.T @ v) / self._sigma)


def least_squares_apply(U: SubspaceBasis, v: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    return PseudoInverse.of(U, rank_tol).apply(v)


@dataclass
class InnerSolveReport:
    iterations: int = 0
    loss_trace: List[float] = field(default_factory=list)
    converged: bool = False
    last_da: float = float("nan")
    last_ds: float = float("nan")


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(1.0, np.linalg.norm(old)))


def solve_fit(
    U: SubspaceBasis,
    b: Frame,
    params: Hyperparams,
    warm: Optional[FitResult] = None,
    pinv: Optional[PseudoInverse] = None,
) -> Tuple[FitResult, InnerSolveReport]:
    """Minimize 1/2||b - (U a + s + e)||^2 + lam||s||_1 with Omega(e) = 0.

    Each sweep runs the a-step (least squares), the e-step (fill the
    unobserved entries with -U a) and the s-step (soft threshold) in that
    order. Stops when both a and s move by less than inner_tol relative to
    max(1, norm), or after inner_max_iters sweeps.
    """
    n = b.ambient_dim
    if U.n != n:
        raise DimensionMismatchError("basis rows", n, U.n)
    lam = params.lambda_for(n)
    pinv = pinv or PseudoInverse.of(U, params.rank_tol)
    mask = b.mask
    Um = U.matrix

    if warm is not None and warm.outliers.size == n and warm.coeffs.size == U.r:
        a = np.array(warm.coeffs, dtype=float)
        s = project_mask(warm.outliers, mask)
        e = project_complement(warm.completion, mask)
    else:
        a = np.zeros(U.r)
        s = np.zeros(n)
        e = np.zeros(n)

    report = InnerSolveReport()
    for k in range(1, params.inner_max_iters + 1):
        a_prev, s_prev = a, s
        a = pinv.apply(b.values - s - e)
        Ua = Um @ a
        e = -project_complement(Ua, mask)
        s = soft_threshold(b.values - Ua - e, lam)

        res = b.values - Ua - s - e
        report.loss_trace.append(float(0.5 * (res @ res) + lam * np.abs(s).sum()))
        report.iterations = k
        report.last_da = _rel_change(a, a_prev)
        report.last_ds = _rel_change(s, s_prev)
        if report.last_da < params.inner_tol and report.last_ds < params.inner_tol:
            report.converged = True
            break

    if not report.converged:
        log.debug("inner solve hit %d iterations (da=%.2e ds=%.2e)",
                  report.iterations, report.last_da, report.last_ds)
    fit = FitResult(a, s, e, iterations=report.iterations, final_loss=report.loss_trace[-1])
    return fit, report
