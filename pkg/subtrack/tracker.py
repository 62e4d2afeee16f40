# Path: subtrack/tracker.py
# Purpose: Per-frame tracking loop (fit -> direction -> basis update -> step
#          size), stream folding, and the batch robust matrix completion mode.
# Version: 0.4.0

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core_model import FitResult, Frame, ObservationMask, SubspaceBasis, fit_residual
from .errors import DimensionMismatchError, InvalidArgumentError, InvariantViolationError, RankDeficiencyError
from .inner_solver import PseudoInverse, solve_fit
from .params import Hyperparams
from .subspace_update import (
    StepSizeState,
    apply_update,
    descent_direction,
    reorthonormalize,
    update_step_size,
)

log = logging.getLogger("subtrack.tracker")


@dataclass(frozen=True, eq=False)
class TrackerState:
    basis: SubspaceBasis
    step: StepSizeState
    frame_index: int
    params: Hyperparams
    last_fit: Optional[FitResult] = None

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def r(self) -> int:
        return self.basis.r


@dataclass(frozen=True, eq=False)
class FrameTrace:
    frame_index: int
    fit: FitResult
    mu_used: float
    eta: float
    inner_iterations: int
    residual_norm: float
    loss: float
    s_nnz: int
    cosine: Optional[float] = None
    skipped: bool = False
    rank_degraded: bool = False


def init_tracker(n: int, r: int, params: Hyperparams, seed: int) -> TrackerState:
    if not 1 <= r < n:
        raise InvalidArgumentError(f"need 1 <= r < n, got n={n} r={r}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, r))
    basis = reorthonormalize(SubspaceBasis(G), params.rank_tol)
    return TrackerState(basis=basis, step=StepSizeState.initial(params), frame_index=0,
                        params=params.resolved(n))


def _check_state(state: TrackerState) -> None:
    p = state.params
    lo, hi = p.mu_bounds
    st = state.step
    if not (p.eta_low <= st.eta <= p.eta_max):
        raise InvariantViolationError(state.frame_index, f"eta {st.eta} outside [{p.eta_low}, {p.eta_max}]")
    if not (lo * (1 - 1e-12) <= st.mu <= hi * (1 + 1e-12)):
        raise InvariantViolationError(state.frame_index, f"mu {st.mu} outside [{lo}, {hi}]")


def process_frame(state: TrackerState, b: Frame) -> Tuple[TrackerState, FrameTrace]:
    """Advance the tracker by one measurement.

    The fit and the descent direction use U_{t-1}; the update uses the mu
    held before this frame, after which mu is refreshed from the new
    direction.
    """
    p = state.params
    if b.ambient_dim != state.n:
        raise DimensionMismatchError("frame length", state.n, b.ambient_dim)
    t = state.frame_index
    U = state.basis

    try:
        pinv = PseudoInverse.of(U, p.rank_tol)
    except RankDeficiencyError as e:
        if not p.skip_on_rank_fail:
            raise
        log.warning("frame %d skipped: %s", t, e)
        fit = FitResult.zeros(state.n, state.r)
        trace = FrameTrace(t, fit, state.step.mu, state.step.eta, 0, float("nan"), float("nan"), 0,
                           skipped=True, rank_degraded=True)
        return replace(state, frame_index=t + 1), trace

    warm = state.last_fit if p.warm_start else None
    fit, report = solve_fit(U, b, p, warm=warm, pinv=pinv)
    residual = fit_residual(U, fit, b)
    D = descent_direction(U, fit, b)

    mu_used = state.step.mu
    new_U = apply_update(U, D, mu_used, p.rank_tol)
    step = update_step_size(state.step, D, p)
    if p.reorthonormalize_every and (t + 1) % p.reorthonormalize_every == 0:
        new_U = reorthonormalize(new_U, p.rank_tol)
    rank_degraded = not new_U.is_full_rank(p.rank_tol)

    new_state = TrackerState(basis=new_U, step=step, frame_index=t + 1, params=p, last_fit=fit)
    if __debug__:
        _check_state(new_state)
    trace = FrameTrace(
        frame_index=t,
        fit=fit,
        mu_used=mu_used,
        eta=step.eta,
        inner_iterations=report.iterations,
        residual_norm=float(np.linalg.norm(residual)),
        loss=fit.final_loss,
        s_nnz=int(np.count_nonzero(fit.outliers)),
        cosine=step.last_cosine,
        rank_degraded=rank_degraded,
    )
    return new_state, trace


def run_stream(
    state: TrackerState,
    frames: Iterable[Frame],
    on_trace: Optional[Callable[[TrackerState, FrameTrace], None]] = None,
) -> Tuple[TrackerState, List[FrameTrace]]:
    """Fold process_frame over frames in order. The result depends on order."""
    traces: List[FrameTrace] = []
    for b in frames:
        state, tr = process_frame(state, b)
        traces.append(tr)
        if on_trace is not None:
            on_trace(state, tr)
    return state, traces


@dataclass(frozen=True, eq=False)
class MaskedMatrix:
    """n x m measurements with a boolean table of observed entries."""

    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.observed, dtype=bool)
        if v.ndim != 2 or v.shape != m.shape:
            raise DimensionMismatchError("observation table shape", v.shape, m.shape)
        object.__setattr__(self, "values", np.where(m, v, 0.0))
        object.__setattr__(self, "observed", m)

    @classmethod
    def from_frames(cls, n: int, frames: Sequence[Frame]) -> "MaskedMatrix":
        if not frames:
            return cls(np.zeros((n, 0)), np.zeros((n, 0), dtype=bool))
        return cls(np.column_stack([f.values for f in frames]),
                   np.column_stack([f.mask.as_bool() for f in frames]))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def columns(self) -> List[Frame]:
        return [Frame(self.values[:, j], ObservationMask.from_bool(self.observed[:, j]))
                for j in range(self.shape[1])]


@dataclass(frozen=True, eq=False)
class BatchResult:
    basis: SubspaceBasis
    coeffs: np.ndarray       # r x m
    outliers: np.ndarray     # n x m
    completion: np.ndarray   # n x m
    state: TrackerState
    traces: List[FrameTrace] = field(default_factory=list)

    def lowrank(self) -> np.ndarray:
        return self.basis.matrix @ self.coeffs

    def reconstruction(self) -> np.ndarray:
        return self.lowrank() + self.outliers


def batch_complete(
    B: MaskedMatrix,
    r: int,
    params: Hyperparams,
    epochs: int,
    seed: int,
) -> BatchResult:
    """Robust matrix completion by cycling the online tracker over columns.

    State carries across epochs; the columns are visited in the same order
    every epoch. A final fit-only pass against the frozen basis yields A and S.
    """
    if epochs < 1:
        raise InvalidArgumentError(f"epochs must be >= 1, got {epochs}")
    n, m = B.shape
    state = init_tracker(n, r, params, seed)
    cols = B.columns()
    traces: List[FrameTrace] = []
    for epoch in range(epochs):
        state, tr = run_stream(state, cols)
        traces.extend(tr)
        if cols:
            log.info("epoch %d/%d: mean residual %.3e mu=%.4f", epoch + 1, epochs,
                     float(np.mean([t.residual_norm for t in tr])), state.step.mu)

    A = np.zeros((r, m))
    S = np.zeros((n, m))
    E = np.zeros((n, m))
    if m:
        pinv = PseudoInverse.of(state.basis, state.params.rank_tol)
        for j, col in enumerate(cols):
            fit, _ = solve_fit(state.basis, col, state.params, pinv=pinv)
            A[:, j] = fit.coeffs
            S[:, j] = fit.outliers
            E[:, j] = fit.completion
    return BatchResult(basis=state.basis, coeffs=A, outliers=S, completion=E, state=state, traces=traces)
