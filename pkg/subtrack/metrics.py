# Path: subtrack/metrics.py
# Purpose: Subspace distance, reconstruction NMSE, outlier support scores and
#          the per-run EvalReport.
# Version: 0.4.0

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .core_model import SubspaceBasis
from .errors import DimensionMismatchError, InvalidArgumentError
from .subspace_update import reorthonormalize
from .synth import GroundTruth

log = logging.getLogger("subtrack.metrics")

DEFAULT_OUTLIER_THRESHOLD = 1e-6


def subspace_distance(U: SubspaceBasis, V: SubspaceBasis) -> float:
    """sqrt((r - ||Qu^T Qv||_F^2) / r): 0 for equal spans, 1 for orthogonal ones."""
    if U.matrix.shape != V.matrix.shape:
        raise DimensionMismatchError("basis shape", U.matrix.shape, V.matrix.shape)
    Qu = reorthonormalize(U).matrix
    Qv = reorthonormalize(V).matrix
    # ||Qv - Qu Qu^T Qv||_F^2 equals r - ||Qu^T Qv||_F^2 without the cancellation
    leftover = Qv - Qu @ (Qu.T @ Qv)
    return min(1.0, math.sqrt(float(np.sum(leftover ** 2)) / U.r))


class NmseScore(NamedTuple):
    value: float
    degenerate: bool


def recon_nmse(estimate: np.ndarray, truth: np.ndarray) -> NmseScore:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise DimensionMismatchError("estimate shape", truth.shape, estimate.shape)
    err = float(np.sum((estimate - truth) ** 2))
    denom = float(np.sum(truth ** 2))
    if denom == 0.0:
        log.warning("recon_nmse: zero reference, reporting raw squared error")
        return NmseScore(err, True)
    return NmseScore(err / denom, False)


def outlier_support_scores(
    s_hat: np.ndarray,
    true_support: Sequence[int],
    threshold: float = DEFAULT_OUTLIER_THRESHOLD,
) -> Tuple[float, float, float]:
    """(precision, recall, f1) of {i: |s_hat[i]| > threshold} against true_support.

    Empty predictions have precision 1; an empty truth has recall 1.
    """
    if not threshold > 0:
        raise InvalidArgumentError(f"threshold must be positive, got {threshold}")
    predicted = set(np.flatnonzero(np.abs(np.asarray(s_hat, dtype=float)) > threshold).tolist())
    truth = {int(i) for i in true_support}
    hits = len(predicted & truth)
    precision = hits / len(predicted) if predicted else 1.0
    recall = hits / len(truth) if truth else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


@dataclass(frozen=True, eq=False)
class FrameEstimate:
    """What one tracked frame leaves behind for evaluation."""

    t: int
    coeffs: np.ndarray
    outliers: np.ndarray


def _summary(series: Sequence[Optional[float]]) -> Dict[str, Optional[float]]:
    vals = [v for v in series if v is not None]
    if not vals:
        return {"mean": None, "final": None, "max": None}
    return {"mean": float(np.mean(vals)), "final": float(vals[-1]), "max": float(np.max(vals))}


@dataclass
class EvalReport:
    subspace_distance_series: List[Optional[float]] = field(default_factory=list)
    recon_nmse_series: List[Optional[float]] = field(default_factory=list)
    outlier_precision_series: List[float] = field(default_factory=list)
    outlier_recall_series: List[float] = field(default_factory=list)
    outlier_f1_series: List[float] = field(default_factory=list)
    config: Dict = field(default_factory=dict)

    def summary(self) -> Dict[str, Dict[str, Optional[float]]]:
        return {
            "subspace_distance": _summary(self.subspace_distance_series),
            "recon_nmse": _summary(self.recon_nmse_series),
            "outlier_precision": _summary(self.outlier_precision_series),
            "outlier_recall": _summary(self.outlier_recall_series),
            "outlier_f1": _summary(self.outlier_f1_series),
        }

    def to_dict(self) -> Dict:
        return {
            "config": self.config,
            "subspace_distance_series": self.subspace_distance_series,
            "recon_nmse_series": self.recon_nmse_series,
            "outlier_precision_series": self.outlier_precision_series,
            "outlier_recall_series": self.outlier_recall_series,
            "outlier_f1_series": self.outlier_f1_series,
            "summary": self.summary(),
        }


def evaluate(
    estimates: Sequence[FrameEstimate],
    snapshots: Mapping[int, np.ndarray],
    truth: GroundTruth,
    threshold: float = DEFAULT_OUTLIER_THRESHOLD,
    config: Optional[Dict] = None,
) -> EvalReport:
    """Score a tracked run against ground truth.

    snapshots maps a frame index t to the basis held after frame t; key -1 is
    the initial basis. Frame t is reconstructed with the basis after t-1 and
    its subspace distance is taken with the basis after t; frames whose basis
    was not snapshotted get None.
    """
    if len(estimates) > truth.num_frames:
        raise DimensionMismatchError("frames in ground truth", len(estimates), truth.num_frames)
    rep = EvalReport(config=dict(config or {}))
    for est in estimates:
        t = est.t
        true_basis = SubspaceBasis(truth.basis_at(t))
        after = snapshots.get(t)
        rep.subspace_distance_series.append(
            subspace_distance(SubspaceBasis(after), true_basis) if after is not None else None)
        before = snapshots.get(t - 1)
        if before is not None:
            rep.recon_nmse_series.append(recon_nmse(before @ est.coeffs, truth.clean_frame(t)).value)
        else:
            rep.recon_nmse_series.append(None)
        p, r, f1 = outlier_support_scores(est.outliers, truth.visible_outlier_support(t), threshold)
        rep.outlier_precision_series.append(p)
        rep.outlier_recall_series.append(r)
        rep.outlier_f1_series.append(f1)
    return rep
