from __future__ import annotations

import numpy as np

from subtrack.core_model import Frame, ObservationMask


def orthonormal(rng, n: int, r: int) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return Q


def full_frame(values) -> Frame:
    values = np.asarray(values, dtype=float)
    return Frame(values, ObservationMask.full(values.size))


def projector(M: np.ndarray) -> np.ndarray:
    """P = M (M^T M)^-1 M^T via least squares."""
    X, *_ = np.linalg.lstsq(M, np.eye(M.shape[0]), rcond=None)
    return M @ X
