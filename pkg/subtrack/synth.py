# Path: subtrack/synth.py
# Purpose: Seeded synthetic streams b_t = Omega_t(U_t a_t + s_t) with ground truth.
# Version: 0.4.0

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .core_model import Frame, ObservationMask, SubspaceBasis, project_mask
from .subspace_update import reorthonormalize
from .tracker import MaskedMatrix

log = logging.getLogger("subtrack.synth")


class Scenario(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n: int = Field(100, ge=2)
    r: int = Field(5, ge=1)
    num_frames: int = Field(500, ge=0)
    obs_fraction: float = Field(1.0, gt=0.0, le=1.0)
    outlier_fraction: float = Field(0.0, ge=0.0, lt=1.0)
    outlier_scale: float = Field(1.0, ge=0.0)
    noise_sigma: float = Field(0.0, ge=0.0)
    rotation_rate: float = Field(0.0, ge=0.0)
    rotation_start: int = Field(0, ge=0)  # frames held stationary before rotation begins
    seed: int = 0

    @model_validator(mode="after")
    def _check_rank(self) -> "Scenario":
        if self.r >= self.n:
            raise ValueError(f"r ({self.r}) must be smaller than n ({self.n})")
        return self

    @property
    def observed_count(self) -> int:
        return _round_half_up(self.obs_fraction * self.n)

    @property
    def outlier_count(self) -> int:
        return _round_half_up(self.outlier_fraction * self.n)

    @property
    def stationary(self) -> bool:
        return self.rotation_rate == 0.0 or self.rotation_start >= self.num_frames


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    bases: List[np.ndarray]      # distinct snapshots, orthonormal n x r
    basis_index: List[int]       # frame -> snapshot
    coeffs: np.ndarray           # frames x r
    outlier_supports: List[np.ndarray]
    masks: List[ObservationMask]

    @property
    def num_frames(self) -> int:
        return len(self.basis_index)

    def basis_at(self, t: int) -> np.ndarray:
        return self.bases[self.basis_index[t]]

    def clean_frame(self, t: int) -> np.ndarray:
        return self.basis_at(t) @ self.coeffs[t]

    @property
    def clean_frames(self) -> np.ndarray:
        if not self.basis_index:
            return np.zeros((0, self.bases[0].shape[0]))
        return np.vstack([self.clean_frame(t) for t in range(self.num_frames)])

    def visible_outlier_support(self, t: int) -> np.ndarray:
        return np.intersect1d(self.outlier_supports[t], self.masks[t].indices)


def _orthonormal(M: np.ndarray) -> np.ndarray:
    return reorthonormalize(SubspaceBasis(M)).matrix


def generate(scenario: Scenario) -> Tuple[List[Frame], GroundTruth]:
    """Draw a stream per the scenario. Same scenario, same stream, bit for bit.

    Outliers and noise are added before masking, so unobserved outliers are
    invisible. The rotating case perturbs the basis by rotation_rate * G_t
    (G_t standard Gaussian) and re-orthonormalizes.
    """
    sc = scenario
    n, r = sc.n, sc.r
    if sc.obs_fraction * n < r:
        log.warning("obs_fraction*n = %.1f < r = %d: frames may not identify the subspace",
                    sc.obs_fraction * n, r)
    rng = np.random.default_rng(sc.seed)
    U = _orthonormal(rng.standard_normal((n, r)))
    bases = [U]
    basis_index: List[int] = []
    coeffs = np.zeros((sc.num_frames, r))
    supports: List[np.ndarray] = []
    masks: List[ObservationMask] = []
    frames: List[Frame] = []
    k_out, k_obs = sc.outlier_count, sc.observed_count

    for t in range(sc.num_frames):
        if sc.rotation_rate > 0 and t > 0 and t >= sc.rotation_start:
            U = _orthonormal(U + sc.rotation_rate * rng.standard_normal((n, r)))
            bases.append(U)
        basis_index.append(len(bases) - 1)

        a = rng.standard_normal(r)
        support = np.sort(rng.choice(n, size=k_out, replace=False))
        s = np.zeros(n)
        s[support] = sc.outlier_scale * rng.standard_normal(k_out)
        noise = sc.noise_sigma * rng.standard_normal(n) if sc.noise_sigma > 0 else 0.0
        mask = ObservationMask(n, np.sort(rng.choice(n, size=k_obs, replace=False)))

        coeffs[t] = a
        supports.append(support)
        masks.append(mask)
        frames.append(Frame(project_mask(U @ a + s + noise, mask), mask))

    truth = GroundTruth(bases=bases, basis_index=basis_index, coeffs=coeffs,
                        outlier_supports=supports, masks=masks)
    log.info("generated %d frames n=%d r=%d seed=%d (%d basis snapshots)",
             sc.num_frames, n, r, sc.seed, len(bases))
    return frames, truth


def generate_matrix(scenario: Scenario) -> Tuple[MaskedMatrix, GroundTruth]:
    """Batch form: the stream's frames as the columns of an n x m table."""
    frames, truth = generate(scenario)
    return MaskedMatrix.from_frames(scenario.n, frames), truth
