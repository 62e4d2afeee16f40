# Path: subtrack/params.py
# Purpose: Validated tracker knobs (lambda, step-size controller, inner solver).
# Version: 0.4.0

from __future__ import annotations

import math
from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

SigmoidMode = Literal["default", "paper-literal"]


class Hyperparams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    # l1 weight on outliers; None -> 1/sqrt(n) once n is known
    lam: Optional[float] = Field(None, ge=0.0, alias="lambda")
    C: float = Field(1.0, gt=0.0)
    eta_max: float = Field(16.0, gt=0.0)
    eta_min: Optional[float] = Field(None, ge=0.0)  # None -> C
    eta0: Optional[float] = Field(None, ge=0.0)     # None -> eta_min
    f: float = Field(1.0, gt=0.0)
    sigmoid_slope: float = Field(10.0, gt=0.0)
    sigmoid_mode: SigmoidMode = "default"
    inner_tol: float = Field(1e-6, gt=0.0)
    inner_max_iters: int = Field(100, ge=1)
    reorthonormalize_every: int = Field(0, ge=0)
    rank_tol: float = Field(1e-10, gt=0.0, lt=1.0)
    warm_start: bool = False
    skip_on_rank_fail: bool = False

    @model_validator(mode="after")
    def _check_eta_interval(self) -> "Hyperparams":
        if not self.eta_max > self.C:
            raise ValueError(f"eta_max ({self.eta_max}) must exceed C ({self.C})")
        if not self.eta_low < self.eta_max:
            raise ValueError(f"eta_min ({self.eta_low}) must be below eta_max ({self.eta_max})")
        if not self.eta_low <= self.eta_init <= self.eta_max:
            raise ValueError(f"eta0 ({self.eta_init}) must lie in [{self.eta_low}, {self.eta_max}]")
        return self

    @property
    def eta_low(self) -> float:
        return self.C if self.eta_min is None else self.eta_min

    @property
    def eta_init(self) -> float:
        return self.eta_low if self.eta0 is None else self.eta0

    @property
    def mu_bounds(self) -> Tuple[float, float]:
        """Closed interval every mu_t stays in."""
        return self.C / (1.0 + self.eta_max), self.C / (1.0 + self.eta_low)

    def lambda_for(self, n: int) -> float:
        return self.lam if self.lam is not None else 1.0 / math.sqrt(n)

    def resolved(self, n: int) -> "Hyperparams":
        """Copy with lambda, eta_min and eta0 filled in, suitable for run headers."""
        return self.model_copy(update={
            "lam": self.lambda_for(n),
            "eta_min": self.eta_low,
            "eta0": self.eta_init,
        })

    def header(self) -> dict:
        return self.model_dump(by_alias=True, mode="json")
