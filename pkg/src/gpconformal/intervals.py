from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = ["IntervalSet"]


@dataclass(frozen=True)
class IntervalSet:
    """Per-test-point prediction intervals for one (method, nu, beta, alpha)."""

    lower: np.ndarray
    upper: np.ndarray
    method: str
    alpha: float
    kernel_nu: Optional[float] = None
    beta_power: Optional[float] = None

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("interval endpoints must not be NaN")
        if np.any(lower > upper):
            raise ValueError("interval lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def __len__(self):
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def infinite_mask(self) -> np.ndarray:
        return ~(np.isfinite(self.lower) & np.isfinite(self.upper))

    @property
    def contains_infinite(self) -> bool:
        return bool(np.any(self.infinite_mask))

    def contains(self, other: "IntervalSet", atol: float = 0.0) -> np.ndarray:
        """Pointwise test ``other ⊆ self``."""
        return (self.lower <= other.lower + atol) & (other.upper <= self.upper + atol)
