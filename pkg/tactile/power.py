from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid

from tactile.exceptions import ContractViolation


@dataclass(frozen=True)
class PowerTrace:
    """Per-step tank power in W on a uniform time grid."""

    t: np.ndarray
    power: np.ndarray

    def __post_init__(self) -> None:
        if self.t.ndim != 1 or self.t.shape != self.power.shape:
            raise ContractViolation(f"time {self.t.shape} and power {self.power.shape} must be equal-length vectors")

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self) > 1 else float("nan")

    def total_energy(self) -> float:
        """Trapezoidal integral of the power over the trace."""
        if len(self) < 2:
            return 0.0
        return float(trapezoid(self.power, self.t))

    def to_frame(self, epsilon: float | None = None) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.t, "power_W": self.power})
        if epsilon is not None:
            frame["energy_J"] = integrate_energy(self, epsilon)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, column: str = "power_W") -> "PowerTrace":
        return cls(frame["t"].to_numpy(dtype=float), frame[column].to_numpy(dtype=float))

    @classmethod
    def empty(cls) -> "PowerTrace":
        return cls(np.zeros(0), np.zeros(0))


def integrate_energy(trace: PowerTrace, epsilon: float) -> np.ndarray:
    """Cumulative task energy: epsilon plus the trapezoidal integral of the power."""
    if len(trace) == 0:
        return np.zeros(0)
    if len(trace) > 1:
        steps = np.diff(trace.t)
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-12):
            raise ContractViolation("power trace must be sampled on a uniform time grid")
    return epsilon + cumulative_trapezoid(trace.power, trace.t, initial=0.0)
