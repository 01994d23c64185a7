"""
State Model

Instantaneous state of the network and the value types recorded along
simulated trajectories.
"""

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from ..utils.exceptions import DomainError

if TYPE_CHECKING:
    from .network import NetworkSpec


@dataclass(frozen=True)
class SystemState:
    """Load voltages (over loads) and line currents (over edges) at `time`"""
    v_loads: np.ndarray
    i_lines: np.ndarray
    time: float = 0.0

    def as_vector(self) -> np.ndarray:
        """State vector x = [i_E, v_L]"""
        return np.concatenate([np.asarray(self.i_lines, dtype=float), np.asarray(self.v_loads, dtype=float)])

    @classmethod
    def from_vector(cls, x: np.ndarray, n_edges: int, time: float = 0.0) -> "SystemState":
        x = np.asarray(x, dtype=float)
        return cls(v_loads=x[n_edges:].copy(), i_lines=x[:n_edges].copy(), time=float(time))

    def check_domain(self) -> None:
        """Raise DomainError unless entries are finite and load voltages positive"""
        if not (np.all(np.isfinite(self.v_loads)) and np.all(np.isfinite(self.i_lines))):
            raise DomainError("state has non-finite entries", {"time": self.time})
        if np.any(np.asarray(self.v_loads) <= 0):
            raise DomainError(
                "load voltages must be positive",
                {"time": self.time, "v_min": float(np.min(self.v_loads))},
            )


@dataclass(frozen=True)
class SwitchingEvent:
    """Single-load power step p_before -> p_after at `time` (state stays continuous)"""
    load: int  # node id of the switching load
    p_before: float
    p_after: float
    time: float

    def __post_init__(self):
        if self.p_before == self.p_after:
            raise DomainError(
                "switching event must change the load power",
                {"load": self.load, "p": self.p_before},
            )
        if self.p_before < 0 or self.p_after < 0:
            raise DomainError("load powers must be non-negative", {"load": self.load})

    @property
    def magnitude(self) -> float:
        return abs(self.p_after - self.p_before)

    def check_against(self, spec: "NetworkSpec") -> None:
        """Both powers must respect the load's p_max"""
        if self.load not in spec.load_indices:
            raise DomainError(f"node {self.load} is not a load", {"load": self.load})
        p_cap = spec.nodes[self.load].p_max
        if max(self.p_before, self.p_after) > p_cap:
            raise DomainError(
                f"event powers exceed p_max {p_cap:g} of load {self.load}",
                {"load": self.load, "p_max": p_cap},
            )


@dataclass(frozen=True)
class PotentialSample:
    """Brayton-Moser quantities evaluated at one state"""
    g: float  # co-content
    p_total: float  # potential P
    p_dot: float  # -xdot^T Q xdot
    q_definite: bool


class Classification(str, enum.Enum):
    HIGH_VOLTAGE = "high_voltage"
    LOW_VOLTAGE_OR_OTHER = "low_voltage_or_other"


class TrajectoryVerdict(str, enum.Enum):
    CONVERGED_TO_SEP = "converged_to_sep"
    LEFT_TRANSIENT_DOMAIN = "left_transient_domain"
    DIVERGED = "diverged"
    TIMED_OUT = "timed_out"
