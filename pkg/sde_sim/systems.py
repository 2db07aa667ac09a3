"""
Benchmark fast/slow systems and their harmonic restraints.

MovingWell:
    dz1 = a1 dt + a2 dB1
    dz2 = -(-1 + 0.2 z1 + 4 z2 (-1 + z2^2)) dt + a3 dB2

FixedWell (barrier height h, depth parameter k):
    dx1 = a1 dt + a2 dB1
    dx2 = -((1 + x2)^2 Q'(x2) + 2 (1 + x2) Q(x2)) dt + a3 dB2
    Q(x) = h - 2 h x + (1 + h - k) x^2 + (0.75 k - 2) x^3 + x^4

A harmonic restraint of stiffness kappa on coordinate c adds
-kappa (x_c - center) to that coordinate's drift.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from shared.errors import InputError

SLOW = 0
FAST = 1


class SystemId(str, Enum):
    MOVING_WELL = "MovingWell"
    FIXED_WELL = "FixedWell"


@dataclass(frozen=True)
class HarmonicBias:
    """Restraint -kappa (x_coordinate - center) added to one drift component."""

    kappa: float
    center: float
    coordinate: int = SLOW

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise InputError(f"kappa must be finite and >= 0, got {self.kappa}")
        if not np.isfinite(self.center):
            raise InputError(f"bias center must be finite, got {self.center}")
        if self.coordinate not in (SLOW, FAST):
            raise InputError(f"bias coordinate must be 0 (slow) or 1 (fast), got {self.coordinate}")

    def potential(self, x) -> np.ndarray:
        """Bias energy 0.5 kappa (x - center)^2."""
        x = np.asarray(x, dtype=np.float64)
        return 0.5 * self.kappa * (x - self.center) ** 2

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "center": self.center, "coordinate": self.coordinate}

BiasSpec = Union[None, HarmonicBias, Sequence[HarmonicBias]]


def as_bias_tuple(bias: BiasSpec) -> Tuple[HarmonicBias, ...]:
    """Normalize None / one bias / several biases to a tuple."""
    if bias is None:
        return ()
    if isinstance(bias, HarmonicBias):
        return (bias,)
    biases = tuple(bias)
    coords = [b.coordinate for b in biases]
    if len(set(coords)) != len(coords):
        raise InputError("at most one restraint per coordinate")
    return biases


@dataclass(frozen=True)
class FastSlowSystem:
    """Parameters of one benchmark system."""

    system_id: SystemId
    a1: float = 1e-4
    a2: float = 1e-4
    a3: float = 1e-1
    epsilon: float = 1e3
    h: Optional[float] = None
    k: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "system_id", SystemId(self.system_id))
        for name in ("a1", "a2", "a3", "epsilon"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InputError(f"{name} must be finite and > 0, got {value}")
        if self.system_id is SystemId.MOVING_WELL:
            if self.h is not None or self.k is not None:
                raise InputError("h and k apply to FixedWell only")
        else:
            if self.h is None or self.k is None:
                raise InputError("FixedWell needs both h and k")
            if not (np.isfinite(self.h) and np.isfinite(self.k)):
                raise InputError("h and k must be finite")

    @classmethod
    def moving_well(cls, a1: float = 1e-4, a2: float = 1e-4, epsilon: float = 1e3) -> "FastSlowSystem":
        """MovingWell with a3 = epsilon * a1."""
        return cls(SystemId.MOVING_WELL, a1=a1, a2=a2, a3=epsilon * a1, epsilon=epsilon)

    @classmethod
    def fixed_well(cls, h: float = 8.0, k: float = 0.0, a1: float = 1e-4,
                   a2: float = 1e-4, epsilon: float = 1e3) -> "FastSlowSystem":
        """FixedWell with a3 = epsilon * a1."""
        return cls(SystemId.FIXED_WELL, a1=a1, a2=a2, a3=epsilon * a1, epsilon=epsilon, h=h, k=k)

    @property
    def noise_scales(self) -> np.ndarray:
        return np.array([self.a2, self.a3])

    @property
    def beta_eff(self) -> float:
        """Exponent of the fast stationary density exp(-beta_eff V)."""
        return 2.0 / self.a3 ** 2

    def fast_potential(self, x2, slow=0.0) -> np.ndarray:
        """V(x2; slow) with fast drift = -dV/dx2."""
        x2 = np.asarray(x2, dtype=np.float64)
        if self.system_id is SystemId.MOVING_WELL:
            slow = np.asarray(slow, dtype=np.float64)
            return x2 ** 4 - 2.0 * x2 ** 2 + (0.2 * slow - 1.0) * x2
        return (1.0 + x2) ** 2 * self._q(x2)

    def fast_drift(self, x2, slow=0.0) -> np.ndarray:
        """Unbiased fast drift, literally as the equations of motion write it."""
        x2 = np.asarray(x2, dtype=np.float64)
        if self.system_id is SystemId.MOVING_WELL:
            slow = np.asarray(slow, dtype=np.float64)
            return -(-1.0 + 0.2 * slow + 4.0 * x2 * (-1.0 + x2 ** 2))
        h, k = self.h, self.k
        return -(
            (1.0 + x2) ** 2 * (2.0 * (1.0 + h - k) * x2 - 2.0 * h
                               + 3.0 * (0.75 * k - 2.0) * x2 ** 2 + 4.0 * x2 ** 3)
            + 2.0 * (1.0 + x2) * self._q(x2)
        )

    def _q(self, x2: np.ndarray) -> np.ndarray:
        h, k = self.h, self.k
        return h - 2.0 * h * x2 + (1.0 + h - k) * x2 ** 2 + (0.75 * k - 2.0) * x2 ** 3 + x2 ** 4

    def is_bimodal(self, slow: float = 0.0) -> bool:
        """Whether V(.; slow) has two local minima."""
        x = np.linspace(-3.0, 3.0, 6001)
        v = self.fast_potential(x, slow)
        minima = (v[1:-1] < v[:-2]) & (v[1:-1] < v[2:])
        return int(minima.sum()) >= 2

    def to_dict(self) -> dict:
        return {
            "system_id": self.system_id.value, "a1": self.a1, "a2": self.a2,
            "a3": self.a3, "epsilon": self.epsilon, "h": self.h, "k": self.k,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FastSlowSystem":
        return cls(
            SystemId(data["system_id"]), a1=float(data["a1"]), a2=float(data["a2"]),
            a3=float(data["a3"]), epsilon=float(data.get("epsilon", 1e3)),
            h=None if data.get("h") is None else float(data["h"]),
            k=None if data.get("k") is None else float(data["k"]),
        )


def restraint_arrays(biases: Sequence[Tuple[HarmonicBias, ...]]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-row (kappa, center) arrays of shape (n, 2); unrestrained entries are 0."""
    kappa = np.zeros((len(biases), 2))
    center = np.zeros((len(biases), 2))
    for row, row_biases in enumerate(biases):
        for b in row_biases:
            kappa[row, b.coordinate] = b.kappa
            center[row, b.coordinate] = b.center
    return kappa, center


def batch_drift(system: FastSlowSystem, states: np.ndarray, kappa=0.0, center=0.0) -> np.ndarray:
    """Drift of an (n, 2) batch under restraints from restraint_arrays()."""
    out = np.empty_like(states)
    out[:, SLOW] = system.a1
    out[:, FAST] = system.fast_drift(states[:, FAST], states[:, SLOW])
    return out - kappa * (states - center)


def drift(system: FastSlowSystem, state, bias: BiasSpec = None) -> np.ndarray:
    """(slow drift, fast drift) at a single 2-D state."""
    state = np.asarray(state, dtype=np.float64)
    if state.shape != (2,):
        raise InputError(f"state must be a 2-D point, got shape {state.shape}")
    if not np.all(np.isfinite(state)):
        raise InputError(f"state must be finite, got {state.tolist()}")
    kappa, center = restraint_arrays([as_bias_tuple(bias)])
    return batch_drift(system, state[None, :], kappa, center)[0]
