"""
Variance-exploding noise schedule.

    sigma(t) = sigma_min * (sigma_max / sigma_min) ** t,   t in [0, T]
    f(x, t)  = 0
    g(t)     = sigma(t) * sqrt(2 ln(sigma_max / sigma_min))

so that d sigma^2 / dt = g^2 and the perturbation kernel of x(0) is
Normal(x(0), sigma(t)^2 I).
"""

from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from shared.errors import InputError

VARIANCE_EXPLODING = "VarianceExploding"

# Above this many points the data diameter is taken from the convex hull.
_PDIST_LIMIT = 4000


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-exploding forward SDE."""

    sigma_min: float = 0.002
    sigma_max: float = 10.0
    T: float = 1.0
    t_min: float = 1e-3
    kind: str = VARIANCE_EXPLODING

    def __post_init__(self):
        if self.kind != VARIANCE_EXPLODING:
            raise InputError(f"unsupported schedule kind {self.kind!r}")
        if not 0 < self.sigma_min < self.sigma_max:
            raise InputError(
                f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}"
            )
        if not 0 < self.t_min < self.T:
            raise InputError(f"need 0 < t_min < T, got t_min={self.t_min}, T={self.T}")

    @property
    def log_ratio(self) -> float:
        return float(np.log(self.sigma_max / self.sigma_min))

    def _check_t(self, t, low: float) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if not np.all(np.isfinite(t)) or np.any(t < low) or np.any(t > self.T):
            raise InputError(f"diffusion time outside [{low}, {self.T}]")
        return t

    def sigma(self, t) -> np.ndarray:
        """Noise scale at time t; exact at both endpoints."""
        t = self._check_t(t, 0.0)
        s = self.sigma_min * (self.sigma_max / self.sigma_min) ** (t / self.T)
        s = np.where(t == 0.0, self.sigma_min, s)
        return np.where(t == self.T, self.sigma_max, s)

    def g(self, t) -> np.ndarray:
        """Diffusion coefficient g(t)."""
        return self.sigma(t) * np.sqrt(2.0 * self.log_ratio / self.T)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSchedule":
        return cls(
            sigma_min=float(data["sigma_min"]), sigma_max=float(data["sigma_max"]),
            T=float(data.get("T", 1.0)), t_min=float(data.get("t_min", 1e-3)),
            kind=data.get("kind", VARIANCE_EXPLODING),
        )

    @classmethod
    def for_data(cls, normalized_points: np.ndarray, sigma_min: float = 0.002,
                 sigma_max_factor: float = 1.5, T: float = 1.0,
                 t_min: float = 1e-3) -> "NoiseSchedule":
        """sigma_max = factor x the largest pairwise distance of the data."""
        diameter = max_pairwise_distance(normalized_points)
        return cls(sigma_min=sigma_min, sigma_max=max(sigma_max_factor * diameter, 2.0 * sigma_min),
                   T=T, t_min=t_min)


def max_pairwise_distance(points: np.ndarray) -> float:
    """Diameter of a point set (exact)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 2:
        return 0.0
    if points.shape[1] == 1:
        return float(np.ptp(points[:, 0]))
    if points.shape[0] > _PDIST_LIMIT:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            # degenerate (e.g. collinear) sets: extreme points along each axis
            idx = np.unique(np.concatenate([np.argmin(points, axis=0), np.argmax(points, axis=0)]))
            lo, hi = points.min(axis=0), points.max(axis=0)
            return float(max(np.linalg.norm(hi - lo), pdist(points[idx]).max()))
    return float(pdist(points).max())


def perturb(x0, t, schedule: NoiseSchedule, gaussian_draw) -> Tuple[np.ndarray, np.ndarray]:
    """Noise x0 to time t; return (xt, score of the perturbation kernel at xt).

    t may be a scalar or one time per row of x0.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    draw = np.asarray(gaussian_draw, dtype=np.float64)
    sigma = schedule.sigma(schedule._check_t(t, schedule.t_min))
    if sigma.ndim == 1 and x0.ndim == 2:
        sigma = sigma[:, None]
    xt = x0 + sigma * draw
    target = -(xt - x0) / sigma ** 2
    return xt, target
