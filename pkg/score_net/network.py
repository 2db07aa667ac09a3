"""
Dense score network s_theta(x, t, y) with hand-written reverse mode.

Input layout: [normalized x, normalized y, Fourier features of log sigma(t)].
Hidden layers use SiLU; the last layer is linear and its output F is scaled
by 1 / sigma(t), so s_theta = F / sigma(t).
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from sgm_engine.schedule import NoiseSchedule
from shared.errors import InputError

DEFAULT_HIDDEN_WIDTHS = (64, 128, 256, 512, 512, 256, 128, 64)
DEFAULT_N_FOURIER = 16
SILU = "SiLU"


def silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


def silu_grad(z: np.ndarray) -> np.ndarray:
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass
class MlpCache:
    """Layer inputs and hidden pre-activations kept for the backward pass."""

    activations: List[np.ndarray]
    preactivations: List[np.ndarray]


def mlp_forward(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                inputs: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    """Forward through SiLU hidden layers and a linear output layer."""
    h = inputs
    cache = MlpCache([inputs], [])
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        if i == last:
            return z, cache
        cache.preactivations.append(z)
        h = silu(z)
        cache.activations.append(h)
    raise InputError("network has no layers")


def mlp_backward(weights: Sequence[np.ndarray], cache: MlpCache,
                 grad_output: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Exact gradients of sum(grad_output * output) w.r.t. weights and biases."""
    n_layers = len(weights)
    grad_w: List[Optional[np.ndarray]] = [None] * n_layers
    grad_b: List[Optional[np.ndarray]] = [None] * n_layers
    g = grad_output
    for i in reversed(range(n_layers)):
        grad_w[i] = cache.activations[i].T @ g
        grad_b[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ weights[i].T) * silu_grad(cache.preactivations[i - 1])
    return grad_w, grad_b


@dataclass
class GradientBundle:
    """Per-parameter gradients, laid out like ScoreNetwork.weights/biases."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, net: "ScoreNetwork") -> "GradientBundle":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def arrays(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def check_matches(self, net: "ScoreNetwork") -> None:
        for g, p in zip(self.arrays(), net.parameters()):
            if g.shape != p.shape:
                raise InputError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if len(self.arrays()) != len(net.parameters()):
            raise InputError("gradient bundle and network have different layer counts")

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])


@dataclass
class NormStats:
    """Per-coordinate affine normalization of data x and labels y."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y_scale: np.ndarray = field(default_factory=lambda: np.ones(0))
    label_min: Optional[float] = None
    label_max: Optional[float] = None

    def __post_init__(self):
        for name in ("x_mean", "x_scale", "y_mean", "y_scale"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        if self.x_mean.shape != self.x_scale.shape or self.y_mean.shape != self.y_scale.shape:
            raise InputError("normalization means and scales must have matching shapes")
        if np.any(self.x_scale <= 0) or np.any(self.y_scale <= 0):
            raise InputError("normalization scales must be strictly positive")

    @classmethod
    def fit(cls, points: np.ndarray, labels: Optional[np.ndarray] = None) -> "NormStats":
        """Mean / standard deviation of the training data (unit scale for constant columns)."""
        points = np.asarray(points, dtype=np.float64)
        x_scale = points.std(axis=0)
        x_scale = np.where(x_scale > 1e-12, x_scale, 1.0)
        if labels is None or np.asarray(labels).size == 0:
            return cls(points.mean(axis=0), x_scale)
        labels = np.asarray(labels, dtype=np.float64).reshape(points.shape[0], -1)
        y_scale = labels.std(axis=0)
        y_scale = np.where(y_scale > 1e-12, y_scale, 1.0)
        return cls(points.mean(axis=0), x_scale, labels.mean(axis=0), y_scale,
                   float(labels.min()), float(labels.max()))

    def normalize_x(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_scale

    def denormalize_x(self, xn) -> np.ndarray:
        return np.asarray(xn, dtype=np.float64) * self.x_scale + self.x_mean

    def normalize_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_scale

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(), "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean.tolist(), "y_scale": self.y_scale.tolist(),
            "label_min": self.label_min, "label_max": self.label_max,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(
            np.array(data["x_mean"]), np.array(data["x_scale"]),
            np.array(data["y_mean"]), np.array(data["y_scale"]),
            data.get("label_min"), data.get("label_max"),
        )


@dataclass
class ForwardCache:
    """Everything backward needs from one forward evaluation."""

    mlp: MlpCache
    sigma: np.ndarray


class ScoreNetwork:
    """Conditional score approximation s_theta(x, t, y)."""

    def __init__(self, layer_widths: Sequence[int], weights: List[np.ndarray],
                 biases: List[np.ndarray], fourier_features: np.ndarray,
                 norm_stats: NormStats, schedule: NoiseSchedule,
                 activation: str = SILU):
        if activation != SILU:
            raise InputError(f"unsupported activation {activation!r}")
        self.layer_widths = [int(w) for w in layer_widths]
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.fourier_features = np.atleast_2d(np.asarray(fourier_features, dtype=np.float64))
        self.norm_stats = norm_stats
        self.schedule = schedule
        self.activation = activation
        self._check_layout()

    def _check_layout(self) -> None:
        widths = self.layer_widths
        if len(widths) < 2 or len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise InputError("layer widths, weights and biases disagree on the layer count")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
                raise InputError(f"layer {i} has weight {w.shape} / bias {b.shape}, "
                                 f"expected ({widths[i]}, {widths[i + 1]})")
        expected_in = self.data_dim + self.label_dim + self.time_embedding_dim
        if widths[0] != expected_in:
            raise InputError(f"input width {widths[0]} != data + label + embedding = {expected_in}")
        if widths[-1] != self.data_dim:
            raise InputError(f"output width {widths[-1]} != data dimension {self.data_dim}")

    @classmethod
    def create(cls, data_dim: int, label_dim: int, schedule: NoiseSchedule,
               norm_stats: NormStats, seed: int,
               hidden_widths: Sequence[int] = DEFAULT_HIDDEN_WIDTHS,
               n_fourier: int = DEFAULT_N_FOURIER,
               fourier_scale: float = 1.0) -> "ScoreNetwork":
        """He-initialized hidden layers, zero output layer."""
        rng = np.random.default_rng(seed)
        widths = [data_dim + label_dim + 2 * n_fourier, *hidden_widths, data_dim]
        weights, biases = [], []
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            if i == len(widths) - 2:
                weights.append(np.zeros((fan_in, fan_out)))
            else:
                weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        fourier = rng.standard_normal((1, n_fourier)) * fourier_scale
        return cls(widths, weights, biases, fourier, norm_stats, schedule)

    @property
    def data_dim(self) -> int:
        return int(self.norm_stats.x_mean.size)

    @property
    def label_dim(self) -> int:
        return int(self.norm_stats.y_mean.size)

    @property
    def time_embedding_dim(self) -> int:
        return 2 * self.fourier_features.shape[1]

    def parameters(self) -> List[np.ndarray]:
        return list(self.weights) + list(self.biases)

    def embed_time(self, t: np.ndarray) -> np.ndarray:
        """Gaussian Fourier features of log sigma(t) / 4."""
        c = np.log(self.schedule.sigma(t)) / 4.0
        angles = 2.0 * np.pi * c[:, None] * self.fourier_features
        return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)

    def _prepare(self, x, t, y, normalized: bool):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n = x.shape[0]
        if x.shape[1] != self.data_dim:
            raise InputError(f"x has {x.shape[1]} columns, network expects {self.data_dim}")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,)).copy()
        if self.label_dim:
            if y is None:
                raise InputError("conditional network needs a label")
            y = np.broadcast_to(np.asarray(y, dtype=np.float64).reshape(-1, self.label_dim),
                                (n, self.label_dim))
        else:
            y = np.zeros((n, 0))
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise InputError("network inputs must be finite")
        if not normalized:
            x = self.norm_stats.normalize_x(x)
            y = self.norm_stats.normalize_y(y) if self.label_dim else y
        t = self.schedule._check_t(t, self.schedule.t_min)
        return np.concatenate([x, y, self.embed_time(t)], axis=1), t

    def forward_with_cache(self, x, t, y=None, normalized: bool = False) -> Tuple[np.ndarray, ForwardCache]:
        """Scores for a batch plus the cache for backward."""
        inputs, t = self._prepare(x, t, y, normalized)
        out, mlp_cache = mlp_forward(self.weights, self.biases, inputs)
        sigma = self.schedule.sigma(t)
        return out / sigma[:, None], ForwardCache(mlp_cache, sigma)

    def forward(self, x, t, y=None, normalized: bool = False) -> np.ndarray:
        """Score in the network's normalized frame.

        x and y are in data units unless normalized=True.
        """
        score, _ = self.forward_with_cache(x, t, y, normalized)
        return score

    def backward_from_cache(self, cache: ForwardCache, grad_score: np.ndarray) -> GradientBundle:
        """Gradients of sum(grad_score * score) for the cached batch."""
        grad_score = np.asarray(grad_score, dtype=np.float64)
        expected = (cache.sigma.size, self.data_dim)
        if grad_score.shape != expected:
            raise InputError(f"upstream gradient shape {grad_score.shape}, expected {expected}")
        grad_w, grad_b = mlp_backward(self.weights, cache.mlp, grad_score / cache.sigma[:, None])
        return GradientBundle(grad_w, grad_b)

    def backward(self, x, t, y, grad_score, normalized: bool = False) -> GradientBundle:
        """Gradients of sum(grad_score * s_theta(x, t, y)) over the batch."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[0] == 0:
            raise InputError("backward needs a non-empty batch")
        _, cache = self.forward_with_cache(x, t, y, normalized)
        return self.backward_from_cache(cache, grad_score)
