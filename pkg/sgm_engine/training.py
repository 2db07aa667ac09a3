"""
Denoising score matching (conditional denoising estimator) training.

    L(theta) = E_t E_(x0, y) E_(xt | x0) [ lambda(t) || grad log p(xt | x0) - s_theta(xt, t, y) ||^2 ]

with t ~ Uniform(t_min, T) and lambda(t) = sigma(t)^2. Data and labels are
normalized with statistics embedded in the resulting network.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from score_net.network import (
    DEFAULT_HIDDEN_WIDTHS, DEFAULT_N_FOURIER, GradientBundle, NormStats, ScoreNetwork,
)
from score_net.optim import AdamState, adam_step
from sgm_engine.dataset import LabeledDataset
from sgm_engine.schedule import NoiseSchedule, perturb
from shared import random_streams
from shared.config import LogConfig
from shared.errors import InputError, TrainingError

logger = LogConfig.setup_logging("sgm_engine.training")

SIGMA_SQUARED = "SigmaSquared"
MIN_BENCHMARK_POINTS = 1000


@dataclass
class TrainConfig:
    """Optimization settings for train()."""

    batch_size: int = 512
    n_iterations: int = 50_000
    lr: float = 1e-4
    lr_min: float = 1e-6
    lr_schedule: str = "cosine"
    seed: int = 0
    lambda_weighting: str = SIGMA_SQUARED
    hidden_widths: List[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN_WIDTHS))
    n_fourier: int = DEFAULT_N_FOURIER
    fourier_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    log_every: int = 500

    def __post_init__(self):
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.n_iterations < 1:
            raise InputError(f"n_iterations must be >= 1, got {self.n_iterations}")
        if not (self.lr > 0 and 0 <= self.lr_min <= self.lr):
            raise InputError(f"need lr > 0 and 0 <= lr_min <= lr, got {self.lr}, {self.lr_min}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise InputError(f"lr_schedule must be cosine or constant, got {self.lr_schedule!r}")
        if self.lambda_weighting != SIGMA_SQUARED:
            raise InputError(f"unsupported lambda weighting {self.lambda_weighting!r}")

    def learning_rate(self, iteration: int) -> float:
        """Learning rate at a 1-based iteration."""
        if self.lr_schedule == "constant" or self.n_iterations == 1:
            return self.lr
        progress = (iteration - 1) / (self.n_iterations - 1)
        return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + math.cos(math.pi * progress))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingLog:
    """Per-iteration loss and learning rate."""

    iterations: List[int] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)

    def append(self, iteration: int, loss: float, lr: float) -> None:
        self.iterations.append(iteration)
        self.losses.append(loss)
        self.learning_rates.append(lr)

    def to_rows(self) -> np.ndarray:
        return np.column_stack([self.iterations, self.losses, self.learning_rates])

    def running_mean(self, window: int) -> np.ndarray:
        losses = np.asarray(self.losses)
        if losses.size < window:
            return np.array([losses.mean()]) if losses.size else losses
        kernel = np.ones(window) / window
        return np.convolve(losses, kernel, mode="valid")


@dataclass
class TrainingRun:
    network: ScoreNetwork
    log: TrainingLog


def dsm_loss(net: ScoreNetwork, points: np.ndarray, labels: Optional[np.ndarray],
             rng: np.random.Generator, schedule: Optional[NoiseSchedule] = None,
             normalized: bool = True) -> Tuple[float, GradientBundle]:
    """Monte-Carlo denoising loss of one batch and its parameter gradients."""
    schedule = schedule or net.schedule
    if schedule != net.schedule:
        raise InputError("dsm_loss schedule differs from the network's schedule")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    if n == 0:
        raise InputError("dsm_loss needs a non-empty batch")
    if not normalized:
        points = net.norm_stats.normalize_x(points)
        if labels is not None:
            labels = net.norm_stats.normalize_y(np.asarray(labels).reshape(n, -1))

    t = rng.uniform(schedule.t_min, schedule.T, size=n)
    draw = rng.standard_normal(points.shape)
    xt, target = perturb(points, t, schedule, draw)
    score, cache = net.forward_with_cache(xt, t, labels, normalized=True)
    weight = cache.sigma ** 2
    resid = score - target
    loss = float(np.mean(weight * np.sum(resid ** 2, axis=1)))
    grad_score = (2.0 / n) * weight[:, None] * resid
    return loss, net.backward_from_cache(cache, grad_score)


def train(dataset: LabeledDataset, config: TrainConfig,
          schedule: Optional[NoiseSchedule] = None,
          sigma_min: float = 0.002, sigma_max_factor: float = 1.5,
          T: float = 1.0, t_min: float = 1e-3) -> TrainingRun:
    """Fit a (conditional) score network to a labeled dataset.

    When no schedule is given, sigma_max is sigma_max_factor times the
    diameter of the normalized training points.
    """
    if len(dataset) < MIN_BENCHMARK_POINTS:
        logger.warning(f"training on only {len(dataset)} points")

    norm = NormStats.fit(dataset.points, dataset.labels)
    xn = norm.normalize_x(dataset.points)
    yn = norm.normalize_y(dataset.labels) if dataset.labels is not None else None
    if schedule is None:
        schedule = NoiseSchedule.for_data(xn, sigma_min=sigma_min, sigma_max_factor=sigma_max_factor,
                                          T=T, t_min=t_min)
    logger.info(
        f"Training on {len(dataset)} points (label_dim={dataset.label_dim}), "
        f"sigma in [{schedule.sigma_min:g}, {schedule.sigma_max:g}], "
        f"{config.n_iterations} iterations x batch {config.batch_size}"
    )

    net = ScoreNetwork.create(
        dataset.data_dim, dataset.label_dim, schedule, norm,
        seed=random_streams.derive_seed(config.seed, random_streams.TRAINING, 0),
        hidden_widths=config.hidden_widths, n_fourier=config.n_fourier,
        fourier_scale=config.fourier_scale,
    )
    rng = random_streams.stream_rng(config.seed, random_streams.TRAINING, 1)
    state = AdamState.for_network(net)
    log = TrainingLog()

    for iteration in range(1, config.n_iterations + 1):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        loss, grads = dsm_loss(net, xn[idx], None if yn is None else yn[idx], rng)
        if not math.isfinite(loss):
            raise TrainingError(iteration, loss)
        lr = config.learning_rate(iteration)
        adam_step(net, grads, state, lr, config.beta1, config.beta2, config.eps_adam)
        log.append(iteration, loss, lr)
        if iteration % config.log_every == 0 or iteration == config.n_iterations:
            recent = np.mean(log.losses[-config.log_every:])
            logger.info(f"iteration {iteration}: loss {recent:.5f} (lr {lr:.2e})")

    return TrainingRun(net, log)
