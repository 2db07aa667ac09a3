"""
Reverse-SDE sampling of a trained (conditional) score network.

    x(t - dt) = x(t) + dt * g(t)^2 * s_theta(x, t, y) + sqrt(dt) * g(t) * z

integrated on a uniform grid from T down to t_min in the network's
normalized frame, starting from x(T) ~ Normal(0, sigma_max^2 I).
"""

from typing import Optional

import numpy as np

from score_net.network import ScoreNetwork
from sde_sim.integrator import euler_maruyama_step
from sgm_engine.schedule import NoiseSchedule
from shared import random_streams
from shared.config import LogConfig
from shared.errors import DivergenceError, InputError

logger = LogConfig.setup_logging("sgm_engine.sampler")

DEFAULT_N_STEPS = 500
BLOCK_SIZE = 1024


def label_in_training_range(net: ScoreNetwork, label) -> bool:
    """Whether a label lies within the range of labels seen in training."""
    stats = net.norm_stats
    if label is None or stats.label_min is None or stats.label_max is None:
        return True
    value = np.asarray(label, dtype=np.float64)
    return bool(np.all(value >= stats.label_min) and np.all(value <= stats.label_max))


def reverse_time_grid(schedule: NoiseSchedule, n_steps: int) -> np.ndarray:
    """Uniform grid T = t_0 > t_1 > ... > t_n = t_min."""
    return np.linspace(schedule.T, schedule.t_min, n_steps + 1)


def _generate_block(net: ScoreNetwork, schedule: NoiseSchedule, yn: Optional[np.ndarray],
                    n: int, times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, net.data_dim)) * schedule.sigma_max
    for i in range(times.size - 1):
        t, dt = times[i], times[i] - times[i + 1]
        g = float(schedule.g(t))
        score = net.forward(x, t, yn, normalized=True)
        x = euler_maruyama_step(x, g * g * score, g, dt, rng.standard_normal(x.shape))
        if not np.all(np.isfinite(x)):
            raise DivergenceError(i + 1, "reverse integration produced non-finite samples")
    return x


def generate(net: ScoreNetwork, label, n_samples: int, n_steps: int = DEFAULT_N_STEPS,
             seed: int = 0, schedule: Optional[NoiseSchedule] = None,
             block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Draw n_samples points conditioned on label, in data units.

    Samples are produced in blocks with one random stream per block index,
    so the output depends only on (network, label, n_samples, n_steps, seed).
    """
    schedule = schedule or net.schedule
    if schedule != net.schedule:
        raise InputError("generate schedule differs from the network's schedule")
    if n_steps < 2:
        raise InputError(f"n_steps must be >= 2, got {n_steps}")
    if n_samples < 1:
        raise InputError(f"n_samples must be >= 1, got {n_samples}")
    if net.label_dim and label is None:
        raise InputError("conditional network needs a label")
    if not net.label_dim and label is not None:
        raise InputError("unconditional network takes no label")
    if label is not None and not label_in_training_range(net, label):
        logger.warning(
            f"label {label} outside training range "
            f"[{net.norm_stats.label_min}, {net.norm_stats.label_max}]; extrapolating"
        )

    yn = None
    if label is not None:
        yn = net.norm_stats.normalize_y(np.asarray(label, dtype=np.float64).reshape(1, net.label_dim))

    times = reverse_time_grid(schedule, n_steps)
    blocks = []
    for block, start in enumerate(range(0, n_samples, block_size)):
        n = min(block_size, n_samples - start)
        rng = random_streams.stream_rng(seed, random_streams.SAMPLE_BLOCK, block)
        blocks.append(_generate_block(net, schedule, yn, n, times, rng))
    samples = net.norm_stats.denormalize_x(np.concatenate(blocks, axis=0))
    logger.info(f"Generated {n_samples} samples at label {label} ({n_steps} reverse steps)")
    return samples
