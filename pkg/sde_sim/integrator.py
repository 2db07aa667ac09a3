"""
Euler–Maruyama integration of the benchmark systems.

Trajectories are integrated as (n, 2) batches. Every row draws its Gaussian
increments from its own counter-based stream, so a row's path depends only
on its own (seed, stream) pair and never on which other rows share the batch.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from sde_sim.systems import (
    FAST, SLOW, BiasSpec, FastSlowSystem, HarmonicBias, as_bias_tuple, batch_drift, restraint_arrays,
)
from sde_sim.oracle import sample_stationary_fast
from shared import random_streams
from shared.config import Config, LogConfig
from shared.errors import DivergenceError, InputError

logger = LogConfig.setup_logging("sde_sim.integrator")

# Gaussian increments are drawn per row in blocks of this many steps.
DRAW_BLOCK = 4096


@dataclass
class Trajectory:
    """States x_0..x_n of one integrated path."""

    states: np.ndarray
    dt: float
    seed: int
    bias: Tuple[HarmonicBias, ...] = ()
    stream: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise InputError(f"trajectory states must be (n >= 1, d), got {self.states.shape}")
        if not self.dt > 0:
            raise InputError(f"dt must be > 0, got {self.dt}")
        if not np.all(np.isfinite(self.states)):
            raise InputError("trajectory contains non-finite states")

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def fast(self) -> np.ndarray:
        return self.states[:, FAST]

    @property
    def slow(self) -> np.ndarray:
        return self.states[:, SLOW]

    def prefix(self, n_steps: int) -> "Trajectory":
        """The first n_steps steps (n_steps + 1 states)."""
        return Trajectory(self.states[: n_steps + 1], self.dt, self.seed, self.bias, self.stream)


def euler_maruyama_step(state, drift, noise_scales, dt: float, gaussian_draw) -> np.ndarray:
    """state + dt * drift + sqrt(dt) * noise_scales * gaussian_draw."""
    if not dt > 0:
        raise InputError(f"dt must be > 0, got {dt}")
    return (np.asarray(state, dtype=np.float64)
            + dt * np.asarray(drift, dtype=np.float64)
            + np.sqrt(dt) * np.asarray(noise_scales, dtype=np.float64) * np.asarray(gaussian_draw))


def integrate_em(initial: np.ndarray, drift_fn: Callable[[np.ndarray], np.ndarray],
                 noise_scales, dt: float, n_steps: int,
                 rngs: Sequence[np.random.Generator],
                 bound: Optional[float] = None) -> np.ndarray:
    """Integrate an (n, d) batch; returns states of shape (n, n_steps + 1, d).

    rngs holds one generator per row. Raises DivergenceError with the step
    index on the first non-finite state or on |state| > bound.
    """
    initial = np.atleast_2d(np.asarray(initial, dtype=np.float64))
    n, d = initial.shape
    if n_steps < 1:
        raise InputError(f"n_steps must be >= 1, got {n_steps}")
    if not dt > 0:
        raise InputError(f"dt must be > 0, got {dt}")
    if len(rngs) != n:
        raise InputError(f"{len(rngs)} random streams for {n} rows")
    if not np.all(np.isfinite(initial)):
        raise InputError("initial states must be finite")
    bound = Config.DIVERGENCE_BOUND if bound is None else bound

    out = np.empty((n, n_steps + 1, d))
    out[:, 0] = initial
    state = initial.copy()
    draws = np.empty((n, 0, d))
    offset = 0
    for step in range(1, n_steps + 1):
        if step - 1 - offset >= draws.shape[1]:
            offset = step - 1
            block = min(DRAW_BLOCK, n_steps - offset)
            draws = np.stack([rng.standard_normal((block, d)) for rng in rngs])
        state = euler_maruyama_step(state, drift_fn(state), noise_scales, dt, draws[:, step - 1 - offset])
        bad = ~np.all(np.isfinite(state), axis=1) | (np.max(np.abs(state), axis=1) > bound)
        if np.any(bad):
            row = int(np.flatnonzero(bad)[0])
            raise DivergenceError(step, f"row {row}: |state| exceeded {bound:g} or became non-finite", row=row)
        out[:, step] = state
    return out


def simulate_batch(system: FastSlowSystem, initial_states, dt: float, n_steps: int,
                   seeds: Sequence[int], streams: Optional[Sequence[int]] = None,
                   biases: Optional[Sequence[BiasSpec]] = None) -> List[Trajectory]:
    """Integrate several independent trajectories in one vectorized loop."""
    initial_states = np.atleast_2d(np.asarray(initial_states, dtype=np.float64))
    n = initial_states.shape[0]
    if initial_states.shape[1] != 2:
        raise InputError(f"initial states must be 2-D points, got shape {initial_states.shape}")
    streams = list(streams) if streams is not None else [0] * n
    bias_tuples = [as_bias_tuple(b) for b in (biases if biases is not None else [None] * n)]
    if not (len(seeds) == len(streams) == len(bias_tuples) == n):
        raise InputError("seeds, streams and biases must match the number of initial states")

    kappa, center = restraint_arrays(bias_tuples)

    def drift_fn(x: np.ndarray) -> np.ndarray:
        return batch_drift(system, x, kappa, center)

    rngs = [random_streams.stream_rng(seed, random_streams.TRAJECTORY, stream)
            for seed, stream in zip(seeds, streams)]
    states = integrate_em(initial_states, drift_fn, system.noise_scales, dt, n_steps, rngs)
    return [
        Trajectory(states[i], dt, int(seeds[i]), bias_tuples[i], int(streams[i]))
        for i in range(n)
    ]


def simulate(system: FastSlowSystem, initial, dt: float, n_steps: int, seed: int,
             bias: BiasSpec = None, stream: int = 0) -> Trajectory:
    """Integrate one trajectory of n_steps steps from initial."""
    initial = np.asarray(initial, dtype=np.float64)
    if initial.shape != (2,):
        raise InputError(f"initial state must be a 2-D point, got shape {initial.shape}")
    traj = simulate_batch(system, initial[None, :], dt, n_steps, [seed], [stream], [bias])[0]
    logger.debug(f"simulated {n_steps} steps of {system.system_id.value} (seed={seed})")
    return traj


@dataclass
class EnsembleSpec:
    """How to start the trajectories of an unbiased ensemble."""

    n_trajectories: int = 1
    initial: Tuple[float, float] = (0.0, 1.0)
    slow_range: Optional[Tuple[float, float]] = None
    fast_init: str = "fixed"
    fast_values: List[float] = field(default_factory=lambda: [1.0])

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise InputError(f"n_trajectories must be >= 1, got {self.n_trajectories}")
        if self.fast_init not in ("fixed", "cycle", "stationary"):
            raise InputError(f"fast_init must be fixed, cycle or stationary, got {self.fast_init!r}")
        if self.fast_init == "cycle" and not self.fast_values:
            raise InputError("fast_init 'cycle' needs at least one fast value")
        if self.slow_range is not None and not self.slow_range[1] >= self.slow_range[0]:
            raise InputError(f"slow_range must be ordered, got {self.slow_range}")


def ensemble_initial_states(system: FastSlowSystem, spec: EnsembleSpec, seed: int) -> np.ndarray:
    """Initial states for simulate_ensemble."""
    n = spec.n_trajectories
    if spec.slow_range is None:
        slow = np.full(n, float(spec.initial[0]))
    elif n == 1:
        slow = np.array([0.5 * (spec.slow_range[0] + spec.slow_range[1])])
    else:
        slow = np.linspace(spec.slow_range[0], spec.slow_range[1], n)

    if spec.fast_init == "fixed":
        fast = np.full(n, float(spec.initial[1]))
    elif spec.fast_init == "cycle":
        fast = np.array([spec.fast_values[i % len(spec.fast_values)] for i in range(n)], dtype=np.float64)
    else:
        fast = np.array([
            sample_stationary_fast(system, s, random_streams.stream_rng(seed, random_streams.INITIAL_STATE, i))
            for i, s in enumerate(slow)
        ])
    return np.column_stack([slow, fast])


def simulate_ensemble(system: FastSlowSystem, spec: EnsembleSpec, dt: float,
                      n_steps: int, seed: int) -> List[Trajectory]:
    """Unbiased ensemble with one stream per trajectory index."""
    initial = ensemble_initial_states(system, spec, seed)
    n = initial.shape[0]
    trajectories = simulate_batch(system, initial, dt, n_steps, [seed] * n, list(range(n)))
    logger.info(
        f"Simulated {n} {system.system_id.value} trajectories x {n_steps} steps (dt={dt}, seed={seed})"
    )
    return trajectories
