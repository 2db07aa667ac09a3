"""
Convergence benchmark: umbrella sampling alone vs. score-model-initialized
umbrella sampling, scored by L1 distance to the analytic conditional pdf.

Each experiment runs its windows once at the largest sample size and
scores every prefix, so a curve costs one simulation per experiment.
"""

from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence

import anyio
import numpy as np

from analysis.density import EmpiricalPdf, l1_distance
from enhanced_sampling.pipeline import (
    WindowConfig, build_windows, estimate_from_windows, nearest_training_state,
)
from enhanced_sampling.umbrella import run_windows
from score_net.network import ScoreNetwork
from sde_sim.oracle import stationary_conditional_pdf
from sde_sim.systems import FastSlowSystem
from sgm_engine.sampler import generate
from shared import random_streams
from shared.config import Config, LogConfig
from shared.errors import InputError

logger = LogConfig.setup_logging("analysis.convergence")

DISPERSION = "standard error of the mean"


class MethodTag(str, Enum):
    US_ONLY = "USOnly"
    COUPLED_SGM_US = "CoupledSgmUs"


@dataclass
class ConvergenceCurve:
    """Mean and standard error of L1 over experiments, per sample size."""

    sample_sizes: np.ndarray
    mean_l1: np.ndarray
    stderr_l1: np.ndarray
    n_experiments: int
    method_tag: MethodTag

    def __post_init__(self):
        self.sample_sizes = np.asarray(self.sample_sizes, dtype=np.int64)
        self.mean_l1 = np.asarray(self.mean_l1, dtype=np.float64)
        self.stderr_l1 = np.asarray(self.stderr_l1, dtype=np.float64)
        self.method_tag = MethodTag(self.method_tag)
        n = self.sample_sizes.size
        if self.mean_l1.shape != (n,) or self.stderr_l1.shape != (n,):
            raise InputError("sample_sizes, mean_l1 and stderr_l1 must have equal lengths")
        if np.any(self.mean_l1 < 0) or np.any(self.stderr_l1 < 0):
            raise InputError("L1 errors must be non-negative")

    @classmethod
    def from_errors(cls, sample_sizes: Sequence[int], errors: np.ndarray,
                    method_tag: MethodTag) -> "ConvergenceCurve":
        """Aggregate an (n_experiments, n_sizes) error matrix."""
        errors = np.asarray(errors, dtype=np.float64)
        n = errors.shape[0]
        return cls(
            np.asarray(sample_sizes),
            errors.mean(axis=0),
            errors.std(axis=0, ddof=1) / np.sqrt(n),
            n,
            method_tag,
        )

    def write_csv(self, path: str) -> None:
        """One row per sample size."""
        with open(path, "w", encoding="utf-8") as f:
            f.write("sample_size,mean_l1,stderr_l1,n_experiments,method_tag\n")
            for s, m, e in zip(self.sample_sizes, self.mean_l1, self.stderr_l1):
                f.write(f"{int(s)},{float(m)!r},{float(e)!r},{self.n_experiments},{self.method_tag.value}\n")


@dataclass
class StudySetup:
    """Everything an experiment needs besides its index."""

    system: FastSlowSystem
    oracle: EmpiricalPdf
    center: float
    config: WindowConfig
    sample_sizes: List[int]
    n_windows: int
    seed: int


def prefix_errors(setup: StudySetup, initial_states: np.ndarray, seed: int, source: str) -> np.ndarray:
    """L1 error of the pooled estimate after each sample size of steps per window."""
    windows = build_windows(initial_states, setup.center, setup.config, seed, source)
    trajectories = run_windows(setup.system, windows)
    errors = []
    for size in setup.sample_sizes:
        prefixes = [t.prefix(size) for t in trajectories]
        pdf, _ = estimate_from_windows(prefixes, windows, setup.system, setup.config)
        errors.append(l1_distance(pdf, setup.oracle))
    return np.asarray(errors)


def _experiment_seed(setup: StudySetup, experiment: int, method: MethodTag) -> int:
    method_key = 0 if method is MethodTag.US_ONLY else 1
    return random_streams.derive_seed(setup.seed, random_streams.EXPERIMENT, experiment, method_key)


async def run_experiments(setup: StudySetup, starts: Dict[MethodTag, np.ndarray],
                          n_experiments: int,
                          limiter: Optional[anyio.CapacityLimiter] = None) -> Dict[MethodTag, np.ndarray]:
    """Run every (method, experiment) pair on worker threads.

    starts[method] holds n_experiments * n_windows initial states, experiment
    e owning rows [e * n_windows, (e + 1) * n_windows). Results are ordered
    by experiment index; any failure discards all results.
    """
    limiter = limiter or anyio.CapacityLimiter(Config.worker_count())
    results = {m: np.empty((n_experiments, len(setup.sample_sizes))) for m in starts}
    failures: List[tuple] = []

    async def one(method: MethodTag, experiment: int) -> None:
        rows = starts[method][experiment * setup.n_windows:(experiment + 1) * setup.n_windows]
        seed = _experiment_seed(setup, experiment, method)
        try:
            results[method][experiment] = await anyio.to_thread.run_sync(
                prefix_errors, setup, rows, seed, method.value, limiter=limiter,
            )
        except Exception as exc:
            failures.append((experiment, method.value, exc))

    async with anyio.create_task_group() as tg:
        for method in starts:
            for experiment in range(n_experiments):
                tg.start_soon(one, method, experiment)

    if failures:
        experiment, method, exc = min(failures, key=lambda f: (f[0], f[1]))
        logger.error(f"experiment {experiment} ({method}) failed; discarding the study")
        raise exc
    return results


def convergence_study(system: FastSlowSystem, checkpoint: Optional[ScoreNetwork],
                      training_points: np.ndarray, sample_sizes: Sequence[int],
                      n_experiments: int = 100, seed: int = 0, label=None,
                      n_windows: int = 10, window_config: Optional[WindowConfig] = None,
                      ) -> Dict[MethodTag, ConvergenceCurve]:
    """L1 convergence curves of both methods (US alone only when checkpoint is None).

    Sample sizes count steps per window. The bias center is window_config.center,
    or the label when no center is set.
    """
    if n_experiments < 2:
        raise InputError(f"n_experiments must be >= 2, got {n_experiments}")
    if n_windows < 1:
        raise InputError(f"n_windows must be >= 1, got {n_windows}")
    sizes = sorted(int(s) for s in sample_sizes)
    if not sizes or sizes[0] < 1 or len(set(sizes)) != len(sizes):
        raise InputError(f"sample sizes must be distinct positive integers, got {list(sample_sizes)}")
    config = window_config or WindowConfig()
    center = config.center if config.center is not None else label
    if center is None:
        raise InputError("convergence_study needs a bias center or a label")
    center = float(center)
    config = replace(config, n_steps=sizes[-1], center=center)

    setup = StudySetup(
        system, stationary_conditional_pdf(system, center, config.edges()),
        center, config, sizes, n_windows, seed,
    )
    n_total = n_experiments * n_windows
    starts = {MethodTag.US_ONLY: np.tile(nearest_training_state(training_points, center), (n_total, 1))}
    if checkpoint is not None:
        gen_seed = random_streams.derive_seed(seed, random_streams.EXPERIMENT, n_experiments)
        gen_label = None
        if checkpoint.label_dim:
            gen_label = center if label is None else label
        starts[MethodTag.COUPLED_SGM_US] = generate(
            checkpoint, gen_label, n_total, n_steps=config.sgm_steps, seed=gen_seed,
        )

    logger.info(
        f"Convergence study: {n_experiments} experiments x {n_windows} windows, "
        f"sizes {sizes}, center {center:g}, methods {[m.value for m in starts]}"
    )
    errors = anyio.run(run_experiments, setup, starts, n_experiments)
    return {m: ConvergenceCurve.from_errors(sizes, e, m) for m, e in errors.items()}


def study_metadata(curves: Dict[MethodTag, ConvergenceCurve], n_windows: int, **extra) -> dict:
    """Run metadata recorded next to the curve CSVs."""
    sizes = next(iter(curves.values())).sample_sizes
    return {
        "dispersion": DISPERSION,
        "abscissa": "steps per window",
        "n_windows": n_windows,
        "steps_per_window": sizes.tolist(),
        "total_pooled_steps": (sizes * n_windows).tolist(),
        "methods": [m.value for m in curves],
        **extra,
    }
