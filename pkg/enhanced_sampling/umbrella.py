"""
Umbrella-sampling windows and histogram pooling.

A window is one restrained trajectory. Windows sharing (dt, n_steps) are
integrated together as one vectorized batch; every window owns its random
stream (seed, stream), so results do not depend on window order or on how
windows are grouped into batches.
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import anyio
import numpy as np

from analysis.density import EmpiricalPdf, check_edges, estimate_pdf
from sde_sim.integrator import Trajectory, simulate_batch
from sde_sim.systems import FAST, FastSlowSystem, HarmonicBias
from shared.config import Config, LogConfig
from shared.errors import DivergenceError, InputError

logger = LogConfig.setup_logging("enhanced_sampling.umbrella")


@dataclass
class UmbrellaWindow:
    """One restrained run started from a given microstate."""

    bias: HarmonicBias
    n_steps: int
    dt: float
    initial_state: np.ndarray
    seed: int
    stream: int = 0
    fast_bias: Optional[HarmonicBias] = None
    source: str = "explicit"

    def __post_init__(self):
        self.initial_state = np.asarray(self.initial_state, dtype=np.float64)
        if self.n_steps < 1:
            raise InputError(f"window n_steps must be >= 1, got {self.n_steps}")
        if not self.dt > 0:
            raise InputError(f"window dt must be > 0, got {self.dt}")
        if self.initial_state.shape != (2,) or not np.all(np.isfinite(self.initial_state)):
            raise InputError(f"window initial state must be a finite 2-D point, got {self.initial_state}")
        if self.fast_bias is not None and self.fast_bias.coordinate != FAST:
            raise InputError("fast_bias must restrain the fast coordinate")
        if self.bias.coordinate == FAST and self.fast_bias is not None:
            raise InputError("window has two restraints on the fast coordinate")

    @property
    def biases(self) -> tuple:
        return (self.bias,) if self.fast_bias is None else (self.bias, self.fast_bias)

    def to_dict(self) -> dict:
        """Manifest entry for this window."""
        return {
            "bias": self.bias.to_dict(),
            "fast_bias": None if self.fast_bias is None else self.fast_bias.to_dict(),
            "n_steps": self.n_steps,
            "dt": self.dt,
            "initial_state": self.initial_state.tolist(),
            "initial_state_source": self.source,
            "seed": self.seed,
            "stream": self.stream,
        }


def _group_by_schedule(windows: Sequence[UmbrellaWindow]) -> Dict[tuple, List[int]]:
    groups: Dict[tuple, List[int]] = OrderedDict()
    for i, w in enumerate(windows):
        groups.setdefault((w.dt, w.n_steps), []).append(i)
    return groups


def _run_group(system: FastSlowSystem, windows: Sequence[UmbrellaWindow],
               indices: List[int]) -> List[Trajectory]:
    group = [windows[i] for i in indices]
    try:
        return simulate_batch(
            system,
            np.stack([w.initial_state for w in group]),
            group[0].dt,
            group[0].n_steps,
            seeds=[w.seed for w in group],
            streams=[w.stream for w in group],
            biases=[w.biases for w in group],
        )
    except DivergenceError as exc:
        window = indices[exc.row] if exc.row is not None else indices[0]
        raise exc.in_window(window) from exc


def run_windows(system: FastSlowSystem, windows: Sequence[UmbrellaWindow]) -> List[Trajectory]:
    """One trajectory per window, in window order.

    Raises DivergenceError tagged with the index of the failing window.
    """
    if not windows:
        raise InputError("run_windows needs at least one window")
    out: List[Optional[Trajectory]] = [None] * len(windows)
    for indices in _group_by_schedule(windows).values():
        for i, traj in zip(indices, _run_group(system, windows, indices)):
            out[i] = traj
    logger.info(f"Ran {len(windows)} umbrella windows on {system.system_id.value}")
    return out


async def run_windows_async(system: FastSlowSystem, windows: Sequence[UmbrellaWindow],
                            chunk_size: Optional[int] = None,
                            limiter: Optional[anyio.CapacityLimiter] = None) -> List[Trajectory]:
    """run_windows split into chunks integrated on worker threads.

    Output is identical to run_windows for any chunk_size.
    """
    if not windows:
        raise InputError("run_windows needs at least one window")
    limiter = limiter or anyio.CapacityLimiter(Config.worker_count())
    chunk_size = chunk_size or max(1, -(-len(windows) // Config.worker_count()))
    out: List[Optional[Trajectory]] = [None] * len(windows)
    failures: List[DivergenceError] = []

    async def run_chunk(start: int) -> None:
        indices = list(range(start, min(start + chunk_size, len(windows))))
        chunk = [windows[i] for i in indices]
        try:
            trajectories = await anyio.to_thread.run_sync(run_windows, system, chunk, limiter=limiter)
        except DivergenceError as exc:
            failures.append(exc.in_window(indices[exc.window]))
            return
        for i, traj in zip(indices, trajectories):
            out[i] = traj

    async with anyio.create_task_group() as tg:
        for start in range(0, len(windows), chunk_size):
            tg.start_soon(run_chunk, start)
    if failures:
        raise min(failures, key=lambda e: e.window)
    return out


def window_histograms(trajectories: Sequence[Trajectory], edges) -> np.ndarray:
    """(n_windows, n_bins) fast-variable counts; out-of-range samples are dropped."""
    edges = check_edges(edges)
    return np.stack([np.histogram(t.fast, bins=edges)[0] for t in trajectories]).astype(np.float64)


def pool_histograms(trajectories: Sequence[Trajectory], grid) -> EmpiricalPdf:
    """Normalized histogram of every fast-variable sample of every trajectory."""
    if not trajectories:
        raise InputError("cannot pool an empty list of trajectories")
    samples = np.concatenate([t.fast for t in trajectories])
    return estimate_pdf(samples, grid)


def pdf_rows_csv(path: str, pdf: EmpiricalPdf) -> None:
    """Write (bin center, density) rows."""
    np.savetxt(path, pdf.to_rows(), delimiter=",", header="bin_center,density",
               comments="", fmt="%.17g")
