"""
Weighted histogram analysis on a shared one-dimensional grid.

Self-consistent equations, with n_ij the counts of window i in bin j,
N_i its sample count and W_i its bias energy:

    p_j       = sum_i n_ij / sum_i N_i exp(f_i - beta W_i(x_j))
    exp(-f_i) = sum_j p_j exp(-beta W_i(x_j))

Iterated in log space until max_i |f_i change| < tolerance, with f
anchored so that the first window's offset is zero.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from analysis.density import EmpiricalPdf, check_edges, pdf_from_masses
from enhanced_sampling.umbrella import UmbrellaWindow, window_histograms
from sde_sim.integrator import Trajectory
from shared.config import LogConfig
from shared.errors import InputError, WhamConvergenceError

logger = LogConfig.setup_logging("enhanced_sampling.wham")

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 100_000


@dataclass
class WhamInput:
    """Biased histograms of K windows over M shared bins."""

    bin_edges: np.ndarray
    histograms: np.ndarray
    bias_potentials: np.ndarray
    beta_eff: float
    counts: Optional[np.ndarray] = None

    def __post_init__(self):
        self.bin_edges = check_edges(self.bin_edges)
        self.histograms = np.atleast_2d(np.asarray(self.histograms, dtype=np.float64))
        self.bias_potentials = np.atleast_2d(np.asarray(self.bias_potentials, dtype=np.float64))
        n_bins = self.bin_edges.size - 1
        if self.histograms.shape[1] != n_bins:
            raise InputError(f"histograms have {self.histograms.shape[1]} bins, grid has {n_bins}")
        if self.bias_potentials.shape != self.histograms.shape:
            raise InputError(
                f"bias potentials {self.bias_potentials.shape} do not match histograms {self.histograms.shape}"
            )
        if np.any(self.histograms < 0) or not np.all(np.isfinite(self.histograms)):
            raise InputError("histogram counts must be finite and >= 0")
        if not np.all(np.isfinite(self.bias_potentials)):
            raise InputError("bias potentials must be finite")
        if not self.beta_eff > 0:
            raise InputError(f"beta_eff must be > 0, got {self.beta_eff}")
        if self.counts is None:
            self.counts = self.histograms.sum(axis=1)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.shape != (self.n_windows,) or np.any(self.counts < 0):
            raise InputError("counts must be one non-negative number per window")
        if not self.histograms.sum() > 0:
            raise InputError("WHAM needs at least one sample")

    @property
    def n_windows(self) -> int:
        return self.histograms.shape[0]

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])


def input_from_windows(trajectories: Sequence[Trajectory], windows: Sequence[UmbrellaWindow],
                       edges, beta_eff: float) -> WhamInput:
    """Fast-variable histograms of finished windows and their fast-bias energies.

    Windows without a fast restraint contribute a zero bias.
    """
    if len(trajectories) != len(windows):
        raise InputError(f"{len(trajectories)} trajectories for {len(windows)} windows")
    edges = check_edges(edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    bias = np.stack([
        np.zeros_like(centers) if w.fast_bias is None else w.fast_bias.potential(centers)
        for w in windows
    ])
    return WhamInput(edges, window_histograms(trajectories, edges), bias, beta_eff)


def _warn_on_gaps(active: np.ndarray) -> None:
    populated = np.flatnonzero(active)
    gaps = int(np.sum(~active[populated[0]:populated[-1] + 1]))
    if gaps:
        logger.warning(f"WHAM: {gaps} empty bins inside the sampled range; their density is zero")


def wham(data: WhamInput, tolerance: float = DEFAULT_TOLERANCE,
         max_iterations: int = DEFAULT_MAX_ITERATIONS) -> Tuple[EmpiricalPdf, np.ndarray]:
    """Unbiased pdf on the grid and per-window offsets f_i (f_0 = 0)."""
    if not tolerance > 0:
        raise InputError(f"tolerance must be > 0, got {tolerance}")
    if max_iterations < 1:
        raise InputError(f"max_iterations must be >= 1, got {max_iterations}")

    combined = data.histograms.sum(axis=0)
    active = combined > 0
    _warn_on_gaps(active)

    log_c = np.log(combined[active])
    with np.errstate(divide="ignore"):
        log_n = np.log(data.counts)
    beta_w = data.beta_eff * data.bias_potentials[:, active]
    beta_w_all = data.beta_eff * data.bias_potentials

    def solve_p(f: np.ndarray) -> np.ndarray:
        return log_c - logsumexp((log_n + f)[:, None] - beta_w, axis=0)

    f = np.zeros(data.n_windows)
    residual = np.inf
    for iteration in range(1, max_iterations + 1):
        log_p = solve_p(f)
        log_p_all = np.full(active.size, -np.inf)
        log_p_all[active] = log_p
        f_new = -logsumexp(log_p_all[None, :] - beta_w_all, axis=1)
        f_new -= f_new[0]
        residual = float(np.max(np.abs(f_new - f)))
        f = f_new
        if residual < tolerance:
            break
    else:
        raise WhamConvergenceError(residual, max_iterations)

    log_p = solve_p(f)
    masses = np.zeros(active.size)
    masses[active] = np.exp(log_p - logsumexp(log_p))
    logger.info(f"WHAM converged in {iteration} iterations over {data.n_windows} windows")
    return pdf_from_masses(data.bin_edges, masses), f
