"""
Analytic stationary densities of the fast variable.

For a fixed slow value the fast equation dx2 = -V'(x2) dt + a3 dB has the
stationary density exp(-2 V / a3^2) / Z. Bins are integrated by trapezoidal
quadrature on a refined grid, so the result is directly comparable with
histograms on the same edges.
"""

from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from analysis.density import EmpiricalPdf, check_edges, pdf_from_masses
from sde_sim.systems import FastSlowSystem
from shared.config import LogConfig
from shared.errors import InputError

logger = LogConfig.setup_logging("sde_sim.oracle")

# Sub-intervals per bin used for quadrature.
REFINE = 16


def boltzmann_bin_pdf(potential: Callable[[np.ndarray], np.ndarray], beta: float,
                      edges, refine: int = REFINE) -> EmpiricalPdf:
    """Bin-averaged density proportional to exp(-beta * potential) on edges."""
    edges = check_edges(edges)
    if refine < 1:
        raise InputError(f"refine must be >= 1, got {refine}")
    n_bins = edges.size - 1
    frac = np.linspace(0.0, 1.0, refine + 1)
    points = edges[:-1, None] + np.diff(edges)[:, None] * frac[None, :]
    log_w = -beta * np.asarray(potential(points.ravel()), dtype=np.float64).reshape(n_bins, refine + 1)
    log_w -= np.max(log_w)
    masses = trapezoid(np.exp(log_w), points, axis=1)
    return pdf_from_masses(edges, masses)


def stationary_conditional_pdf(system: FastSlowSystem, slow_value: float, grid) -> EmpiricalPdf:
    """Stationary density of the fast variable at a fixed slow value.

    grid holds the bin edges of the returned pdf.
    """
    edges = check_edges(grid)
    if system.is_bimodal(slow_value) and (edges[0] > -1.0 or edges[-1] < 1.0):
        logger.warning(
            f"grid [{edges[0]}, {edges[-1]}] does not cover both wells at slow={slow_value}"
        )
    return boltzmann_bin_pdf(lambda x: system.fast_potential(x, slow_value), system.beta_eff, edges)


def sample_stationary_fast(system: FastSlowSystem, slow_value: float,
                           rng: np.random.Generator, low: float = -3.0,
                           high: float = 3.0, n_points: int = 6001) -> float:
    """Draw one fast value from the stationary conditional density."""
    x = np.linspace(low, high, n_points)
    log_w = -system.beta_eff * system.fast_potential(x, slow_value)
    w = np.exp(log_w - log_w.max())
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(x))))
    cdf /= cdf[-1]
    return float(np.interp(rng.uniform(), cdf, x))
