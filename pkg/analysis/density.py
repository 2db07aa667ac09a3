"""
Histogram densities and the L1 metric used to score them.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from shared.errors import InputError

MASS_TOLERANCE = 1e-8


def uniform_edges(low: float, high: float, n_bins: int) -> np.ndarray:
    """Uniform bin edges on [low, high]."""
    if not high > low:
        raise InputError(f"grid high ({high}) must exceed low ({low})")
    if n_bins < 1:
        raise InputError(f"n_bins must be >= 1, got {n_bins}")
    return np.linspace(low, high, n_bins + 1)


def check_edges(edges) -> np.ndarray:
    """Validate bin edges: finite, strictly increasing, at least two."""
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise InputError("bin edges need at least two points")
    if not np.all(np.isfinite(edges)):
        raise InputError("bin edges must be finite")
    if not np.all(np.diff(edges) > 0):
        raise InputError("bin edges must be strictly increasing")
    return edges


@dataclass
class EmpiricalPdf:
    """Binned density with fixed support.

    densities integrate to one over the bins. When built from samples,
    out_of_range_fraction is the share of samples that fell outside the
    edges; the in-range density then describes the remaining share.
    """

    bin_edges: np.ndarray
    densities: np.ndarray
    n_samples: Optional[int] = None
    n_out_of_range: int = 0

    def __post_init__(self):
        self.bin_edges = check_edges(self.bin_edges)
        self.densities = np.asarray(self.densities, dtype=np.float64)
        if self.densities.shape != (self.bin_edges.size - 1,):
            raise InputError(
                f"{self.bin_edges.size - 1} bins but {self.densities.size} densities"
            )
        if np.any(self.densities < 0) or not np.all(np.isfinite(self.densities)):
            raise InputError("densities must be finite and non-negative")

    @property
    def bin_widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def bin_centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def masses(self) -> np.ndarray:
        return self.densities * self.bin_widths

    @property
    def out_of_range_fraction(self) -> float:
        if not self.n_samples:
            return 0.0
        return self.n_out_of_range / self.n_samples

    @property
    def in_range_fraction(self) -> float:
        return 1.0 - self.out_of_range_fraction

    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def mass_between(self, low: float, high: float) -> float:
        """Probability mass of bins whose centers lie in [low, high]."""
        centers = self.bin_centers
        return float(np.sum(self.masses[(centers >= low) & (centers <= high)]))

    def modes(self, min_separation: float = 0.5, rel_height: float = 0.05) -> np.ndarray:
        """Centers of local density maxima, highest first.

        Peaks lower than rel_height times the global maximum, or closer than
        min_separation to a higher peak, are dropped.
        """
        d = self.densities
        if d.size == 0 or d.max() <= 0:
            return np.empty(0)
        padded = np.concatenate(([-np.inf], d, [-np.inf]))
        is_peak = (padded[1:-1] >= padded[:-2]) & (padded[1:-1] > padded[2:])
        is_peak &= d >= rel_height * d.max()
        centers = self.bin_centers
        kept = []
        for idx in np.argsort(-d):
            if not is_peak[idx]:
                continue
            if all(abs(centers[idx] - c) >= min_separation for c in kept):
                kept.append(centers[idx])
        return np.asarray(kept)

    def to_rows(self) -> np.ndarray:
        """(bin center, density) rows for CSV export."""
        return np.column_stack([self.bin_centers, self.densities])


def pdf_from_masses(edges: np.ndarray, masses: np.ndarray, **kwargs) -> EmpiricalPdf:
    """Normalize per-bin masses into a unit-integral EmpiricalPdf."""
    edges = check_edges(edges)
    masses = np.asarray(masses, dtype=np.float64)
    total = masses.sum()
    if not total > 0:
        raise InputError("cannot normalize a density with zero total mass")
    return EmpiricalPdf(edges, masses / total / np.diff(edges), **kwargs)


def estimate_pdf(samples, edges) -> EmpiricalPdf:
    """Normalized histogram density of samples on the given bin edges.

    Samples outside [edges[0], edges[-1]] are counted in n_out_of_range.
    """
    edges = check_edges(edges)
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise InputError("cannot estimate a density from zero samples")
    if not np.all(np.isfinite(samples)):
        raise InputError("samples must be finite")
    counts, _ = np.histogram(samples, bins=edges)
    in_range = int(counts.sum())
    if in_range == 0:
        raise InputError(
            f"all {samples.size} samples lie outside [{edges[0]}, {edges[-1]}]"
        )
    return pdf_from_masses(
        edges, counts.astype(np.float64),
        n_samples=int(samples.size),
        n_out_of_range=int(samples.size - in_range),
    )


def l1_distance(p: EmpiricalPdf, q: EmpiricalPdf) -> float:
    """Sum over bins of |p - q| times bin width."""
    if p.bin_edges.shape != q.bin_edges.shape or not np.array_equal(p.bin_edges, q.bin_edges):
        raise InputError("l1_distance needs pdfs on identical bin edges")
    return float(np.sum(np.abs(p.densities - q.densities) * p.bin_widths))
