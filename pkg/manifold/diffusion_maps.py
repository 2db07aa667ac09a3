"""
Diffusion maps for data-driven slow coordinates.

    K_ij   = exp(-|p_i - p_j|^2 / eps)
    K~     = D^-alpha K D^-alpha          (D = diag of K row sums)
    M      = D~^-1 K~                     (row-stochastic)

Eigenpairs of M come from the symmetric conjugate D~^-1/2 K~ D~^-1/2.
Right eigenvectors are normalized to unit norm under the stationary
measure, which makes the trivial one identically 1.
"""

import json
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import pdist, squareform

from sgm_engine.dataset import LabeledDataset
from shared.config import Config, LogConfig
from shared.errors import InputError

logger = LogConfig.setup_logging("manifold.diffusion_maps")


@dataclass
class DiffusionMapResult:
    """Leading eigenpairs of the diffusion operator.

    eigenvectors[:, 0] is the trivial (constant) coordinate; column 1 is
    the label coordinate Phi_1.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    bandwidth: float
    alpha: float

    @property
    def n_points(self) -> int:
        return self.eigenvectors.shape[0]

    @property
    def phi1(self) -> np.ndarray:
        return self.eigenvectors[:, 1]

    def metadata(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "alpha": self.alpha,
            "eigenvalues": self.eigenvalues.tolist(),
            "n_points": self.n_points,
        }

    def export(self, csv_path: str, metadata_path: str) -> None:
        """CSV of (index, Phi_1..Phi_k) and a JSON metadata record."""
        k = self.eigenvectors.shape[1]
        rows = np.column_stack([np.arange(self.n_points), self.eigenvectors[:, 1:]])
        header = ",".join(["index"] + [f"phi{i}" for i in range(1, k)])
        np.savetxt(csv_path, rows, delimiter=",", header=header, comments="",
                   fmt=["%d"] + ["%.17g"] * (k - 1))
        with open(metadata_path, "w", encoding="utf-8") as f:
            json.dump(self.metadata(), f, indent=2)


def _check_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.ndim != 2 or points.shape[0] < 3:
        raise InputError("diffusion maps need at least 3 points")
    if not np.all(np.isfinite(points)):
        raise InputError("points must be finite")
    if np.unique(points, axis=0).shape[0] < 3:
        raise InputError("diffusion maps need at least 3 distinct points")
    if points.shape[0] > Config.MAX_DMAP_POINTS:
        raise InputError(
            f"{points.shape[0]} points exceed the dense eigensolve cap of "
            f"{Config.MAX_DMAP_POINTS}; subsample first"
        )
    return points


def default_bandwidth(sq_dists: np.ndarray) -> float:
    """Median of the pairwise squared distances (condensed form)."""
    return float(np.median(sq_dists))


def normalized_kernel(points, bandwidth: Optional[float] = None,
                      alpha: float = 1.0) -> Tuple[np.ndarray, np.ndarray, float]:
    """alpha-normalized kernel K~, its row sums and the bandwidth used."""
    points = _check_points(points)
    sq = pdist(points, metric="sqeuclidean")
    eps = default_bandwidth(sq) if bandwidth is None else float(bandwidth)
    if not eps > 0:
        raise InputError(f"bandwidth must be > 0, got {eps}")
    kernel = squareform(np.exp(-sq / eps))
    np.fill_diagonal(kernel, 1.0)
    q = kernel.sum(axis=1) ** alpha
    kernel = kernel / np.outer(q, q)
    return kernel, kernel.sum(axis=1), eps


def transition_matrix(points, bandwidth: Optional[float] = None, alpha: float = 1.0) -> np.ndarray:
    """Row-stochastic diffusion matrix M."""
    kernel, d, _ = normalized_kernel(points, bandwidth, alpha)
    return kernel / d[:, None]


def diffusion_maps(points, bandwidth: Optional[float] = None, alpha: float = 1.0,
                   n_eigenpairs: int = 4) -> DiffusionMapResult:
    """Leading n_eigenpairs eigenpairs of the diffusion operator, descending."""
    if n_eigenpairs < 2:
        raise InputError(f"n_eigenpairs must be >= 2, got {n_eigenpairs}")
    points = _check_points(points)
    n = points.shape[0]
    n_eigenpairs = min(n_eigenpairs, n)
    kernel, d, eps = normalized_kernel(points, bandwidth, alpha)

    inv_sqrt_d = 1.0 / np.sqrt(d)
    sym = kernel * np.outer(inv_sqrt_d, inv_sqrt_d)
    sym = 0.5 * (sym + sym.T)
    values, vectors = eigh(sym, subset_by_index=[n - n_eigenpairs, n - 1])
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]

    psi = vectors * inv_sqrt_d[:, None]
    pi = d / d.sum()
    psi /= np.sqrt(np.sum(pi[:, None] * psi ** 2, axis=0))[None, :]
    if np.mean(psi[:, 0]) < 0:
        psi[:, 0] = -psi[:, 0]

    # orient nontrivial coordinates to correlate non-negatively with the first data column
    centered = points[:, 0] - points[:, 0].mean()
    for j in range(1, psi.shape[1]):
        if np.dot(psi[:, j] - psi[:, j].mean(), centered) < 0:
            psi[:, j] = -psi[:, j]

    logger.info(f"Diffusion maps on {n} points: eps={eps:.4g}, eigenvalues {np.round(values, 6).tolist()}")
    return DiffusionMapResult(values, psi, eps, alpha)


def label_dataset(points, result: DiffusionMapResult, label_name: str = "phi1") -> LabeledDataset:
    """Label points by Phi_1, standardized to zero mean and unit variance."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] != result.n_points:
        raise InputError(f"{points.shape[0]} points but {result.n_points} eigenvector entries")
    phi = result.phi1
    mean, std = float(phi.mean()), float(phi.std())
    if not std > 1e-12 * max(1.0, abs(mean)):
        raise InputError("Phi_1 has zero variance; cannot use it as a label")
    transform = {"source": "diffusion_maps", "mean": mean, "std": std, **result.metadata()}
    return LabeledDataset(points, (phi - mean) / std, label_name, transform)
