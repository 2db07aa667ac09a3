"""
Test suite for diffusion maps and diffusion-map labels.
"""

import json
import os
import sys
import tempfile
from unittest.mock import patch

import numpy as np
import pytest
from scipy.spatial.distance import pdist
from scipy.stats import spearmanr

# Add parent directory to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from manifold.diffusion_maps import (
    DiffusionMapResult, diffusion_maps, label_dataset, transition_matrix,
)
from shared.config import Config
from shared.errors import InputError


def anisotropic_cloud(n: int = 60, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(0, 5, n), rng.normal(0, 0.3, n)])


def two_strips(n: int = 1500, seed: int = 0) -> np.ndarray:
    """Slow coordinate x1 on [0, 10]; x2 sits in one of two wells at +-1."""
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(0, 10, n)
    x2 = rng.choice([-1.0, 1.0], n) + rng.normal(0, 0.1, n)
    return np.column_stack([x1, x2])


class TestDiffusionMaps:
    """Test the diffusion-map eigensolve."""

    def test_three_collinear_points(self):
        """Test Phi_1 is antisymmetric about the middle point."""
        result = diffusion_maps(np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
        phi = result.phi1
        assert phi[1] == pytest.approx(0.0, abs=1e-10)
        assert phi[0] == pytest.approx(-phi[2], rel=1e-10)
        assert phi[0] < 0 < phi[2]
        assert result.eigenvalues[0] == pytest.approx(1.0, abs=1e-8)
        assert result.eigenvectors.shape == (3, 3)

    def test_trivial_eigenvector(self):
        """Test the leading pair is (1, constant)."""
        result = diffusion_maps(anisotropic_cloud())
        assert result.eigenvalues[0] == pytest.approx(1.0, abs=1e-8)
        np.testing.assert_allclose(result.eigenvectors[:, 0], 1.0, rtol=1e-8)

    def test_eigenvalues_descending_and_bounded(self):
        """Test spectral ordering and bounds."""
        values = diffusion_maps(anisotropic_cloud(), n_eigenpairs=6).eigenvalues
        assert np.all(np.diff(values) <= 0)
        assert np.all(values <= 1.0 + 1e-10)
        assert np.all(values > -1.0 - 1e-10)

    def test_right_eigenvectors(self):
        """Test M psi = lambda psi for the returned pairs."""
        points = anisotropic_cloud()
        result = diffusion_maps(points)
        m = transition_matrix(points, result.bandwidth, result.alpha)
        np.testing.assert_allclose(m @ result.eigenvectors, result.eigenvectors * result.eigenvalues,
                                   atol=1e-10)

    def test_row_stochastic(self):
        """Test every row of M sums to one."""
        m = transition_matrix(anisotropic_cloud(80, seed=3), alpha=0.5)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-10)
        assert np.all(m >= 0)

    def test_median_bandwidth(self):
        """Test the default bandwidth is the median squared distance."""
        points = anisotropic_cloud()
        result = diffusion_maps(points)
        assert result.bandwidth == pytest.approx(np.median(pdist(points, "sqeuclidean")))
        assert diffusion_maps(points, bandwidth=2.5).bandwidth == 2.5

    def test_permutation_equivariance(self):
        """Test permuting points permutes Phi_1."""
        points = anisotropic_cloud()
        perm = np.random.default_rng(1).permutation(points.shape[0])
        a = diffusion_maps(points)
        b = diffusion_maps(points[perm])
        np.testing.assert_allclose(b.eigenvalues, a.eigenvalues, atol=1e-10)
        np.testing.assert_allclose(b.phi1, a.phi1[perm], atol=1e-8)

    def test_slow_coordinate_recovered(self):
        """Test Phi_1 ranks points like the slow coordinate."""
        points = two_strips()
        rho = spearmanr(diffusion_maps(points).phi1, points[:, 0]).correlation
        assert abs(rho) >= 0.99

    def test_degenerate_input(self):
        """Test too few distinct points are rejected."""
        with pytest.raises(InputError, match="at least 3 points"):
            diffusion_maps(np.zeros((2, 2)))
        with pytest.raises(InputError, match="distinct"):
            diffusion_maps(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]))
        with pytest.raises(InputError, match="n_eigenpairs"):
            diffusion_maps(anisotropic_cloud(), n_eigenpairs=1)
        with pytest.raises(InputError, match="finite"):
            diffusion_maps(np.array([[0.0, 0.0], [1.0, np.nan], [2.0, 0.0]]))

    def test_point_cap(self):
        """Test the dense eigensolve cap."""
        with patch.object(Config, 'MAX_DMAP_POINTS', 10):
            with pytest.raises(InputError, match="cap"):
                diffusion_maps(anisotropic_cloud(11))

    def test_export(self):
        """Test CSV and metadata export."""
        result = diffusion_maps(anisotropic_cloud(20))
        with tempfile.TemporaryDirectory() as temp_dir:
            csv_path = os.path.join(temp_dir, "dmap.csv")
            meta_path = os.path.join(temp_dir, "dmap.json")
            result.export(csv_path, meta_path)
            with open(csv_path) as f:
                header = f.readline().strip()
            rows = np.loadtxt(csv_path, delimiter=",", skiprows=1)
            with open(meta_path) as f:
                metadata = json.load(f)
        assert header == "index,phi1,phi2,phi3"
        np.testing.assert_allclose(rows[:, 1], result.phi1)
        assert metadata["n_points"] == 20
        assert metadata["bandwidth"] == result.bandwidth


class TestLabelDataset:
    """Test Phi_1 labels."""

    def test_standardized_labels(self):
        """Test labels are Phi_1 standardized, with the transform recorded."""
        points = anisotropic_cloud()
        result = diffusion_maps(points)
        dataset = label_dataset(points, result)
        labels = dataset.labels[:, 0]
        assert labels.mean() == pytest.approx(0.0, abs=1e-12)
        assert labels.std() == pytest.approx(1.0, rel=1e-12)
        t = dataset.label_transform
        np.testing.assert_allclose(labels * t["std"] + t["mean"], result.phi1, rtol=1e-12)
        assert t["source"] == "diffusion_maps"
        assert dataset.label_name == "phi1"

    def test_sign_flip(self):
        """Test a sign-flipped Phi_1 flips the labels."""
        points = anisotropic_cloud()
        result = diffusion_maps(points)
        flipped = DiffusionMapResult(result.eigenvalues, result.eigenvectors * np.array([1, -1, 1, 1]),
                                     result.bandwidth, result.alpha)
        np.testing.assert_allclose(label_dataset(points, flipped).labels,
                                   -label_dataset(points, result).labels, atol=1e-12)

    def test_constant_eigenvector_rejected(self):
        """Test a zero-variance label is rejected."""
        points = anisotropic_cloud(5)
        result = DiffusionMapResult(np.array([1.0, 0.5]), np.ones((5, 2)), 1.0, 1.0)
        with pytest.raises(InputError, match="zero variance"):
            label_dataset(points, result)

    def test_length_mismatch(self):
        """Test points and eigenvectors must align."""
        result = diffusion_maps(anisotropic_cloud(10))
        with pytest.raises(InputError, match="eigenvector entries"):
            label_dataset(anisotropic_cloud(12), result)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
