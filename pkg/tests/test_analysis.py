"""
Test suite for density estimation, the L1 metric and the convergence benchmark.
"""

import os
import sys
import tempfile
from unittest.mock import patch

import numpy as np
import pytest
from scipy.stats import norm

# Add parent directory to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from analysis.convergence import (
    ConvergenceCurve, MethodTag, convergence_study, study_metadata,
)
from analysis.density import (
    EmpiricalPdf, estimate_pdf, l1_distance, pdf_from_masses, uniform_edges,
)
from enhanced_sampling.pipeline import WindowConfig
from sde_sim.oracle import sample_stationary_fast
from sde_sim.systems import FastSlowSystem
from shared.errors import InputError


def random_pdf(rng: np.random.Generator, edges: np.ndarray) -> EmpiricalPdf:
    return pdf_from_masses(edges, rng.uniform(0, 1, edges.size - 1))


class TestEstimatePdf:
    """Test histogram density estimation."""

    def test_single_bin(self):
        """Test samples in one bin give density 1 / bin_width."""
        pdf = estimate_pdf([0.3, 0.31, 0.35], [0.0, 0.25, 0.5, 1.0])
        np.testing.assert_allclose(pdf.densities, [0.0, 4.0, 0.0])

    def test_standard_normal(self):
        """Test 10^6 normal samples against the analytic pdf."""
        edges = uniform_edges(-5.0, 5.0, 200)
        samples = np.random.default_rng(0).standard_normal(1_000_000)
        exact = pdf_from_masses(edges, np.diff(norm.cdf(edges)))
        assert l1_distance(estimate_pdf(samples, edges), exact) <= 0.02

    def test_mass_accounting(self):
        """Test the in-range integral is one and the out-of-range share matches the samples."""
        samples = np.random.default_rng(1).normal(0, 2, 10_000)
        pdf = estimate_pdf(samples, uniform_edges(-2.0, 2.0, 40))
        assert pdf.total_mass() == pytest.approx(1.0, abs=1e-10)
        expected_out = np.mean(np.abs(samples) > 2.0)
        assert pdf.out_of_range_fraction == pytest.approx(expected_out, abs=1e-12)

    def test_errors(self):
        """Test empty and fully out-of-range inputs."""
        with pytest.raises(InputError, match="zero samples"):
            estimate_pdf([], [0.0, 1.0])
        with pytest.raises(InputError, match="outside"):
            estimate_pdf([5.0, 6.0], [0.0, 1.0])
        with pytest.raises(InputError, match="strictly increasing"):
            estimate_pdf([0.5], [1.0, 0.0])

    def test_modes(self):
        """Test mode detection on a two-peak density."""
        edges = uniform_edges(-2.0, 2.0, 8)
        pdf = pdf_from_masses(edges, [0, 1, 5, 1, 1, 4, 1, 0])
        np.testing.assert_allclose(pdf.modes(min_separation=0.5), [-0.75, 0.75])


class TestL1Distance:
    """Test the L1 metric on shared grids."""

    def test_identity(self):
        """Test d(p, p) = 0."""
        pdf = random_pdf(np.random.default_rng(0), uniform_edges(0, 1, 10))
        assert l1_distance(pdf, pdf) == 0.0

    def test_disjoint_support(self):
        """Test disjoint unit-mass pdfs are at distance 2."""
        edges = uniform_edges(0, 2, 2)
        assert l1_distance(pdf_from_masses(edges, [1, 0]), pdf_from_masses(edges, [0, 1])) == pytest.approx(2.0)

    def test_half_overlap(self):
        """Test half-overlapping uniform pdfs are at distance 1."""
        edges = uniform_edges(0, 4, 4)
        p = pdf_from_masses(edges, [1, 1, 0, 0])
        q = pdf_from_masses(edges, [0, 1, 1, 0])
        assert l1_distance(p, q) == pytest.approx(1.0)

    def test_metric_properties(self):
        """Test symmetry and the triangle inequality on random triples."""
        rng = np.random.default_rng(5)
        edges = uniform_edges(-1, 1, 25)
        for _ in range(50):
            p, q, r = (random_pdf(rng, edges) for _ in range(3))
            assert l1_distance(p, q) == pytest.approx(l1_distance(q, p), abs=1e-15)
            assert l1_distance(p, r) <= l1_distance(p, q) + l1_distance(q, r) + 1e-12

    def test_grid_mismatch(self):
        """Test pdfs on different grids are rejected."""
        p = pdf_from_masses(uniform_edges(0, 1, 4), np.ones(4))
        q = pdf_from_masses(uniform_edges(0, 2, 4), np.ones(4))
        with pytest.raises(InputError, match="identical bin edges"):
            l1_distance(p, q)


class TestConvergenceCurve:
    """Test convergence curve aggregation."""

    def test_from_errors(self):
        """Test mean and standard error over experiments."""
        errors = np.array([[1.0, 0.5], [3.0, 0.7]])
        curve = ConvergenceCurve.from_errors([10, 20], errors, MethodTag.US_ONLY)
        np.testing.assert_allclose(curve.mean_l1, [2.0, 0.6])
        np.testing.assert_allclose(curve.stderr_l1, [1.0, 0.1])
        assert curve.n_experiments == 2

    def test_validation(self):
        """Test unequal lengths and negative errors are rejected."""
        with pytest.raises(InputError, match="equal lengths"):
            ConvergenceCurve([1, 2], [0.1], [0.1, 0.1], 2, "USOnly")
        with pytest.raises(InputError, match="non-negative"):
            ConvergenceCurve([1], [-0.1], [0.1], 2, "USOnly")

    def test_write_csv(self):
        """Test the curve CSV layout."""
        curve = ConvergenceCurve([10, 20], [0.5, 0.25], [0.1, 0.05], 4, MethodTag.COUPLED_SGM_US)
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "curve.csv")
            curve.write_csv(path)
            with open(path) as f:
                lines = f.read().splitlines()
        assert lines[0] == "sample_size,mean_l1,stderr_l1,n_experiments,method_tag"
        assert lines[1] == "10,0.5,0.1,4,CoupledSgmUs"


class _Checkpoint:
    """Stand-in checkpoint; generation is patched."""

    label_dim = 1


class TestConvergenceStudy:
    """Test the convergence benchmark."""

    @pytest.fixture
    def fixed_well(self):
        return FastSlowSystem.fixed_well(h=8.0, k=0.0)

    def test_needs_two_experiments(self, fixed_well):
        """Test n_experiments >= 2."""
        with pytest.raises(InputError, match="n_experiments"):
            convergence_study(fixed_well, None, np.array([[5.0, 1.0]]), [10], n_experiments=1, label=5.0)

    def test_sample_sizes_validated(self, fixed_well):
        """Test sample sizes must be distinct positive integers."""
        with pytest.raises(InputError, match="sample sizes"):
            convergence_study(fixed_well, None, np.array([[5.0, 1.0]]), [10, 10], n_experiments=2, label=5.0)

    def test_deterministic(self, fixed_well):
        """Test a fixed seed reproduces the curves."""
        kwargs = dict(sample_sizes=[20, 50], n_experiments=2, seed=4, n_windows=3,
                      window_config=WindowConfig(center=5.0))
        a = convergence_study(fixed_well, None, np.array([[5.0, 1.0]]), **kwargs)
        b = convergence_study(fixed_well, None, np.array([[5.0, 1.0]]), **kwargs)
        assert list(a) == [MethodTag.US_ONLY]
        assert np.array_equal(a[MethodTag.US_ONLY].mean_l1, b[MethodTag.US_ONLY].mean_l1)
        assert np.array_equal(a[MethodTag.US_ONLY].sample_sizes, [20, 50])

    def test_coupled_beats_single_well_start(self, fixed_well):
        """Test generated starts in both wells reach a lower L1 error."""

        def stationary_generate(net, label, n_samples, n_steps, seed):
            rng = np.random.default_rng(seed)
            return np.array([[label, sample_stationary_fast(fixed_well, label, rng)] for _ in range(n_samples)])

        with patch("analysis.convergence.generate", side_effect=stationary_generate) as generate:
            curves = convergence_study(fixed_well, _Checkpoint(), np.array([[5.0, 1.0]]), [100, 300],
                                       n_experiments=4, seed=1, label=5.0, n_windows=10)
        assert generate.call_args.args[2] == 40
        us, coupled = curves[MethodTag.US_ONLY], curves[MethodTag.COUPLED_SGM_US]
        assert np.all(us.mean_l1 > 0.9)
        assert np.all(coupled.mean_l1 < us.mean_l1)

        metadata = study_metadata(curves, 10)
        assert metadata["total_pooled_steps"] == [1000, 3000]
        assert metadata["dispersion"] == "standard error of the mean"
        assert metadata["methods"] == ["USOnly", "CoupledSgmUs"]

    @pytest.mark.slow
    def test_gap_narrows_with_sample_size(self):
        """Test both errors fall and the gap closes once windows cross the barrier."""
        # a3 = sqrt(2) puts the h = 4 barrier at about 4 kT, a crossing every ~1500 steps
        system = FastSlowSystem.fixed_well(h=4.0, k=0.0, epsilon=np.sqrt(2.0) / 1e-4)
        assert system.beta_eff == pytest.approx(1.0)

        def stationary_generate(net, label, n_samples, n_steps, seed):
            rng = np.random.default_rng(seed)
            return np.array([[label, sample_stationary_fast(system, label, rng)] for _ in range(n_samples)])

        with patch("analysis.convergence.generate", side_effect=stationary_generate):
            curves = convergence_study(system, _Checkpoint(), np.array([[5.0, 1.0]]), [100, 1000, 10_000],
                                       n_experiments=4, seed=2, label=5.0, n_windows=10)
        us, coupled = curves[MethodTag.US_ONLY], curves[MethodTag.COUPLED_SGM_US]
        gap = us.mean_l1 - coupled.mean_l1
        assert us.mean_l1[-1] < us.mean_l1[0]
        assert coupled.mean_l1[-1] < coupled.mean_l1[0]
        assert gap[0] > 0.3
        assert gap[-1] < 0.5 * gap[0]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
