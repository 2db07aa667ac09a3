"""
Test suite for the score network, its optimizer and checkpoints.
"""

import os
import sys
import tempfile

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from score_net.checkpoint import load_checkpoint, network_digest, save_checkpoint
from score_net.network import (
    GradientBundle, NormStats, ScoreNetwork, mlp_backward, mlp_forward,
)
from score_net.optim import AdamState, adam_step, adam_update
from sgm_engine.schedule import NoiseSchedule
from shared.errors import InputError

SCHEDULE = NoiseSchedule(sigma_min=0.01, sigma_max=5.0)


def small_network(seed: int = 0, label_dim: int = 1, random_output: bool = True) -> ScoreNetwork:
    """A 3-layer conditional net; optionally with a non-zero output layer."""
    rng = np.random.default_rng(seed)
    norm = NormStats(np.array([0.5, -0.2]), np.array([2.0, 0.5]),
                     np.zeros(label_dim), np.ones(label_dim))
    net = ScoreNetwork.create(2, label_dim, SCHEDULE, norm, seed=seed,
                              hidden_widths=(6, 5), n_fourier=2)
    if random_output:
        net.weights[-1] = rng.standard_normal(net.weights[-1].shape) * 0.5
        net.biases[-1] = rng.standard_normal(net.biases[-1].shape) * 0.1
    return net


def batch(seed: int = 1, n: int = 4):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((n, 2)), rng.uniform(0.2, 0.9, n),
            rng.standard_normal((n, 1)), rng.standard_normal((n, 2)))


class TestForward:
    """Test forward evaluation."""

    def test_zero_output_layer(self):
        """Test a freshly created network outputs zero."""
        net = small_network(random_output=False)
        x, t, y, _ = batch()
        assert np.array_equal(net.forward(x, t, y), np.zeros((4, 2)))

    def test_deterministic(self):
        """Test repeated evaluation is identical."""
        net = small_network()
        x, t, y, _ = batch()
        assert np.array_equal(net.forward(x, t, y), net.forward(x, t, y))

    def test_output_scales_with_inverse_sigma(self):
        """Test s = F / sigma(t)."""
        net = small_network()
        x, _, y, _ = batch(n=1)
        score, cache = net.forward_with_cache(x, 0.5, y)
        raw, _ = mlp_forward(net.weights, net.biases, cache.mlp.activations[0])
        np.testing.assert_allclose(score, raw / SCHEDULE.sigma(0.5), rtol=1e-14)

    def test_lipschitz_in_x(self):
        """Test difference quotients in x stay under the product of layer norms."""
        net = small_network(seed=4)
        rng = np.random.default_rng(9)
        x = rng.standard_normal((500, 2))
        step = rng.standard_normal((500, 2)) * 10.0 ** rng.uniform(-6, 0, size=(500, 1))
        y = rng.standard_normal((500, 1))
        diff = net.forward(x + step, 0.5, y, normalized=True) - net.forward(x, 0.5, y, normalized=True)
        quotients = np.linalg.norm(diff, axis=1) / np.linalg.norm(step, axis=1)

        silu_slope = 1.1
        bound = np.linalg.norm(net.weights[0][:net.data_dim], 2) / SCHEDULE.sigma(0.5)
        for w in net.weights[1:]:
            bound *= silu_slope * np.linalg.norm(w, 2)
        assert np.all(np.isfinite(quotients))
        assert quotients.max() > 0.0
        assert np.all(quotients <= bound)

    def test_conditional_needs_label(self):
        """Test label requirements."""
        net = small_network()
        x, t, _, _ = batch()
        with pytest.raises(InputError, match="needs a label"):
            net.forward(x, t)

    def test_rejects_bad_inputs(self):
        """Test input validation."""
        net = small_network()
        with pytest.raises(InputError, match="columns"):
            net.forward(np.zeros((2, 3)), 0.5, 0.0)
        with pytest.raises(InputError, match="finite"):
            net.forward([[np.nan, 0.0]], 0.5, 0.0)
        with pytest.raises(InputError, match="diffusion time"):
            net.forward([[0.0, 0.0]], 0.0, 0.0)

    def test_layout_validation(self):
        """Test mismatched layer shapes are rejected."""
        net = small_network()
        with pytest.raises(InputError):
            ScoreNetwork(net.layer_widths, net.weights[:-1], net.biases, net.fourier_features,
                         net.norm_stats, net.schedule)


class TestBackward:
    """Test hand-written reverse mode against finite differences."""

    def test_single_parameter(self):
        """Test f(w) = w * x at x = 2 has gradient 2."""
        out, cache = mlp_forward([np.array([[0.7]])], [np.zeros(1)], np.array([[2.0]]))
        assert out[0, 0] == pytest.approx(1.4)
        grad_w, grad_b = mlp_backward([np.array([[0.7]])], cache, np.array([[1.0]]))
        assert grad_w[0][0, 0] == pytest.approx(2.0)
        assert grad_b[0][0] == pytest.approx(1.0)

    def test_zero_upstream_gradient(self):
        """Test a zero upstream gradient gives an all-zero bundle."""
        net = small_network()
        x, t, y, _ = batch()
        grads = net.backward(x, t, y, np.zeros((4, 2)))
        assert not np.any(grads.flat())

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, seed):
        """Test every parameter gradient against central differences."""
        net = small_network(seed)
        x, t, y, upstream = batch(seed + 100)

        def objective() -> float:
            return float(np.sum(upstream * net.forward(x, t, y)))

        grads = net.backward(x, t, y, upstream).arrays()
        step = 1e-6
        for param, grad in zip(net.parameters(), grads):
            fd = np.empty_like(param)
            for idx in np.ndindex(param.shape):
                saved = param[idx]
                param[idx] = saved + step
                up = objective()
                param[idx] = saved - step
                down = objective()
                param[idx] = saved
                fd[idx] = (up - down) / (2 * step)
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)

    def test_upstream_shape_checked(self):
        """Test upstream gradient validation."""
        net = small_network()
        x, t, y, _ = batch()
        with pytest.raises(InputError, match="upstream gradient"):
            net.backward(x, t, y, np.zeros((3, 2)))


class TestNormStats:
    """Test data normalization."""

    def test_fit_and_invert(self):
        """Test normalization statistics and inversion."""
        rng = np.random.default_rng(3)
        points = rng.normal([5.0, 0.0], [2.0, 0.3], size=(500, 2))
        labels = points[:, :1]
        stats = NormStats.fit(points, labels)
        xn = stats.normalize_x(points)
        np.testing.assert_allclose(xn.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(xn.std(axis=0), 1.0, rtol=1e-12)
        np.testing.assert_allclose(stats.denormalize_x(xn), points, rtol=1e-12)
        assert stats.label_min == labels.min()
        assert stats.label_max == labels.max()

    def test_constant_column(self):
        """Test constant columns keep unit scale."""
        stats = NormStats.fit(np.column_stack([np.ones(10), np.arange(10.0)]))
        assert stats.x_scale[0] == 1.0

    def test_dict_round_trip(self):
        """Test serialization of the statistics."""
        stats = NormStats.fit(np.random.default_rng(0).standard_normal((20, 2)), np.arange(20.0))
        copy = NormStats.from_dict(stats.to_dict())
        assert np.array_equal(copy.x_mean, stats.x_mean)
        assert copy.label_max == stats.label_max


class TestAdam:
    """Test the Adam optimizer."""

    def test_zero_gradient(self):
        """Test a zero gradient leaves parameters unchanged."""
        net = small_network()
        before = [p.copy() for p in net.parameters()]
        adam_step(net, GradientBundle.zeros_like(net), AdamState.for_network(net), lr=1e-2)
        for a, b in zip(before, net.parameters()):
            assert np.array_equal(a, b)

    def test_first_step_is_sign(self):
        """Test the bias-corrected first step is lr * sign(g)."""
        params = [np.zeros(4)]
        grads = [np.array([3.0, -0.2, 1e-3, -50.0])]
        adam_update(params, grads, AdamState.for_parameters(params), lr=1e-2)
        np.testing.assert_allclose(params[0], -1e-2 * np.sign(grads[0]), rtol=1e-4)

    def test_quadratic_bowl(self):
        """Test convergence on (p - 1.5)^2 from p = 1."""
        params = [np.array([1.0])]
        state = AdamState.for_parameters(params)
        for _ in range(500):
            adam_update(params, [2.0 * (params[0] - 1.5)], state, lr=1e-2)
        assert abs(params[0][0] - 1.5) < 1e-3
        assert state.step == 500

    def test_shape_mismatch(self):
        """Test gradient bundles must match the network."""
        net = small_network()
        other = ScoreNetwork.create(2, 1, SCHEDULE, net.norm_stats, seed=0,
                                    hidden_widths=(3,), n_fourier=2)
        with pytest.raises(InputError):
            adam_step(net, GradientBundle.zeros_like(other), AdamState.for_network(net), lr=1e-2)


class TestCheckpoint:
    """Test checkpoint files."""

    def test_bitwise_round_trip(self):
        """Test save -> load reproduces every parameter and output."""
        net = small_network(seed=4)
        x, t, y, _ = batch()
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "checkpoint.json")
            save_checkpoint(net, path, {"label_name": "x1"})
            loaded, metadata = load_checkpoint(path)

        assert metadata == {"label_name": "x1"}
        for a, b in zip(net.parameters(), loaded.parameters()):
            assert np.array_equal(a, b)
        assert np.array_equal(net.fourier_features, loaded.fourier_features)
        assert loaded.schedule == net.schedule
        assert np.array_equal(net.forward(x, t, y), loaded.forward(x, t, y))
        assert network_digest(net) == network_digest(loaded)

    def test_rejects_foreign_json(self):
        """Test format checking."""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "other.json")
            with open(path, "w") as f:
                f.write('{"format": "something-else"}')
            with pytest.raises(InputError, match="not a score-network checkpoint"):
                load_checkpoint(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
