"""
Shared fixtures: a conditional score model trained on MovingWell data.
"""

import os
import sys
from typing import NamedTuple

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from score_net.network import ScoreNetwork
from sde_sim.integrator import EnsembleSpec, simulate_ensemble
from sde_sim.systems import SLOW, FastSlowSystem
from sgm_engine.dataset import LabeledDataset
from sgm_engine.training import TrainConfig, train


class TrainedModel(NamedTuple):
    system: FastSlowSystem
    network: ScoreNetwork
    points: np.ndarray


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains a score model or runs long windows")


@pytest.fixture(scope="session")
def trained_moving_well() -> TrainedModel:
    """cSGM trained on stationary MovingWell states with x1 spread over [0, 10], labeled by x1."""
    system = FastSlowSystem.moving_well()
    spec = EnsembleSpec(n_trajectories=400, slow_range=(0.0, 10.0), fast_init="stationary")
    trajectories = simulate_ensemble(system, spec, dt=0.01, n_steps=24, seed=0)
    points = np.concatenate([t.states for t in trajectories])
    dataset = LabeledDataset(points, points[:, SLOW], label_name="x1")
    config = TrainConfig(batch_size=512, n_iterations=4000, lr=1e-3, lr_min=1e-5,
                         hidden_widths=[128, 128, 128, 128], n_fourier=16, seed=0, log_every=1000)
    return TrainedModel(system, train(dataset, config).network, points)
