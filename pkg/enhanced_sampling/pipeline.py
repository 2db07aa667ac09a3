"""
Umbrella sampling initialized by a conditional score model.

    1. generate n_windows microstates at the prescribed label
    2. run one restrained window from each of them
    3. pool the fast-variable histograms (WHAM when the fast coordinate is biased)
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from analysis.density import EmpiricalPdf, uniform_edges
from enhanced_sampling.umbrella import UmbrellaWindow, pool_histograms, run_windows
from enhanced_sampling.wham import DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE, input_from_windows, wham
from score_net.checkpoint import load_checkpoint, network_digest
from score_net.network import ScoreNetwork
from sde_sim.integrator import Trajectory
from sde_sim.systems import FAST, SLOW, FastSlowSystem, HarmonicBias
from sgm_engine.sampler import DEFAULT_N_STEPS, generate, label_in_training_range
from shared.artifact_utils import ArtifactDigest
from shared.config import LogConfig
from shared.errors import InputError

logger = LogConfig.setup_logging("enhanced_sampling.pipeline")

DEFAULT_GRID = (-2.5, 2.5, 200)


@dataclass
class WindowConfig:
    """Shared settings of the umbrella windows of one run."""

    kappa: float = 10.0
    n_steps: int = 1000
    dt: float = 0.01
    center: Optional[float] = None
    fast_bias_centers: List[float] = field(default_factory=list)
    fast_kappa: float = 0.0
    grid_low: float = DEFAULT_GRID[0]
    grid_high: float = DEFAULT_GRID[1]
    grid_bins: int = DEFAULT_GRID[2]
    sgm_steps: int = DEFAULT_N_STEPS
    wham_tolerance: float = DEFAULT_TOLERANCE
    wham_max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise InputError(f"kappa must be finite and >= 0, got {self.kappa}")
        if self.n_steps < 1:
            raise InputError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.dt > 0:
            raise InputError(f"dt must be > 0, got {self.dt}")
        if self.fast_bias_centers and not self.fast_kappa > 0:
            raise InputError("fast_bias_centers need fast_kappa > 0")
        uniform_edges(self.grid_low, self.grid_high, self.grid_bins)

    @property
    def uses_wham(self) -> bool:
        return bool(self.fast_bias_centers)

    def edges(self) -> np.ndarray:
        return uniform_edges(self.grid_low, self.grid_high, self.grid_bins)

    def to_dict(self) -> dict:
        return asdict(self)


def build_windows(initial_states: np.ndarray, center: float, config: WindowConfig,
                  seed: int, source: str) -> List[UmbrellaWindow]:
    """One window per initial state; window i uses random stream i."""
    initial_states = np.atleast_2d(np.asarray(initial_states, dtype=np.float64))
    n = initial_states.shape[0]
    if config.uses_wham and len(config.fast_bias_centers) != n:
        raise InputError(
            f"{len(config.fast_bias_centers)} fast bias centers for {n} windows"
        )
    windows = []
    for i, state in enumerate(initial_states):
        fast_bias = None
        if config.uses_wham:
            fast_bias = HarmonicBias(config.fast_kappa, float(config.fast_bias_centers[i]), FAST)
        windows.append(UmbrellaWindow(
            HarmonicBias(config.kappa, float(center), SLOW), config.n_steps, config.dt,
            state, seed, stream=i, fast_bias=fast_bias, source=source,
        ))
    return windows


def estimate_from_windows(trajectories: Sequence[Trajectory], windows: Sequence[UmbrellaWindow],
                          system: FastSlowSystem, config: WindowConfig) -> Tuple[EmpiricalPdf, Optional[np.ndarray]]:
    """Pooled pdf, or the WHAM pdf and offsets when the fast coordinate is biased."""
    edges = config.edges()
    if not config.uses_wham:
        return pool_histograms(trajectories, edges), None
    data = input_from_windows(trajectories, windows, edges, system.beta_eff)
    return wham(data, config.wham_tolerance, config.wham_max_iterations)


def nearest_training_state(training_points: np.ndarray, center: float) -> np.ndarray:
    """Training point whose slow coordinate is closest to center."""
    points = np.atleast_2d(np.asarray(training_points, dtype=np.float64))
    if points.shape[0] == 0:
        raise InputError("no training points to draw a baseline start from")
    return points[int(np.argmin(np.abs(points[:, SLOW] - center)))].copy()


def us_alone(system: FastSlowSystem, training_points: np.ndarray, n_windows: int,
             config: WindowConfig, seed: int) -> Tuple[EmpiricalPdf, List[Trajectory]]:
    """Umbrella sampling without the score model.

    Every window starts from the training point nearest the bias center.
    """
    if n_windows < 1:
        raise InputError(f"n_windows must be >= 1, got {n_windows}")
    if config.center is None:
        raise InputError("umbrella sampling alone needs an explicit bias center")
    start = nearest_training_state(training_points, config.center)
    windows = build_windows(np.tile(start, (n_windows, 1)), config.center, config, seed, "training-nearest")
    trajectories = run_windows(system, windows)
    pdf, _ = estimate_from_windows(trajectories, windows, system, config)
    return pdf, trajectories


def _check_compatible(net: ScoreNetwork, metadata: Dict[str, Any], system: FastSlowSystem) -> None:
    if net.data_dim != 2:
        raise InputError(f"checkpoint models {net.data_dim}-D data, the system is 2-D")
    trained_on = metadata.get("system")
    if trained_on is None:
        return
    trained = FastSlowSystem.from_dict(trained_on)
    if trained.system_id != system.system_id or trained.h != system.h or trained.k != system.k:
        raise InputError(
            f"checkpoint was trained on {trained.to_dict()}, not {system.to_dict()}"
        )


def coupled_pipeline(checkpoint: Union[str, ScoreNetwork], system: FastSlowSystem, label,
                     n_windows: int, window_config: Optional[WindowConfig] = None,
                     seed: int = 0, metadata: Optional[Dict[str, Any]] = None
                     ) -> Tuple[EmpiricalPdf, Dict[str, Any]]:
    """Score-model-initialized umbrella sampling at one label.

    checkpoint is a checkpoint path or an in-memory network. Returns the
    estimated conditional pdf of the fast variable and a provenance record.
    """
    if n_windows < 1:
        raise InputError(f"n_windows must be >= 1, got {n_windows}")
    config = window_config or WindowConfig()
    checkpoint_file = None
    if isinstance(checkpoint, ScoreNetwork):
        net, metadata = checkpoint, dict(metadata or {})
    else:
        checkpoint_file = ArtifactDigest.of_file(checkpoint)
        net, metadata = load_checkpoint(checkpoint)
    _check_compatible(net, metadata, system)

    warnings = []
    if label is not None and not label_in_training_range(net, label):
        warnings.append(f"label {label} lies outside the training label range")

    initial = generate(net, label, n_windows, n_steps=config.sgm_steps, seed=seed)
    center = config.center if config.center is not None else float(np.mean(initial[:, SLOW]))
    windows = build_windows(initial, center, config, seed, "sgm")
    trajectories = run_windows(system, windows)
    pdf, offsets = estimate_from_windows(trajectories, windows, system, config)

    provenance = {
        "label": None if label is None else np.asarray(label, dtype=np.float64).tolist(),
        "n_windows": n_windows,
        "bias_center": center,
        "seed": seed,
        "system": system.to_dict(),
        "window_config": config.to_dict(),
        "network_sha256": network_digest(net),
        "checkpoint_sha256": checkpoint_file,
        "windows": [w.to_dict() for w in windows],
        "estimator": "wham" if config.uses_wham else "pooled",
        "wham_offsets": None if offsets is None else offsets.tolist(),
        "out_of_range_fraction": pdf.out_of_range_fraction,
        "warnings": warnings,
    }
    logger.info(
        f"Coupled run at label {label}: {n_windows} windows x {config.n_steps} steps, "
        f"center {center:.4g}, estimator {provenance['estimator']}"
    )
    return pdf, provenance
