"""
JSON checkpoints of score networks.

Floats are written in Python's shortest round-trip form (at most 17
significant digits), so save -> load reproduces every weight bitwise.
"""

import json
from typing import Any, Dict, Optional, Tuple

import numpy as np

from score_net.network import NormStats, ScoreNetwork
from sgm_engine.schedule import NoiseSchedule
from shared.artifact_utils import ArtifactDigest
from shared.errors import InputError

CHECKPOINT_FORMAT = "score-network"
CHECKPOINT_VERSION = 1


def checkpoint_to_dict(net: ScoreNetwork, metadata: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Plain-JSON representation of a network."""
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_widths": list(net.layer_widths),
        "activation": net.activation,
        "fourier_features": net.fourier_features.tolist(),
        "norm_stats": net.norm_stats.to_dict(),
        "schedule": net.schedule.to_dict(),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "metadata": metadata or {},
    }


def checkpoint_from_dict(data: Dict[str, Any]) -> ScoreNetwork:
    """Rebuild a network from checkpoint_to_dict output."""
    if data.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"not a score-network checkpoint (format={data.get('format')!r})")
    if data.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {data.get('version')}")
    widths = data["layer_widths"]
    weights = [np.array(w, dtype=np.float64).reshape(widths[i], widths[i + 1])
               for i, w in enumerate(data["weights"])]
    return ScoreNetwork(
        widths,
        weights,
        [np.array(b, dtype=np.float64) for b in data["biases"]],
        np.array(data["fourier_features"], dtype=np.float64),
        NormStats.from_dict(data["norm_stats"]),
        NoiseSchedule.from_dict(data["schedule"]),
        data.get("activation", "SiLU"),
    )


def save_checkpoint(net: ScoreNetwork, path: str, metadata: Optional[Dict[str, Any]] = None) -> None:
    """Write a checkpoint file."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(checkpoint_to_dict(net, metadata), f)


def load_checkpoint(path: str) -> Tuple[ScoreNetwork, Dict[str, Any]]:
    """Read a checkpoint file; returns the network and its metadata."""
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    return checkpoint_from_dict(data), data.get("metadata", {})


def network_digest(net: ScoreNetwork) -> str:
    """SHA-256 of the network's canonical checkpoint JSON (metadata excluded)."""
    return ArtifactDigest.of_json(checkpoint_to_dict(net))
