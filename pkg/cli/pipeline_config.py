"""
Versioned JSON configuration of a pipeline run.

User files are merged over DEFAULTS; `--set a.b=value` overrides any scalar
(or list) by dot-path. validate() checks every field and raises
ConfigValidationError naming the first offending one.
"""

import copy
import json
import os
from typing import Any, Dict, Iterable, List, Optional

from shared.artifact_utils import ArtifactDigest
from shared.config import Config
from shared.errors import ConfigValidationError

SCHEMA_VERSION = 1

LABEL_MODES = ("known_slow", "diffusion_maps")
FAST_INIT = ("fixed", "cycle", "stationary")

DEFAULTS: Dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "master_seed": 0,
    "output_dir": "run",
    "system": {
        "system_id": "FixedWell",
        "a1": 1e-4,
        "a2": 1e-4,
        "epsilon": 1e3,
        "h": 8.0,
        "k": 0.0,
    },
    "simulate": {
        "dt": 0.01,
        "n_steps": 999,
        "n_trajectories": 100,
        "stride": 1,
        "initial": [0.0, 1.0],
        "slow_range": [0.0, 10.0],
        "fast_init": "stationary",
        "fast_values": [-1.0, 1.0],
    },
    "label": {
        "mode": "known_slow",
        "dataset": None,
        "subsample": None,
        "bandwidth": None,
        "alpha": 1.0,
        "n_eigenpairs": 4,
    },
    "schedule": {
        "sigma_min": 0.002,
        "sigma_max": None,
        "sigma_max_factor": 1.5,
        "T": 1.0,
        "t_min": 1e-3,
    },
    "train": {
        "dataset": None,
        "batch_size": 512,
        "n_iterations": 50000,
        "lr": 1e-4,
        "lr_min": 1e-6,
        "lr_schedule": "cosine",
        "hidden_widths": [64, 128, 256, 512, 512, 256, 128, 64],
        "n_fourier": 16,
        "fourier_scale": 1.0,
        "log_every": 500,
    },
    "generate": {
        "checkpoint": None,
        "label": 5.0,
        "n_samples": 5000,
        "n_steps": 500,
    },
    "couple": {
        "checkpoint": None,
        "dataset": None,
        "label": 5.0,
        "n_windows": 10,
        "kappa": 10.0,
        "n_steps": 1000,
        "dt": 0.01,
        "center": None,
        "fast_bias_centers": [],
        "fast_kappa": 0.0,
        "grid": {"low": -2.5, "high": 2.5, "bins": 200},
        "baseline": True,
    },
    "analyze": {
        "checkpoint": None,
        "dataset": None,
        "use_checkpoint": True,
        "label": 5.0,
        "center": None,
        "sample_sizes": [100, 250, 500, 1000],
        "n_experiments": 100,
        "n_windows": 10,
    },
}


def _merge(base: Dict[str, Any], user: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigValidationError(path, "unknown field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigValidationError(path, "expected a section (object)")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> tuple:
    """Split 'a.b=value'; the value is parsed as JSON, else kept as a string."""
    if "=" not in text:
        raise ConfigValidationError(text, "override must look like section.field=value")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip(), value


class PipelineConfig:
    """Resolved configuration: defaults, user file and overrides."""

    def __init__(self, data: Optional[Dict[str, Any]] = None):
        self.data = _merge(DEFAULTS, data or {})

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Iterable[str] = ()) -> "PipelineConfig":
        """Read a JSON config (or start from defaults) and apply overrides."""
        data: Dict[str, Any] = {}
        if path is not None:
            if not os.path.exists(path):
                raise ConfigValidationError("--config", f"config file {path} does not exist")
            with open(path, "r", encoding="utf-8") as f:
                try:
                    data = json.load(f)
                except json.JSONDecodeError as exc:
                    raise ConfigValidationError("--config", f"{path} is not valid JSON: {exc}")
            if not isinstance(data, dict):
                raise ConfigValidationError("--config", "top level must be an object")
        config = cls(data)
        for text in overrides:
            config.set(*parse_override(text))
        return config

    def get(self, path: str) -> Any:
        node: Any = self.data
        for part in path.split("."):
            if not isinstance(node, dict) or part not in node:
                raise ConfigValidationError(path, "unknown field")
            node = node[part]
        return node

    def set(self, path: str, value: Any) -> None:
        parts = path.split(".")
        node = self.data
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigValidationError(path, "unknown field")
            node = node[part]
        if parts[-1] not in node or isinstance(node[parts[-1]], dict):
            raise ConfigValidationError(path, "unknown scalar field")
        node[parts[-1]] = value

    def section(self, name: str) -> Dict[str, Any]:
        return copy.deepcopy(self.data[name])

    @property
    def master_seed(self) -> int:
        return int(self.data["master_seed"])

    def output_dir(self) -> str:
        return Config.resolve_output_dir(self.data["output_dir"])

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of the resolved config."""
        return ArtifactDigest.of_json(self.data)

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.data)

    def validate(self) -> "PipelineConfig":
        """Check every field; raise ConfigValidationError on the first failure."""
        _Validator(self).run()
        return self


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class _Validator:
    def __init__(self, config: PipelineConfig):
        self.config = config

    def run(self) -> None:
        if self.config.get("schema_version") != SCHEMA_VERSION:
            raise ConfigValidationError("schema_version", f"expected {SCHEMA_VERSION}")
        self.integer("master_seed", low=0)
        output_dir = self.config.get("output_dir")
        if not isinstance(output_dir, str) or not output_dir:
            raise ConfigValidationError("output_dir", "must be a non-empty path")
        self.system()
        self.simulate()
        self.label()
        self.schedule()
        self.train()
        self.generate()
        self.couple()
        self.analyze()

    # field checks

    def number(self, path: str, low: Optional[float] = None, strict: bool = False,
               optional: bool = False) -> None:
        value = self.config.get(path)
        if value is None and optional:
            return
        if not _is_number(value) or value != value or value in (float("inf"), float("-inf")):
            raise ConfigValidationError(path, f"expected a finite number, got {value!r}")
        if low is not None and (value <= low if strict else value < low):
            raise ConfigValidationError(path, f"must be {'>' if strict else '>='} {low}, got {value}")

    def integer(self, path: str, low: Optional[int] = None, optional: bool = False) -> None:
        value = self.config.get(path)
        if value is None and optional:
            return
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigValidationError(path, f"expected an integer, got {value!r}")
        if low is not None and value < low:
            raise ConfigValidationError(path, f"must be >= {low}, got {value}")

    def choice(self, path: str, options: Iterable[str]) -> None:
        value = self.config.get(path)
        if value not in options:
            raise ConfigValidationError(path, f"must be one of {list(options)}, got {value!r}")

    def boolean(self, path: str) -> None:
        if not isinstance(self.config.get(path), bool):
            raise ConfigValidationError(path, "expected true or false")

    def number_list(self, path: str, length: Optional[int] = None, allow_empty: bool = True) -> List[float]:
        value = self.config.get(path)
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise ConfigValidationError(path, f"expected a list of numbers, got {value!r}")
        if length is not None and len(value) != length:
            raise ConfigValidationError(path, f"expected {length} numbers, got {len(value)}")
        if not allow_empty and not value:
            raise ConfigValidationError(path, "must not be empty")
        return value

    def path(self, path: str) -> None:
        value = self.config.get(path)
        if value is None:
            return
        if not isinstance(value, str) or not os.path.exists(value):
            raise ConfigValidationError(path, f"input file {value!r} does not exist")

    # sections

    def system(self) -> None:
        self.choice("system.system_id", ("MovingWell", "FixedWell"))
        for name in ("a1", "a2", "epsilon"):
            self.number(f"system.{name}", low=0, strict=True)
        if self.config.get("system.system_id") == "FixedWell":
            self.number("system.h")
            self.number("system.k")
        else:
            for name in ("h", "k"):
                if self.config.get(f"system.{name}") is not None:
                    raise ConfigValidationError(f"system.{name}", "must be null for MovingWell")

    def simulate(self) -> None:
        self.number("simulate.dt", low=0, strict=True)
        self.integer("simulate.n_steps", low=1)
        self.integer("simulate.n_trajectories", low=1)
        self.integer("simulate.stride", low=1)
        self.number_list("simulate.initial", length=2)
        if self.config.get("simulate.slow_range") is not None:
            low, high = self.number_list("simulate.slow_range", length=2)
            if high < low:
                raise ConfigValidationError("simulate.slow_range", "must be [low, high] with low <= high")
        self.choice("simulate.fast_init", FAST_INIT)
        self.number_list("simulate.fast_values", allow_empty=self.config.get("simulate.fast_init") != "cycle")

    def label(self) -> None:
        self.choice("label.mode", LABEL_MODES)
        self.path("label.dataset")
        self.integer("label.subsample", low=3, optional=True)
        subsample = self.config.get("label.subsample")
        if subsample is not None and subsample > Config.MAX_DMAP_POINTS:
            raise ConfigValidationError(
                "label.subsample", f"must be <= {Config.MAX_DMAP_POINTS}, got {subsample}"
            )
        self.number("label.bandwidth", low=0, strict=True, optional=True)
        self.number("label.alpha", low=0)
        self.integer("label.n_eigenpairs", low=2)

    def schedule(self) -> None:
        self.number("schedule.sigma_min", low=0, strict=True)
        self.number("schedule.sigma_max", low=0, strict=True, optional=True)
        sigma_max = self.config.get("schedule.sigma_max")
        if sigma_max is not None and not sigma_max > self.config.get("schedule.sigma_min"):
            raise ConfigValidationError("schedule.sigma_max", "must exceed schedule.sigma_min")
        self.number("schedule.sigma_max_factor", low=0, strict=True)
        self.number("schedule.T", low=0, strict=True)
        self.number("schedule.t_min", low=0, strict=True)
        if not self.config.get("schedule.t_min") < self.config.get("schedule.T"):
            raise ConfigValidationError("schedule.t_min", "must be smaller than schedule.T")

    def train(self) -> None:
        self.path("train.dataset")
        self.integer("train.batch_size", low=1)
        self.integer("train.n_iterations", low=1)
        self.number("train.lr", low=0, strict=True)
        self.number("train.lr_min", low=0)
        if self.config.get("train.lr_min") > self.config.get("train.lr"):
            raise ConfigValidationError("train.lr_min", "must not exceed train.lr")
        self.choice("train.lr_schedule", ("cosine", "constant"))
        widths = self.config.get("train.hidden_widths")
        if not isinstance(widths, list) or not widths or not all(
                isinstance(w, int) and not isinstance(w, bool) and w >= 1 for w in widths):
            raise ConfigValidationError("train.hidden_widths", "expected a non-empty list of positive integers")
        self.integer("train.n_fourier", low=1)
        self.number("train.fourier_scale", low=0, strict=True)
        self.integer("train.log_every", low=1)

    def generate(self) -> None:
        self.path("generate.checkpoint")
        self.number("generate.label", optional=True)
        self.integer("generate.n_samples", low=1)
        self.integer("generate.n_steps", low=2)

    def couple(self) -> None:
        self.path("couple.checkpoint")
        self.path("couple.dataset")
        self.number("couple.label", optional=True)
        self.integer("couple.n_windows", low=1)
        self.number("couple.kappa", low=0)
        self.integer("couple.n_steps", low=1)
        self.number("couple.dt", low=0, strict=True)
        self.number("couple.center", optional=True)
        centers = self.number_list("couple.fast_bias_centers")
        if centers:
            self.number_list("couple.fast_bias_centers", length=self.config.get("couple.n_windows"))
            self.number("couple.fast_kappa", low=0, strict=True)
        else:
            self.number("couple.fast_kappa", low=0)
        self.number("couple.grid.low")
        self.number("couple.grid.high")
        if not self.config.get("couple.grid.high") > self.config.get("couple.grid.low"):
            raise ConfigValidationError("couple.grid.high", "must exceed couple.grid.low")
        self.integer("couple.grid.bins", low=1)
        self.boolean("couple.baseline")

    def analyze(self) -> None:
        self.path("analyze.checkpoint")
        self.path("analyze.dataset")
        self.boolean("analyze.use_checkpoint")
        self.number("analyze.label", optional=True)
        self.number("analyze.center", optional=True)
        if self.config.get("analyze.label") is None and self.config.get("analyze.center") is None:
            raise ConfigValidationError("analyze.center", "set analyze.center or analyze.label")
        sizes = self.config.get("analyze.sample_sizes")
        if (not isinstance(sizes, list) or not sizes
                or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 1 for s in sizes)
                or len(set(sizes)) != len(sizes)):
            raise ConfigValidationError("analyze.sample_sizes", "expected distinct positive integers")
        self.integer("analyze.n_experiments", low=2)
        self.integer("analyze.n_windows", low=1)
