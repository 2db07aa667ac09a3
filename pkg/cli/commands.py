"""
Pipeline stages: simulate -> label -> train -> generate -> couple -> analyze.

Each stage has a validate step (config, output directory, upstream
artifacts and their manifests) and a run step that writes artifacts, each
followed by a manifest chaining the digests of its inputs. Failures in the
validate step map to exit code 2, failures while running to exit code 3.
"""

import json
import os
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import spearmanr

from analysis.convergence import MethodTag, convergence_study, study_metadata
from analysis.density import estimate_pdf, l1_distance, uniform_edges
from cli.pipeline_config import PipelineConfig
from enhanced_sampling.pipeline import WindowConfig, coupled_pipeline, us_alone
from enhanced_sampling.umbrella import pdf_rows_csv
from manifold.diffusion_maps import diffusion_maps, label_dataset
from score_net.checkpoint import load_checkpoint, save_checkpoint
from sde_sim.integrator import EnsembleSpec, simulate_ensemble
from sde_sim.oracle import stationary_conditional_pdf
from sde_sim.systems import FAST, SLOW, FastSlowSystem, SystemId
from sgm_engine.dataset import LabeledDataset
from sgm_engine.sampler import generate, label_in_training_range
from sgm_engine.schedule import NoiseSchedule
from sgm_engine.training import TrainConfig, train
from shared import random_streams
from shared.artifact_utils import read_manifest, verify_artifact, write_manifest
from shared.config import Config, LogConfig
from shared.dataset_io import export_csv, read_dataset, write_dataset
from shared.errors import ConfigValidationError, InputError

logger = LogConfig.setup_logging("cli.commands")

DATASET = "dataset.bin"
LABELED = "labeled.bin"
DMAP_CSV = "diffusion_map.csv"
DMAP_META = "diffusion_map.json"
CHECKPOINT = "checkpoint.json"
TRAINING_LOG = "training_log.csv"
SAMPLES = "samples.bin"
SAMPLES_PDF = "samples_pdf.csv"
COUPLED_PDF = "coupled_pdf.csv"
BASELINE_PDF = "baseline_pdf.csv"
WINDOWS = "windows.json"
CONVERGENCE = "convergence.json"

# Eigenvalue gaps smaller than this mean a disconnected kernel graph.
SPECTRAL_GAP_MIN = 1e-10


def system_from_config(config: PipelineConfig) -> FastSlowSystem:
    s = config.section("system")
    system_id = SystemId(s["system_id"])
    a1, a2, epsilon = float(s["a1"]), float(s["a2"]), float(s["epsilon"])
    if system_id is SystemId.MOVING_WELL:
        return FastSlowSystem.moving_well(a1=a1, a2=a2, epsilon=epsilon)
    return FastSlowSystem.fixed_well(h=float(s["h"]), k=float(s["k"]), a1=a1, a2=a2, epsilon=epsilon)


def window_config_from(config: PipelineConfig, center: Optional[float] = None) -> WindowConfig:
    c = config.section("couple")
    return WindowConfig(
        kappa=float(c["kappa"]), n_steps=int(c["n_steps"]), dt=float(c["dt"]),
        center=center if center is not None else c["center"],
        fast_bias_centers=list(c["fast_bias_centers"]), fast_kappa=float(c["fast_kappa"]),
        grid_low=float(c["grid"]["low"]), grid_high=float(c["grid"]["high"]),
        grid_bins=int(c["grid"]["bins"]), sgm_steps=int(config.get("generate.n_steps")),
    )


def grid_edges(config: PipelineConfig) -> np.ndarray:
    g = config.section("couple")["grid"]
    return uniform_edges(float(g["low"]), float(g["high"]), int(g["bins"]))


# validation helpers

def _output_dir(config: PipelineConfig) -> str:
    config.validate()
    out = config.output_dir()
    if not os.path.isdir(out):
        raise ConfigValidationError("output_dir", f"output directory {out} does not exist")
    return out


def _input(config: PipelineConfig, field: Optional[str], default_name: str) -> Tuple[str, str]:
    """Locate an upstream artifact and check it against its manifest."""
    explicit = config.get(field) if field else None
    path = explicit or os.path.join(config.output_dir(), default_name)
    if not os.path.exists(path):
        raise ConfigValidationError(field or default_name, f"input artifact {path} does not exist")
    try:
        return path, verify_artifact(path)
    except FileNotFoundError as exc:
        raise ConfigValidationError(field or default_name, str(exc))


def _manifest(path: str, kind: str, config: PipelineConfig, inputs: Dict[str, str],
              warnings: Optional[List[str]] = None, provenance: Optional[Dict[str, Any]] = None) -> None:
    write_manifest(path, kind=kind, master_seed=config.master_seed, config_digest=config.digest(),
                   inputs=inputs, warnings=warnings, provenance=provenance)


def _csv_twin(path: str) -> str:
    return os.path.splitext(path)[0] + ".csv"


def _write_json(path: str, document: Any) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, sort_keys=True)


def _pdf_table(path: str, pdf, analytic=None) -> None:
    if analytic is None:
        pdf_rows_csv(path, pdf)
        return
    rows = np.column_stack([pdf.bin_centers, pdf.densities, analytic.densities])
    np.savetxt(path, rows, delimiter=",", header="bin_center,density,analytic_density",
               comments="", fmt="%.17g")


# simulate

def validate_simulate(config: PipelineConfig) -> Dict[str, Any]:
    out = _output_dir(config)
    system = system_from_config(config)
    s = config.section("simulate")
    spec = EnsembleSpec(
        n_trajectories=s["n_trajectories"], initial=tuple(s["initial"]),
        slow_range=None if s["slow_range"] is None else tuple(s["slow_range"]),
        fast_init=s["fast_init"], fast_values=list(s["fast_values"]),
    )
    return {"out": out, "system": system, "spec": spec, "section": s}


def run_simulate(config: PipelineConfig, prepared: Dict[str, Any]) -> List[str]:
    s, system = prepared["section"], prepared["system"]
    trajectories = simulate_ensemble(system, prepared["spec"], s["dt"], s["n_steps"], config.master_seed)
    data = np.concatenate([t.states[::s["stride"]] for t in trajectories])
    path = os.path.join(prepared["out"], DATASET)
    write_dataset(path, data, dt=s["dt"], seed=config.master_seed)
    export_csv(_csv_twin(path), data, ["x1", "x2"])
    _manifest(path, "trajectory-dataset", config, {}, provenance={
        "system": system.to_dict(), "simulate": s, "columns": ["x1", "x2"],
        "n_rows": int(data.shape[0]), "trajectory_streams": list(range(len(trajectories))),
    })
    logger.info(f"Wrote {data.shape[0]} states to {path}")
    return [path]


# label

def validate_label(config: PipelineConfig) -> Dict[str, Any]:
    out = _output_dir(config)
    path, digest = _input(config, "label.dataset", DATASET)
    points = read_dataset(path).data[:, :2]
    subsample = config.get("label.subsample")
    n_used = points.shape[0] if subsample is None else min(subsample, points.shape[0])
    if config.get("label.mode") == "diffusion_maps" and n_used > Config.MAX_DMAP_POINTS:
        raise ConfigValidationError(
            "label.subsample",
            f"{points.shape[0]} points exceed the diffusion-map cap of {Config.MAX_DMAP_POINTS}; "
            f"set label.subsample",
        )
    return {"out": out, "points": points, "inputs": {path: digest}}


def subsample_indices(n: int, size: Optional[int], seed: int) -> np.ndarray:
    """Sorted seeded choice of size row indices (all rows when size is None)."""
    if size is None or size >= n:
        return np.arange(n)
    rng = random_streams.stream_rng(seed, random_streams.SUBSAMPLE, 0)
    return np.sort(rng.choice(n, size=size, replace=False))


def run_label(config: PipelineConfig, prepared: Dict[str, Any]) -> List[str]:
    lab = config.section("label")
    idx = subsample_indices(prepared["points"].shape[0], lab["subsample"], config.master_seed)
    points = prepared["points"][idx]
    out, inputs = prepared["out"], prepared["inputs"]
    written, warnings = [], []
    provenance: Dict[str, Any] = {"mode": lab["mode"], "n_points": int(points.shape[0]),
                                  "subsample": lab["subsample"]}

    if lab["mode"] == "known_slow":
        dataset = LabeledDataset(points, points[:, SLOW], "x1", {"source": "known_slow"})
    else:
        result = diffusion_maps(points, lab["bandwidth"], lab["alpha"], lab["n_eigenpairs"])
        if result.eigenvalues[1] > 1.0 - SPECTRAL_GAP_MIN:
            raise InputError(
                f"degenerate diffusion-map spectrum (lambda_1 = {float(result.eigenvalues[1])!r}); "
                f"the kernel graph is disconnected, try a larger bandwidth"
            )
        dataset = label_dataset(points, result)
        rho = float(spearmanr(result.phi1, points[:, SLOW])[0])
        provenance["spearman_phi1_x1"] = rho
        if abs(rho) < 0.99:
            warnings.append(f"|Spearman(phi1, x1)| = {abs(rho):.3f} < 0.99")
        csv_path, meta_path = os.path.join(out, DMAP_CSV), os.path.join(out, DMAP_META)
        result.export(csv_path, meta_path)
        for p in (csv_path, meta_path):
            _manifest(p, "diffusion-map", config, inputs, warnings)
        written += [csv_path, meta_path]

    path = os.path.join(out, LABELED)
    write_dataset(path, dataset.to_array(), seed=config.master_seed)
    export_csv(_csv_twin(path), dataset.to_array(), dataset.columns())
    provenance.update({"columns": dataset.columns(), "label_dim": dataset.label_dim,
                       "label_name": dataset.label_name, "label_transform": dataset.label_transform})
    _manifest(path, "labeled-dataset", config, inputs, warnings, provenance)
    return written + [path]


# train

def validate_train(config: PipelineConfig) -> Dict[str, Any]:
    out = _output_dir(config)
    path, digest = _input(config, "train.dataset", LABELED)
    manifest = read_manifest(path)
    label_dim = int(manifest.get("provenance", {}).get("label_dim", 1))
    section = config.section("train")
    section.pop("dataset")
    train_config = TrainConfig(seed=config.master_seed, **section)
    return {"out": out, "path": path, "inputs": {path: digest}, "label_dim": label_dim,
            "provenance": manifest.get("provenance", {}), "train_config": train_config}


def run_train(config: PipelineConfig, prepared: Dict[str, Any]) -> List[str]:
    upstream = prepared["provenance"]
    dataset = LabeledDataset.from_array(
        read_dataset(prepared["path"]).data, prepared["label_dim"],
        upstream.get("label_name", "y"), upstream.get("label_transform", {}),
    )
    sched = config.section("schedule")
    schedule = None
    if sched["sigma_max"] is not None:
        schedule = NoiseSchedule(sched["sigma_min"], sched["sigma_max"], sched["T"], sched["t_min"])
    run = train(dataset, prepared["train_config"], schedule=schedule, sigma_min=sched["sigma_min"],
                sigma_max_factor=sched["sigma_max_factor"], T=sched["T"], t_min=sched["t_min"])

    out = prepared["out"]
    path = os.path.join(out, CHECKPOINT)
    metadata = {
        "system": system_from_config(config).to_dict(),
        "label_name": dataset.label_name,
        "label_transform": dataset.label_transform,
        "train": prepared["train_config"].to_dict(),
        "final_loss": float(np.mean(run.log.losses[-prepared["train_config"].log_every:])),
    }
    save_checkpoint(run.network, path, metadata)
    _manifest(path, "score-network", config, prepared["inputs"], provenance=metadata)

    log_path = os.path.join(out, TRAINING_LOG)
    np.savetxt(log_path, run.log.to_rows(), delimiter=",", header="iteration,loss,learning_rate",
               comments="", fmt=["%d", "%.17g", "%.17g"])
    _manifest(log_path, "training-log", config, prepared["inputs"])
    return [path, log_path]


# generate

def _checkpoint(config: PipelineConfig, field: str) -> Dict[str, Any]:
    path, digest = _input(config, field, CHECKPOINT)
    net, metadata = load_checkpoint(path)
    return {"checkpoint": path, "net": net, "metadata": metadata, "inputs": {path: digest}}


def _label_for(net, value) -> Optional[float]:
    return None if net.label_dim == 0 or value is None else float(value)


def validate_generate(config: PipelineConfig) -> Dict[str, Any]:
    out = _output_dir(config)
    prepared = _checkpoint(config, "generate.checkpoint")
    if prepared["net"].label_dim and config.get("generate.label") is None:
        raise ConfigValidationError("generate.label", "the checkpoint is conditional; a label is required")
    return {"out": out, **prepared}


def run_generate(config: PipelineConfig, prepared: Dict[str, Any]) -> List[str]:
    g = config.section("generate")
    net, metadata = prepared["net"], prepared["metadata"]
    label = _label_for(net, g["label"])
    warnings = []
    if label is not None and not label_in_training_range(net, label):
        warnings.append(
            f"label {label} outside training range [{net.norm_stats.label_min}, "
            f"{net.norm_stats.label_max}]; extrapolated"
        )
    samples = generate(net, label, g["n_samples"], n_steps=g["n_steps"], seed=config.master_seed)

    out = prepared["out"]
    path = os.path.join(out, SAMPLES)
    write_dataset(path, samples, seed=config.master_seed, label=label)
    export_csv(_csv_twin(path), samples, ["x1", "x2"])
    provenance: Dict[str, Any] = {"label": label, "n_samples": g["n_samples"], "n_steps": g["n_steps"]}
    written = [path]

    if label is not None and metadata.get("label_transform", {}).get("source") == "known_slow":
        edges = grid_edges(config)
        pdf = estimate_pdf(samples[:, FAST], edges)
        analytic = stationary_conditional_pdf(system_from_config(config), label, edges)
        pdf_path = os.path.join(out, SAMPLES_PDF)
        _pdf_table(pdf_path, pdf, analytic)
        provenance.update({
            "l1_to_analytic": l1_distance(pdf, analytic),
            "modes": pdf.modes().tolist(),
            "out_of_range_fraction": pdf.out_of_range_fraction,
        })
        _manifest(pdf_path, "pdf", config, prepared["inputs"], warnings, provenance)
        written.append(pdf_path)

    _manifest(path, "generated-samples", config, prepared["inputs"], warnings, provenance)
    for w in warnings:
        logger.warning(w)
    return written


# couple

def validate_couple(config: PipelineConfig) -> Dict[str, Any]:
    out = _output_dir(config)
    prepared = _checkpoint(config, "couple.checkpoint")
    if prepared["net"].label_dim and config.get("couple.label") is None:
        raise ConfigValidationError("couple.label", "the checkpoint is conditional; a label is required")
    if config.get("couple.baseline"):
        path, digest = _input(config, "couple.dataset", DATASET)
        prepared["training_points"] = read_dataset(path).data[:, :2]
        prepared["inputs"][path] = digest
    window_config_from(config)
    return {"out": out, **prepared}


def run_couple(config: PipelineConfig, prepared: Dict[str, Any]) -> List[str]:
    c = config.section("couple")
    system = system_from_config(config)
    label = _label_for(prepared["net"], c["label"])
    pdf, provenance = coupled_pipeline(
        prepared["checkpoint"], system, label, c["n_windows"], window_config_from(config),
        seed=config.master_seed,
    )
    center = provenance["bias_center"]
    analytic = stationary_conditional_pdf(system, center, pdf.bin_edges)
    provenance["l1_to_analytic"] = l1_distance(pdf, analytic)
    provenance["modes"] = pdf.modes().tolist()

    out, inputs = prepared["out"], prepared["inputs"]
    written = []
    if c["baseline"]:
        baseline, _ = us_alone(system, prepared["training_points"], c["n_windows"],
                               window_config_from(config, center), config.master_seed)
        base_path = os.path.join(out, BASELINE_PDF)
        _pdf_table(base_path, baseline, analytic)
        base_prov = {
            "bias_center": center,
            "l1_to_analytic": l1_distance(baseline, analytic),
            "mass_below_zero": baseline.mass_between(-np.inf, 0.0),
            "mass_above_zero": baseline.mass_between(0.0, np.inf),
        }
        provenance["baseline"] = base_prov
        _manifest(base_path, "pdf", config, inputs, provenance=base_prov)
        written.append(base_path)

    path = os.path.join(out, COUPLED_PDF)
    _pdf_table(path, pdf, analytic)
    windows_path = os.path.join(out, WINDOWS)
    _write_json(windows_path, provenance["windows"])
    _manifest(windows_path, "window-manifest", config, inputs)
    _manifest(path, "pdf", config, inputs, provenance["warnings"], provenance)
    logger.info(f"Coupled pdf L1 to analytic: {provenance['l1_to_analytic']:.4f}")
    return [path, windows_path] + written


# analyze

def validate_analyze(config: PipelineConfig) -> Dict[str, Any]:
    out = _output_dir(config)
    a = config.section("analyze")
    fast_centers = config.get("couple.fast_bias_centers")
    if fast_centers and len(fast_centers) != a["n_windows"]:
        raise ConfigValidationError(
            "analyze.n_windows", f"couple.fast_bias_centers lists {len(fast_centers)} windows"
        )
    path, digest = _input(config, "analyze.dataset", DATASET)
    prepared: Dict[str, Any] = {"out": out, "training_points": read_dataset(path).data[:, :2],
                                "inputs": {path: digest}, "net": None}
    if a["use_checkpoint"]:
        ck = _checkpoint(config, "analyze.checkpoint")
        source = ck["metadata"].get("label_transform", {}).get("source")
        if source == "diffusion_maps" and a["center"] is None:
            raise ConfigValidationError(
                "analyze.center", "labels are diffusion-map coordinates; set the slow bias center explicitly"
            )
        prepared["net"] = ck["net"]
        prepared["inputs"].update(ck["inputs"])
    return prepared


def run_analyze(config: PipelineConfig, prepared: Dict[str, Any]) -> List[str]:
    a = config.section("analyze")
    net = prepared["net"]
    label = a["label"] if net is None else _label_for(net, a["label"])
    curves = convergence_study(
        system_from_config(config), net, prepared["training_points"], a["sample_sizes"],
        n_experiments=a["n_experiments"], seed=config.master_seed, label=label,
        n_windows=a["n_windows"], window_config=window_config_from(config, a["center"]),
    )
    out, inputs = prepared["out"], prepared["inputs"]
    written = []
    for tag, curve in curves.items():
        path = os.path.join(out, f"convergence_{tag.value}.csv")
        curve.write_csv(path)
        _manifest(path, "convergence-curve", config, inputs, provenance={"method_tag": tag.value})
        written.append(path)

    meta_path = os.path.join(out, CONVERGENCE)
    _write_json(meta_path, study_metadata(
        curves, a["n_windows"], master_seed=config.master_seed, config=config.to_dict(),
        mean_l1={t.value: c.mean_l1.tolist() for t, c in curves.items()},
        stderr_l1={t.value: c.stderr_l1.tolist() for t, c in curves.items()},
    ))
    _manifest(meta_path, "convergence-metadata", config, inputs)
    if MethodTag.COUPLED_SGM_US in curves:
        gap = curves[MethodTag.US_ONLY].mean_l1 - curves[MethodTag.COUPLED_SGM_US].mean_l1
        logger.info(f"Mean L1 gap (USOnly - CoupledSgmUs) per sample size: {np.round(gap, 4).tolist()}")
    return written + [meta_path]


@dataclass
class Stage:
    name: str
    validate: Callable[[PipelineConfig], Any]
    run: Callable[[PipelineConfig, Any], List[str]]

    def __call__(self, config: PipelineConfig) -> List[str]:
        return self.run(config, self.validate(config))


cmd_simulate = Stage("simulate", validate_simulate, run_simulate)
cmd_label = Stage("label", validate_label, run_label)
cmd_train = Stage("train", validate_train, run_train)
cmd_generate = Stage("generate", validate_generate, run_generate)
cmd_couple = Stage("couple", validate_couple, run_couple)
cmd_analyze = Stage("analyze", validate_analyze, run_analyze)

STAGES = {s.name: s for s in (cmd_simulate, cmd_label, cmd_train, cmd_generate, cmd_couple, cmd_analyze)}
PIPELINE_ORDER = ["simulate", "label", "train", "generate", "couple", "analyze"]
