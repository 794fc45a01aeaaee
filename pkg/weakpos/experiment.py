"""Experiment configuration and the collect, train, eval and sweep commands"""

import json
import logging
import time
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from weakpos.baselines import (
    ExplicitState,
    MdsResult,
    PcaKnnModel,
    load_baseline_header,
)
from weakpos.collect import ConstraintGraph, load_dataset, save_dataset
from weakpos.env import Environment2D, load_environment, save_environment
from weakpos.error import ErrorKind, WeakPosError
from weakpos.evaluation import (
    write_ate_summary,
    write_error_grid,
    write_loss_trace,
    write_sweep,
)
from weakpos.msg.checkpoint import BaselineHeader
from weakpos.msg.config import SEED_NAMES, ExperimentConfig, Method, SweepKind
from weakpos.msg.dataset import Modality
from weakpos.msg.report import ReportDocument, RunManifest, SweepDocument
from weakpos.net import checkpoint_load, checkpoint_save
from weakpos.pipeline import (
    MethodEvaluation,
    TrainResult,
    build_environment,
    collect_dataset,
    evaluate_explicit,
    evaluate_mds,
    evaluate_predictor,
    fit_explicit,
    fit_retrieval,
    mds_oracle,
    memory_footprint,
    network_predictor,
    train_network,
)
from weakpos.sweep import noise_sweep, sample_count_sweep

logger = logging.getLogger(__name__)

ENVIRONMENT_FILE = "environment.json"
DATASET_FILE = "dataset.jsonl"
CHECKPOINT_FILE = "checkpoint.bin"
LOSS_FILE = "loss.csv"
REPORT_FILE = "report.json"
ATE_FILE = "ate_summary.csv"
GRID_FILE = "error_grid.csv"
SWEEP_CSV = "sweep.csv"
SWEEP_JSON = "sweep.json"


def preset_names() -> Tuple[str, ...]:
    """Names of the bundled presets"""
    folder = resources.files("weakpos") / "presets"
    return tuple(
        sorted(
            entry.name[: -len(".json")]
            for entry in folder.iterdir()
            if entry.name.endswith(".json")
        )
    )


def _read_preset(name: str) -> Dict[str, Any]:
    if name not in preset_names():
        raise WeakPosError(
            ErrorKind.INVALID_CONFIG,
            f"Unknown preset '{name}', choose from {', '.join(preset_names())}",
        )
    text = (resources.files("weakpos") / "presets" / f"{name}.json").read_text(
        encoding="utf-8"
    )
    return json.loads(text)


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_seed_override(text: str) -> Tuple[str, int]:
    """
    Parse ``name=value``

    Raises:
        WeakPosError: InvalidConfig on unknown names or non-integer values
    """
    name, sep, value = text.partition("=")
    name = name.strip()
    if not sep or name not in SEED_NAMES:
        raise WeakPosError(
            ErrorKind.INVALID_CONFIG,
            f"Seed override '{text}' must be name=value with name in {SEED_NAMES}",
        )
    try:
        return name, int(value)
    except ValueError as err:
        raise WeakPosError(
            ErrorKind.INVALID_CONFIG, f"seeds.{name}: '{value}' is not an integer"
        ) from err


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    """
    Validate a configuration mapping

    Raises:
        WeakPosError: InvalidConfig naming the first offending field
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        first = err.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise WeakPosError(
            ErrorKind.INVALID_CONFIG, f"{where}: {first['msg']}"
        ) from err


def load_config(
    path: Optional[Union[str, Path]] = None,
    preset: Optional[str] = None,
    seed_overrides: Iterable[str] = (),
) -> ExperimentConfig:
    """
    Build the experiment configuration

    A file is merged over the preset; seed overrides apply last.

    Args:
        path: JSON configuration file
        preset: bundled preset name
        seed_overrides: ``name=value`` strings
    Returns:
        ExperimentConfig: validated configuration
    Raises:
        WeakPosError: InvalidConfig
    """
    data: Dict[str, Any] = _read_preset(preset) if preset else {}
    if path is not None:
        try:
            document = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise WeakPosError(
                ErrorKind.INVALID_CONFIG, f"Cannot read config {path}: {err}"
            ) from err
        data = _merge(data, document)
    for override in seed_overrides:
        name, value = parse_seed_override(override)
        data = _merge(data, {"seeds": {name: value}})
    return validate_config(data)


def _echo(cfg: ExperimentConfig) -> Dict[str, Any]:
    return cfg.model_dump(mode="json")


def _write_manifest(
    out: Path,
    command: str,
    cfg: ExperimentConfig,
    artifacts: Dict[str, Path],
    durations: Dict[str, float],
    final_loss: Optional[float] = None,
) -> RunManifest:
    manifest = RunManifest(
        command=command,
        config=_echo(cfg),
        artifacts={name: str(path) for name, path in artifacts.items()},
        durations=durations,
        final_loss=final_loss,
    )
    path = out / f"manifest-{command}.json"
    path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    logger.info("Manifest written to %s", path)
    return manifest


def cmd_collect(cfg: ExperimentConfig, out: Union[str, Path]) -> RunManifest:
    """
    Build the world and collect the training dataset

    Writes environment.json, dataset.jsonl and manifest-collect.json.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    env = build_environment(cfg)
    env_path = out / ENVIRONMENT_FILE
    save_environment(env, env_path)
    graph = collect_dataset(env, cfg)
    dataset_path = out / DATASET_FILE
    save_dataset(
        graph,
        dataset_path,
        env_reference=ENVIRONMENT_FILE,
        config=cfg.collection.model_dump(mode="json"),
        seeds=cfg.seeds.model_dump(),
    )
    logger.info("Dataset with %d observations written to %s", len(graph), dataset_path)
    return _write_manifest(
        out,
        "collect",
        cfg,
        {"environment": env_path, "dataset": dataset_path},
        {"collect": time.perf_counter() - started},
    )


def load_workspace(
    cfg: ExperimentConfig,
    out: Union[str, Path],
    dataset: Optional[Union[str, Path]] = None,
) -> Tuple[Environment2D, ConstraintGraph, Path]:
    """
    Environment and dataset of an output directory, collected first if missing

    Returns:
        environment, dataset and the dataset path
    """
    out = Path(out)
    path = Path(dataset) if dataset is not None else out / DATASET_FILE
    if not path.exists():
        if dataset is not None:
            raise WeakPosError(ErrorKind.INVALID_CONFIG, f"No dataset at {path}")
        cmd_collect(cfg, out)
    header, graph = load_dataset(path)
    if header.env_reference is not None:
        env = load_environment(path.parent / header.env_reference)
    else:
        env = build_environment(cfg)
    return env, graph, path


def _save_explicit(path: Path, state: ExplicitState, subset: ConstraintGraph, cfg):
    header = BaselineHeader(
        method=Method.EXPLICIT.value,
        arrays={
            "landmarks": state.landmarks.tolist(),
            "positions": state.positions.tolist(),
            "truth": subset.ground_truth().tolist(),
            "residual": [[] if state.residual is None else state.residual.tolist()],
        },
        meta={"residual_norm": state.residual_norm, "iterations": state.iterations},
        config=_echo(cfg),
    )
    path.write_text(header.model_dump_json(), encoding="utf-8")


def _save_mds(path: Path, result: MdsResult, positions: np.ndarray, cfg):
    header = BaselineHeader(
        method=Method.MDS_ORACLE.value,
        arrays={
            "coordinates": result.coordinates.tolist(),
            "positions": positions.tolist(),
            "eigenvalues": [result.eigenvalues[:3].tolist()],
        },
        meta={"not_euclidean": result.not_euclidean},
        config=_echo(cfg),
    )
    path.write_text(header.model_dump_json(), encoding="utf-8")


def _artifact_path(out: Path, method: Method) -> Path:
    if method in (Method.DEEPGPS, Method.SUPERVISED):
        return out / CHECKPOINT_FILE
    return out / f"{method.value}.json"


def cmd_train(
    cfg: ExperimentConfig,
    out: Union[str, Path],
    dataset: Optional[Union[str, Path]] = None,
    resume: bool = False,
) -> RunManifest:
    """
    Train the configured method

    Networks write checkpoint.bin and loss.csv; baselines write their fitted
    state as <method>.json. With resume, training continues from an existing
    checkpoint.

    Raises:
        WeakPosError: DimensionMismatch, InvalidConfig, NonFiniteLoss
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    env, graph, dataset_path = load_workspace(cfg, out, dataset)
    artifact = _artifact_path(out, cfg.method)
    artifacts: Dict[str, Path] = {"dataset": dataset_path, "model": artifact}
    final_loss = None

    if cfg.method in (Method.DEEPGPS, Method.SUPERVISED):
        previous = None
        if resume and artifact.exists():
            model, state, header = checkpoint_load(artifact, cfg.model.layer_sizes)
            previous = TrainResult(model, state, list(header.loss_trace))
            logger.info("Resuming from epoch %d", previous.epoch)
        result = train_network(
            graph, cfg, supervised=cfg.method == Method.SUPERVISED, resume=previous
        )
        checkpoint_save(
            artifact,
            result.model,
            result.state,
            epoch=result.epoch,
            loss_trace=result.losses,
            config=_echo(cfg),
        )
        artifacts["loss"] = out / LOSS_FILE
        write_loss_trace(artifacts["loss"], result.losses)
        final_loss = result.final_loss
    elif cfg.method == Method.EXPLICIT:
        state, subset = fit_explicit(env, graph, cfg)
        _save_explicit(artifact, state, subset, cfg)
        final_loss = state.residual_norm
    elif cfg.method == Method.PCA_KNN:
        retrieval = fit_retrieval(env, graph, cfg)
        retrieval.save(artifact, _echo(cfg))
        artifacts["arrays"] = artifact.with_suffix(".npz")
    else:
        result, positions = mds_oracle(env, cfg)
        _save_mds(artifact, result, positions, cfg)

    return _write_manifest(
        out,
        "train",
        cfg,
        artifacts,
        {"train": time.perf_counter() - started},
        final_loss,
    )


def _evaluate(
    cfg: ExperimentConfig, out: Path, env: Environment2D, graph: ConstraintGraph
) -> MethodEvaluation:
    artifact = _artifact_path(out, cfg.method)
    if not artifact.exists():
        raise WeakPosError(
            ErrorKind.INVALID_CONFIG,
            f"No trained {cfg.method.value} artifact at {artifact}",
        )
    method = cfg.method.value
    if cfg.method in (Method.DEEPGPS, Method.SUPERVISED):
        model, _, _ = checkpoint_load(artifact, cfg.model.layer_sizes)
        evaluation = evaluate_predictor(
            env,
            graph,
            network_predictor(model),
            cfg,
            method,
            raw=cfg.method == Method.SUPERVISED,
        )
        if graph.modality == Modality.LIDAR:
            evaluation.memory = memory_footprint(cfg, positions=len(graph))
        return evaluation
    if cfg.method == Method.PCA_KNN:
        retrieval = PcaKnnModel.load(artifact)
        evaluation = evaluate_predictor(
            env, graph, retrieval.predict, cfg, method, raw=True
        )
        evaluation.flags["rank_deficient"] = retrieval.basis.rank_deficient
        if graph.modality == Modality.LIDAR:
            evaluation.memory = memory_footprint(cfg, retrieval)
        return evaluation
    header = load_baseline_header(artifact, method)
    arrays = {name: np.asarray(values) for name, values in header.arrays.items()}
    if cfg.method == Method.EXPLICIT:
        state = ExplicitState(
            arrays["landmarks"],
            arrays["positions"],
            residual=arrays["residual"][0] if "residual" in arrays else None,
            iterations=int(header.meta.get("iterations", 0)),
        )
        evaluation = evaluate_explicit(env, state, arrays["truth"], cfg)
        evaluation.flags.update(header.meta)
        return evaluation
    result = MdsResult(
        arrays["coordinates"], arrays["eigenvalues"][0], header.meta["not_euclidean"]
    )
    return evaluate_mds(result, arrays["positions"])


def cmd_eval(
    cfg: ExperimentConfig,
    out: Union[str, Path],
    dataset: Optional[Union[str, Path]] = None,
) -> RunManifest:
    """
    Evaluate a trained method

    Writes report.json, ate_summary.csv, error_grid.csv (when a grid was
    evaluated) and manifest-eval.json.
    """
    out = Path(out)
    started = time.perf_counter()
    env, graph, dataset_path = load_workspace(cfg, out, dataset)
    evaluation = _evaluate(cfg, out, env, graph)
    for report in evaluation.reports:
        logger.info(
            "%s on %s%s: rms %.6g, median %.6g, max %.6g",
            report.method,
            report.dataset,
            " (aligned)" if report.aligned else "",
            report.rms,
            report.median,
            report.max,
        )
    document = ReportDocument(
        name=cfg.name,
        method=cfg.method.value,
        summaries=[report.summary() for report in evaluation.reports],
        alignment=(
            None
            if evaluation.transform is None
            else evaluation.transform.info(fitted_on="alignment set")
        ),
        diagonal=env.diagonal,
        shorter_side=env.shorter_side,
        memory=evaluation.memory,
        flags=evaluation.flags,
        config=_echo(cfg),
    )
    artifacts = {
        "dataset": dataset_path,
        "report": out / REPORT_FILE,
        "ate": out / ATE_FILE,
    }
    artifacts["report"].write_text(document.model_dump_json(indent=2), encoding="utf-8")
    write_ate_summary(artifacts["ate"], document.summaries)
    if evaluation.grid is not None:
        artifacts["grid"] = out / GRID_FILE
        write_error_grid(artifacts["grid"], evaluation.grid)
    return _write_manifest(
        out, "eval", cfg, artifacts, {"eval": time.perf_counter() - started}
    )


def cmd_sweep(cfg: ExperimentConfig, out: Union[str, Path]) -> RunManifest:
    """
    Run the configured robustness sweep

    Writes sweep.csv, sweep.json and manifest-sweep.json.

    Raises:
        WeakPosError: InvalidConfig without a sweep section,
            SampleBudgetExceeded for oversized sample counts
    """
    if cfg.sweep is None:
        raise WeakPosError(ErrorKind.INVALID_CONFIG, "sweep: section is required")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    if cfg.sweep.kind == SweepKind.NOISE:
        table = noise_sweep(cfg, cfg.sweep.values)
    else:
        table = sample_count_sweep(cfg, [int(value) for value in cfg.sweep.values])
    document = SweepDocument(
        kind=cfg.sweep.kind.value, rows=table.rows(), config=_echo(cfg)
    )
    artifacts = {"sweep": out / SWEEP_CSV, "sweep_json": out / SWEEP_JSON}
    write_sweep(artifacts["sweep"], table)
    artifacts["sweep_json"].write_text(
        document.model_dump_json(indent=2), encoding="utf-8"
    )
    return _write_manifest(
        out, "sweep", cfg, artifacts, {"sweep": time.perf_counter() - started}
    )
