"""Robustness sweeps over odometry noise and training-set size"""

import logging
from typing import Optional, Sequence

import numpy as np

from weakpos.collect import ConstraintGraph
from weakpos.env import Environment2D
from weakpos.error import ErrorKind, WeakPosError
from weakpos.evaluation import EvalReport, SweepTable
from weakpos.msg.config import ExperimentConfig, Method
from weakpos.pipeline import (
    build_environment,
    collect_dataset,
    evaluate_predictor,
    network_predictor,
    train_network,
)

logger = logging.getLogger(__name__)

RISE_LIMIT = 1.5
"""flag a row whose RMS exceeds the previous one by this factor"""


def _check_values(values: Sequence[float]) -> None:
    if not len(values):
        raise WeakPosError(ErrorKind.INVALID_CONFIG, "sweep.values must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise WeakPosError(
            ErrorKind.INVALID_CONFIG, "sweep.values must be strictly increasing"
        )


def _train_and_score(
    env: Environment2D, graph: ConstraintGraph, cfg: ExperimentConfig
) -> EvalReport:
    result = train_network(graph, cfg, supervised=cfg.method == Method.SUPERVISED)
    evaluation = evaluate_predictor(
        env, graph, network_predictor(result.model), cfg, cfg.method.value, raw=False
    )
    return evaluation.report("grid", aligned=True)


def noise_sweep(
    base_config: ExperimentConfig,
    w_values: Sequence[float],
    env: Optional[Environment2D] = None,
) -> SweepTable:
    """
    Retrain and evaluate for each odometry noise factor

    Every run reuses the trajectory, noise and initialization seeds, so only
    the labels change.

    Args:
        base_config: experiment to perturb
        w_values: nonnegative, strictly increasing noise factors
        env: world, built from the config if None
    Returns:
        SweepTable: aligned grid ATE per noise factor
    """
    _check_values(w_values)
    if w_values[0] < 0:
        raise WeakPosError(
            ErrorKind.INVALID_CONFIG, "Noise factors must be nonnegative"
        )
    env = env or build_environment(base_config)
    reports = []
    for w in w_values:
        noise = base_config.collection.noise.model_copy(update={"w": float(w)})
        collection = base_config.collection.model_copy(update={"noise": noise})
        cfg = base_config.model_copy(update={"collection": collection})
        report = _train_and_score(env, collect_dataset(env, cfg), cfg)
        logger.info("w=%g: rms %.6g, median %.6g", w, report.rms, report.median)
        reports.append(report)
    return SweepTable("w", [float(w) for w in w_values], reports)


def _flag_rises(reports: Sequence[EvalReport]) -> list:
    flags = [False]
    for previous, current in zip(reports, reports[1:]):
        flags.append(bool(current.rms > RISE_LIMIT * previous.rms))
    return flags


def sample_count_sweep(
    base_config: ExperimentConfig,
    n_values: Sequence[int],
    env: Optional[Environment2D] = None,
    graph: Optional[ConstraintGraph] = None,
) -> SweepTable:
    """
    Retrain on growing prefixes of the segment-shuffled dataset

    All prefixes come from one shuffle, so smaller sets are contained in
    larger ones; the full size trains on the dataset as collected. Rows whose
    RMS rises by more than half over the previous row are flagged.

    Args:
        base_config: experiment to run
        n_values: strictly increasing sample counts
        env: world, built from the config if None
        graph: full dataset, collected if None
    Returns:
        SweepTable: aligned grid ATE per sample count
    Raises:
        WeakPosError: SampleBudgetExceeded if a count exceeds the dataset
    """
    _check_values(n_values)
    env = env or build_environment(base_config)
    graph = graph or collect_dataset(env, base_config)
    largest = int(n_values[-1])
    if largest > len(graph):
        raise WeakPosError(
            ErrorKind.SAMPLE_BUDGET_EXCEEDED,
            f"Sweep asks for {largest} samples, dataset has {len(graph)}",
        )
    reports = []
    for n in n_values:
        n = int(n)
        subset = (
            graph
            if n == len(graph)
            else graph.subset(n, np.random.default_rng(base_config.seeds.shuffle))
        )
        report = _train_and_score(env, subset, base_config)
        logger.info("n=%d: rms %.6g, median %.6g", n, report.rms, report.median)
        reports.append(report)
    flags = _flag_rises(reports)
    for n, flag in zip(n_values, flags):
        if flag:
            logger.warning("RMS rose by more than half at n=%d", int(n))
    return SweepTable("n", [float(n) for n in n_values], reports, flags)
