"""Experiment stages shared by the commands and the sweeps"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from weakpos.baselines import (
    EdmMatrix,
    ExplicitState,
    MdsResult,
    PcaKnnModel,
    classical_mds,
    explicit_restarts,
    fit_pca_knn,
    pca_project,
    triangulate,
)
from weakpos.collect import (
    ConstraintGraph,
    beam_angles,
    collect,
    lidar_ranges,
    observe_many,
)
from weakpos.env import (
    Environment2D,
    generate_landmark_env,
    generate_room_env,
    load_environment,
)
from weakpos.error import ErrorKind, WeakPosError
from weakpos.evaluation import (
    ErrorGrid,
    EvalReport,
    Predictor,
    RigidTransform2D,
    ate_stats,
    error_grid,
    grid_positions,
    rigid_align,
)
from weakpos.losses import dense_segment_loss, make_batches, supervised_loss
from weakpos.msg.config import EnvKind, ExperimentConfig, Method
from weakpos.msg.dataset import Modality
from weakpos.msg.report import MemoryFootprint
from weakpos.net import (
    AdamState,
    MlpModel,
    adam_step,
    backward,
    forward,
    init_params,
    predict,
)

logger = logging.getLogger(__name__)


def build_environment(cfg: ExperimentConfig) -> Environment2D:
    """Load or generate the configured world"""
    env_cfg = cfg.environment
    if env_cfg.file is not None:
        return load_environment(env_cfg.file)
    if env_cfg.kind == EnvKind.LANDMARKS:
        return generate_landmark_env(
            env_cfg.bounds.as_tuple(), env_cfg.landmark_count, cfg.seeds.env
        )
    return generate_room_env(env_cfg.room, cfg.seeds.env)


def collect_dataset(env: Environment2D, cfg: ExperimentConfig) -> ConstraintGraph:
    """Run the configured collection with the trajectory and noise seeds"""
    return collect(env, cfg.collection, cfg.seeds.trajectory, cfg.seeds.noise)


@dataclass
class TrainResult:
    """Trained network with its optimizer state and loss trace"""

    model: MlpModel
    state: AdamState
    losses: List[float] = field(default_factory=list)

    @property
    def epoch(self) -> int:
        """Completed epochs"""
        return len(self.losses)

    @property
    def final_loss(self) -> Optional[float]:
        """Mean loss of the last epoch"""
        return self.losses[-1] if self.losses else None


def train_network(
    graph: ConstraintGraph,
    cfg: ExperimentConfig,
    supervised: bool = False,
    resume: Optional[TrainResult] = None,
    epochs: Optional[int] = None,
) -> TrainResult:
    """
    Train the position network on a dataset

    The weak loss sees only the stripped graph. The supervised variant reads
    ground truth and is the privileged comparison. Epoch e shuffles with the
    stream seeded by (shuffle seed, e), so a resumed run replays the same
    batches as an uninterrupted one.

    Args:
        graph: training dataset
        cfg: experiment configuration
        supervised: train on true positions instead of distance constraints
        resume: continue from this state
        epochs: stop after this many epochs in total, training.epochs if None
    Returns:
        TrainResult: model, optimizer state and per-epoch mean losses
    Raises:
        WeakPosError: DimensionMismatch, InvalidConfig if supervised training
            has no ground truth, NonFiniteLoss on divergence
    """
    training = cfg.training
    layer_sizes = cfg.model.layer_sizes
    if graph.input_size != layer_sizes[0]:
        raise WeakPosError(
            ErrorKind.DIMENSION_MISMATCH,
            f"Dataset features have {graph.input_size} values, "
            f"model input is {layer_sizes[0]}",
        )
    if supervised:
        gt = graph.ground_truth()
    else:
        graph = graph.without_ground_truth()

    if resume is None:
        model = init_params(layer_sizes, cfg.seeds.init)
        result = TrainResult(
            model, AdamState.zeros(model, training.beta1, training.beta2, training.eps)
        )
    else:
        result = TrainResult(resume.model, resume.state, list(resume.losses))

    total = training.epochs if epochs is None else epochs
    for epoch in range(result.epoch, total):
        lr = training.learning_rate(epoch)
        stream = np.random.default_rng([cfg.seeds.shuffle, epoch])
        batch_losses = []
        for number, (batch, pairs) in enumerate(
            make_batches(graph, training.batch_size, stream)
        ):
            pred, cache = forward(result.model, batch)
            if supervised:
                loss = supervised_loss(pred, gt[batch.rows])
            else:
                try:
                    loss = dense_segment_loss(pred, pairs, training.loss_variant)
                except WeakPosError as err:
                    if err.kind != ErrorKind.EMPTY_PAIR_SET:
                        raise
                    logger.debug("Epoch %d batch %d skipped: %s", epoch, number, err)
                    continue
            if not np.isfinite(loss.value) or not np.isfinite(loss.gradient).all():
                raise WeakPosError(
                    ErrorKind.NON_FINITE_LOSS,
                    f"Loss is not finite at epoch {epoch}, batch {number}",
                )
            gradients = backward(result.model, cache, loss.gradient)
            adam_step(result.model, result.state, gradients, lr)
            batch_losses.append(loss.value)
        if not batch_losses:
            raise WeakPosError(
                ErrorKind.EMPTY_PAIR_SET, f"Epoch {epoch} produced no usable batch"
            )
        result.losses.append(float(np.mean(batch_losses)))
        if (epoch + 1) % training.log_every == 0 or epoch + 1 == total:
            logger.info(
                "Epoch %d/%d: loss %.6g (lr %g)",
                epoch + 1,
                total,
                result.losses[-1],
                lr,
            )
    return result


def network_predictor(model: MlpModel) -> Predictor:
    """Predictor backed by a trained network"""
    return lambda features: predict(model, features)


def alignment_indices(graph: ConstraintGraph, cfg: ExperimentConfig) -> np.ndarray:
    """Training observations the gauge-fixing transform is estimated on"""
    stream = np.random.default_rng(cfg.seeds.eval)
    size = min(cfg.evaluation.alignment_size, len(graph))
    return np.sort(stream.choice(len(graph), size=size, replace=False))


def lidar_test_set(
    env: Environment2D, cfg: ExperimentConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """Random free positions scanned at a random grid heading each"""
    stream = np.random.default_rng([cfg.seeds.eval, 1])
    positions = np.vstack(
        [env.sample_free(stream) for _ in range(cfg.evaluation.test_count)]
    )
    observations = observe_many(env, positions, cfg.collection, stream, variants=1)
    return np.vstack([obs.features() for obs in observations]), positions


@dataclass
class MethodEvaluation:
    """Reports, grid and diagnostics of one method"""

    reports: List[EvalReport] = field(default_factory=list)
    grid: Optional[ErrorGrid] = None
    transform: Optional[RigidTransform2D] = None
    flags: Dict[str, Any] = field(default_factory=dict)
    memory: Optional[MemoryFootprint] = None

    def report(self, dataset: str, aligned: bool = True) -> EvalReport:
        """Report on one point set"""
        for report in self.reports:
            if report.dataset == dataset and report.aligned == aligned:
                return report
        raise KeyError(f"No {dataset} report (aligned={aligned})")


def evaluate_predictor(
    env: Environment2D,
    graph: ConstraintGraph,
    predictor: Predictor,
    cfg: ExperimentConfig,
    method: str,
    raw: bool,
) -> MethodEvaluation:
    """
    Training-set, grid and (for lidar) test-set reports of a predictor

    Aligned reports share one transform fitted on the alignment set drawn
    from the training trajectory.

    Args:
        env: world
        graph: training dataset with ground truth
        predictor: feature matrix -> positions
        cfg: experiment configuration
        method: method label
        raw: also report unaligned errors
    """
    gt = graph.ground_truth()
    train_pred = predictor(graph.feature_matrix())
    anchor = alignment_indices(graph, cfg)
    transform = rigid_align(train_pred[anchor], gt[anchor], allow_reflection=True)
    evaluation = MethodEvaluation(transform=transform)

    sets = [("train", train_pred, gt)]
    if graph.modality == Modality.LIDAR:
        test_features, test_positions = lidar_test_set(env, cfg)
        sets.append(("test", predictor(test_features), test_positions))
    for dataset, pred, truth in sets:
        if raw:
            evaluation.reports.append(
                ate_stats(pred, truth, method=method, dataset=dataset)
            )
        evaluation.reports.append(
            ate_stats(pred, truth, transform=transform, method=method, dataset=dataset)
        )

    resolution = cfg.evaluation.grid_resolution
    if raw:
        raw_grid = error_grid(env, predictor, resolution, cfg.collection)
        evaluation.reports.append(raw_grid.report(method))
    evaluation.grid = error_grid(env, predictor, resolution, cfg.collection, transform)
    evaluation.reports.append(evaluation.grid.report(method, transform))
    return evaluation


def explicit_dataset(graph: ConstraintGraph, cfg: ExperimentConfig) -> ConstraintGraph:
    """Whole-segment subset the joint solve runs on"""
    count = min(cfg.baselines.explicit_subset, len(graph))
    if count == len(graph):
        return graph
    return graph.subset(count, np.random.default_rng(cfg.seeds.init))


def fit_explicit(
    env: Environment2D, graph: ConstraintGraph, cfg: ExperimentConfig
) -> Tuple[ExplicitState, ConstraintGraph]:
    """Joint landmark/position solve from random starts"""
    subset = explicit_dataset(graph, cfg)
    baselines = cfg.baselines
    state = explicit_restarts(
        subset.without_ground_truth(),
        env.bounds,
        baselines.explicit_restarts,
        np.random.default_rng([cfg.seeds.init, 1]),
        baselines.explicit_max_iters,
        baselines.explicit_tol,
        cfg.collection.d_max,
    )
    return state, subset


def explicit_predictor(
    state: ExplicitState, d_max: Optional[float], flags: Dict[str, Any]
) -> Predictor:
    """
    Triangulate queries against the solved landmarks

    Queries with degenerate geometry get the centroid of the solved
    positions; their count is recorded under ``degenerate_queries``.
    """
    fallback = state.positions.mean(axis=0)

    def run(features: np.ndarray) -> np.ndarray:
        result = np.empty((len(features), 2))
        degenerate = 0
        for row, distances in enumerate(features):
            try:
                result[row] = triangulate(state.landmarks, distances, d_max)
            except WeakPosError:
                result[row] = fallback
                degenerate += 1
        flags["degenerate_queries"] = flags.get("degenerate_queries", 0) + degenerate
        return result

    return run


def evaluate_explicit(
    env: Environment2D,
    state: ExplicitState,
    gt: np.ndarray,
    cfg: ExperimentConfig,
) -> MethodEvaluation:
    """Solved positions against their true positions, and triangulated grid queries"""
    method = Method.EXPLICIT.value
    transform = rigid_align(state.positions, gt, allow_reflection=True)
    evaluation = MethodEvaluation(
        transform=transform,
        flags={"residual_norm": state.residual_norm, "iterations": state.iterations},
    )
    evaluation.reports += [
        ate_stats(state.positions, gt, method=method, dataset="train"),
        ate_stats(
            state.positions, gt, transform=transform, method=method, dataset="train"
        ),
    ]
    predictor = explicit_predictor(state, cfg.collection.d_max, evaluation.flags)
    resolution = cfg.evaluation.grid_resolution
    evaluation.grid = error_grid(env, predictor, resolution, cfg.collection, transform)
    evaluation.reports.append(evaluation.grid.report(method, transform))
    return evaluation


def all_orientation_features(
    env: Environment2D, positions: np.ndarray, cfg: ExperimentConfig, chunk: int = 64
):
    """
    Flattened scans of every position at every grid heading

    Yields:
        (features, positions) chunks, headings in grid order per position
    """
    collection = cfg.collection
    headings = beam_angles(collection.orientations)
    angles = beam_angles(collection.n_beams)
    for start in range(0, len(positions), chunk):
        points = positions[start : start + chunk]
        ranges = lidar_ranges(
            env,
            np.repeat(points, len(headings), axis=0),
            np.tile(headings, len(points)),
            collection.n_beams,
            collection.max_range,
        )
        features = np.empty((len(ranges), 2 * collection.n_beams))
        features[:, 0::2] = ranges * np.cos(angles)
        features[:, 1::2] = ranges * np.sin(angles)
        yield features, np.repeat(points, len(headings), axis=0)


def fit_retrieval(
    env: Environment2D, graph: ConstraintGraph, cfg: ExperimentConfig
) -> PcaKnnModel:
    """
    PCA+KNN over the training set

    Lidar training positions are memorized at every grid heading; the basis
    is fitted on the stored scan variants.
    """
    gt = graph.ground_truth()
    baselines = cfg.baselines
    if graph.modality == Modality.LANDMARKS:
        return fit_pca_knn(
            graph.feature_matrix(), gt, baselines.pca_components, baselines.knn_k
        )
    table = graph.feature_table
    stored = np.vstack(
        [
            table.rows(np.arange(len(graph)), np.full(len(graph), variant))
            for variant in range(table.variant_count)
        ]
    )
    model = fit_pca_knn(
        stored,
        np.tile(gt, (table.variant_count, 1)),
        baselines.pca_components,
        baselines.knn_k,
    )
    del stored
    features, positions = [], []
    for chunk_features, chunk_positions in all_orientation_features(env, gt, cfg):
        features.append(pca_project(model.basis, chunk_features))
        positions.append(chunk_positions)
    model.features = np.vstack(features)
    model.positions = np.vstack(positions)
    logger.info("PCA+KNN stores %d scans", len(model.features))
    return model


def retrieval_floats(cfg: ExperimentConfig, positions: int, width: int) -> int:
    """Floats PCA+KNN stores for a lidar training set: N*R*k + N*R*2 + d + k*d"""
    scans = positions * cfg.collection.orientations
    k = min(cfg.baselines.pca_components, width)
    return scans * k + scans * 2 + width + k * width


def memory_footprint(
    cfg: ExperimentConfig, retrieval: Optional[PcaKnnModel] = None, positions: int = 0
) -> MemoryFootprint:
    """
    Network parameter count against the retrieval baseline's stored floats

    Without a fitted retrieval model the count is derived from the
    configuration and the number of training positions.
    """
    sizes = cfg.model.layer_sizes
    parameters = sum((a + 1) * b for a, b in zip(sizes, sizes[1:]))
    stored = (
        retrieval.footprint()
        if retrieval is not None
        else retrieval_floats(cfg, positions, sizes[0])
    )
    return MemoryFootprint(deepgps_parameters=parameters, pca_knn_floats=stored)


def mds_oracle(
    env: Environment2D, cfg: ExperimentConfig
) -> Tuple[MdsResult, np.ndarray]:
    """Embed a random subset of grid positions from their exact distances"""
    positions = grid_positions(env, cfg.evaluation.grid_resolution)
    stream = np.random.default_rng([cfg.seeds.eval, 2])
    count = min(cfg.baselines.mds_points, len(positions))
    picks = stream.choice(len(positions), size=count, replace=False)
    chosen = positions[np.sort(picks)]
    return classical_mds(EdmMatrix.from_points(chosen)), chosen


def evaluate_mds(result: MdsResult, positions: np.ndarray) -> MethodEvaluation:
    """Aligned error of the MDS embedding"""
    report = ate_stats(
        result.coordinates,
        positions,
        align=True,
        method=Method.MDS_ORACLE.value,
        dataset="grid",
    )
    return MethodEvaluation(
        reports=[report],
        transform=report.transform,
        flags={"not_euclidean": result.not_euclidean},
    )
