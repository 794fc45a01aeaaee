"""Rigid alignment, trajectory error statistics, error grids and report tables"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from weakpos.collect import observe_many
from weakpos.env import Environment2D
from weakpos.error import ErrorKind, WeakPosError
from weakpos.msg.config import CollectionConfig
from weakpos.msg.report import AlignmentInfo, AteSummary, SweepRow

logger = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray], np.ndarray]
"""maps a (rows, features) matrix to (rows, 2) positions"""

SIGNIFICANT = "{:.9g}"
ATE_COLUMNS = ("method", "dataset", "rms", "median", "max")
GRID_COLUMNS = ("x", "y", "ex", "ey", "magnitude")
SWEEP_COLUMNS = ("param", "rms", "median", "max")


@dataclass(frozen=True)
class RigidTransform2D:
    """Rotation (or reflection) followed by a translation"""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=float).reshape(2, 2)
        if not np.allclose(rotation.T @ rotation, np.eye(2), rtol=0.0, atol=1e-10):
            raise ValueError("Rotation part must be orthogonal")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(2)
        )

    @staticmethod
    def identity() -> "RigidTransform2D":
        """Transform that changes nothing"""
        return RigidTransform2D(np.eye(2), np.zeros(2))

    @property
    def reflection(self) -> bool:
        """True if the transform mirrors"""
        return bool(np.linalg.det(self.rotation) < 0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform (N, 2) points"""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def info(self, fitted_on: Optional[str] = None) -> AlignmentInfo:
        """Serializable form"""
        return AlignmentInfo(
            rotation=tuple(map(tuple, self.rotation.tolist())),
            translation=tuple(self.translation.tolist()),
            reflection=self.reflection,
            fitted_on=fitted_on,
        )


def _check_lengths(source: np.ndarray, target: np.ndarray):
    if np.shape(source) != np.shape(target):
        raise WeakPosError(
            ErrorKind.LENGTH_MISMATCH,
            f"Point sets differ: {np.shape(source)} vs {np.shape(target)}",
        )


def rigid_align(
    source: np.ndarray, target: np.ndarray, allow_reflection: bool = True
) -> RigidTransform2D:
    """
    Least-squares rotation and translation mapping source onto target

    Orthogonal Procrustes via SVD of the cross-covariance, without scale.

    Args:
        source: (N, 2) points to move
        target: (N, 2) reference points
        allow_reflection: permit a determinant -1 solution
    Returns:
        RigidTransform2D: optimal transform
    Raises:
        WeakPosError: LengthMismatch or DegenerateCloud
    """
    source = np.asarray(source, dtype=float)
    target = np.asarray(target, dtype=float)
    _check_lengths(source, target)
    if len(source) < 2:
        raise WeakPosError(ErrorKind.DEGENERATE_CLOUD, "Need at least two points")
    source_mean, target_mean = source.mean(axis=0), target.mean(axis=0)
    centered = source - source_mean
    if not np.any(np.abs(centered) > 0):
        raise WeakPosError(ErrorKind.DEGENERATE_CLOUD, "All source points coincide")
    u, _, vt = np.linalg.svd(centered.T @ (target - target_mean))
    if not allow_reflection and np.linalg.det(vt.T @ u.T) < 0:
        vt[-1] *= -1.0
    rotation = vt.T @ u.T
    return RigidTransform2D(rotation, target_mean - rotation @ source_mean)


@dataclass
class EvalReport:
    """Position errors of one method on one point set"""

    errors: np.ndarray
    """(N, 2) error vectors, prediction minus truth"""
    rms: float
    median: float
    max: float
    transform: Optional[RigidTransform2D] = None
    positions: Optional[np.ndarray] = None
    """(N, 2) true positions the errors refer to"""
    method: str = ""
    dataset: str = ""
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def aligned(self) -> bool:
        """True if a transform was applied before measuring"""
        return self.transform is not None

    @property
    def magnitudes(self) -> np.ndarray:
        """Per-point error norms"""
        return np.linalg.norm(self.errors, axis=1)

    def summary(self) -> AteSummary:
        """Summary row for ate_summary.csv"""
        return AteSummary(
            method=self.method,
            dataset=self.dataset,
            aligned=self.aligned,
            count=len(self.errors),
            rms=self.rms,
            median=self.median,
            max=self.max,
        )


def _report(
    errors: np.ndarray,
    positions: np.ndarray,
    transform: Optional[RigidTransform2D],
    method: str,
    dataset: str,
) -> EvalReport:
    ordered = np.sort(np.linalg.norm(errors, axis=1))
    return EvalReport(
        errors=errors,
        rms=float(np.sqrt(np.mean(ordered**2))),
        median=float(ordered[(len(ordered) - 1) // 2]),
        max=float(ordered[-1]),
        transform=transform,
        positions=positions,
        method=method,
        dataset=dataset,
    )


def ate_stats(
    pred: np.ndarray,
    gt: np.ndarray,
    align: bool = False,
    transform: Optional[RigidTransform2D] = None,
    method: str = "",
    dataset: str = "",
) -> EvalReport:
    """
    RMS, median and max of per-point position errors

    The median of an even count is the lower middle value.

    Args:
        pred: (N, 2) predictions
        gt: (N, 2) true positions
        align: fit a rigid transform (reflection allowed) of pred onto gt first
        transform: apply this precomputed transform instead of fitting one
        method: method label for the report
        dataset: dataset label for the report
    Returns:
        EvalReport: statistics and error vectors
    Raises:
        WeakPosError: LengthMismatch if pred and gt differ in shape
    """
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    _check_lengths(pred, gt)
    if not len(pred):
        raise WeakPosError(ErrorKind.LENGTH_MISMATCH, "No points to evaluate")
    if transform is None and align:
        transform = rigid_align(pred, gt, allow_reflection=True)
    if transform is not None:
        pred = transform.apply(pred)
    return _report(pred - gt, gt, transform, method, dataset)


def grid_positions(env: Environment2D, resolution: int) -> np.ndarray:
    """
    Free evaluation positions

    Rooms use the centres of their free cells; open worlds use the centres
    of a resolution x resolution partition of the bounds.
    """
    if resolution < 2:
        raise ValueError("Grid resolution must be at least 2")
    if env.occupancy is not None:
        return env.occupancy.cell_centers(free_only=True)
    xmin, xmax, ymin, ymax = env.bounds
    xs = xmin + (np.arange(resolution) + 0.5) * (xmax - xmin) / resolution
    ys = ymin + (np.arange(resolution) + 0.5) * (ymax - ymin) / resolution
    grid_x, grid_y = np.meshgrid(xs, ys)
    return np.column_stack([grid_x.ravel(), grid_y.ravel()])


@dataclass
class ErrorGrid:
    """Error vector at every free grid position"""

    positions: np.ndarray
    errors: np.ndarray

    def __len__(self):
        return len(self.positions)

    @property
    def magnitudes(self) -> np.ndarray:
        """Per-entry error norms"""
        return np.linalg.norm(self.errors, axis=1)

    def report(
        self, method: str = "", transform: Optional[RigidTransform2D] = None
    ) -> EvalReport:
        """ATE statistics of the grid

        ``transform`` records the alignment already applied to the predictions.
        """
        return _report(self.errors, self.positions, transform, method, "grid")


def error_grid(
    env: Environment2D,
    predictor: Predictor,
    resolution: int,
    obs_cfg: CollectionConfig,
    align_against: Optional[RigidTransform2D] = None,
) -> ErrorGrid:
    """
    Predict at every free grid position and record the error vectors

    Observations are synthesized at heading 0. The supplied alignment, fitted
    beforehand on training data, is applied to the predictions.

    Args:
        env: world to evaluate in
        predictor: feature matrix -> positions
        resolution: per-axis grid count for open worlds
        obs_cfg: sensor settings
        align_against: transform applied to predictions
    Returns:
        ErrorGrid: positions and error vectors
    """
    positions = grid_positions(env, resolution)
    observations = observe_many(env, positions, obs_cfg)
    features = np.vstack([obs.features() for obs in observations])
    pred = np.asarray(predictor(features), dtype=float)
    if align_against is not None:
        pred = align_against.apply(pred)
    logger.info("Evaluated %d grid positions", len(positions))
    return ErrorGrid(positions=positions, errors=pred - positions)


@dataclass
class SweepTable:
    """ATE summaries for increasing values of one swept parameter"""

    param: str
    values: List[float]
    reports: List[EvalReport]
    flags: List[bool] = field(default_factory=list)

    def __post_init__(self):
        if len(self.values) != len(self.reports):
            raise ValueError("Every swept value needs a report")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("Swept values must be strictly increasing")
        if not self.flags:
            self.flags = [False] * len(self.values)

    def rows(self) -> List[SweepRow]:
        """Table rows"""
        return [
            SweepRow(
                param=value,
                rms=report.rms,
                median=report.median,
                max=report.max,
                flagged=flag,
            )
            for value, report, flag in zip(self.values, self.reports, self.flags)
        ]


def _fmt(value: Any) -> str:
    return SIGNIFICANT.format(value) if isinstance(value, float) else str(value)


def _write_csv(path: Union[str, Path], columns: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(value) for value in row])


def write_ate_summary(path: Union[str, Path], summaries: Sequence[AteSummary]) -> None:
    """ate_summary.csv: method, dataset, rms, median, max"""
    _write_csv(
        path,
        ATE_COLUMNS,
        (
            (
                summary.method if not summary.aligned else f"{summary.method}+aligned",
                summary.dataset,
                summary.rms,
                summary.median,
                summary.max,
            )
            for summary in summaries
        ),
    )


def write_error_grid(path: Union[str, Path], grid: ErrorGrid) -> None:
    """error_grid.csv: x, y, ex, ey, magnitude"""
    magnitudes = grid.magnitudes
    _write_csv(
        path,
        GRID_COLUMNS,
        (
            (float(p[0]), float(p[1]), float(e[0]), float(e[1]), float(m))
            for p, e, m in zip(grid.positions, grid.errors, magnitudes)
        ),
    )


def write_sweep(path: Union[str, Path], table: SweepTable) -> None:
    """sweep.csv: param, rms, median, max"""
    _write_csv(
        path,
        SWEEP_COLUMNS,
        ((float(row.param), row.rms, row.median, row.max) for row in table.rows()),
    )


def write_loss_trace(path: Union[str, Path], losses: Sequence[float]) -> None:
    """loss.csv: epoch, loss"""
    _write_csv(path, ("epoch", "loss"), enumerate(map(float, losses)))
