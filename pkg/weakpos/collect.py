"""Simulated robot data collection producing constraint-graph datasets"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from weakpos.env import RETRY_CAP, Environment2D, ray_cast, ray_cast_many, segment_clear
from weakpos.error import ErrorKind, WeakPosError
from weakpos.msg.config import CollectionConfig, NoiseConfig, NoiseMode, Strategy
from weakpos.msg.dataset import (
    DATASET_SCHEMA_VERSION,
    DatasetHeader,
    Modality,
    ObservationRecord,
)

logger = logging.getLogger(__name__)

LIDAR_CHUNK = 256
"""positions ray-cast per vectorized call"""


def beam_angles(n_beams: int) -> np.ndarray:
    """Sensor-frame beam angles 2*pi*j/n_beams"""
    return 2.0 * np.pi * np.arange(n_beams) / n_beams


@dataclass(frozen=True)
class Observation:
    """Local observation at one position

    Landmark observations hold one range per landmark. Lidar observations hold
    one or more scans (orientation variants) of the same position, each stored
    as beam ranges plus the hidden heading it was taken at.
    """

    landmark_distances: Optional[np.ndarray] = None
    lidar_ranges: Optional[np.ndarray] = None
    """(variants, n_beams)"""
    headings: Optional[np.ndarray] = None
    """(variants,)"""

    @property
    def modality(self) -> Modality:
        """Observation modality"""
        if self.landmark_distances is not None:
            return Modality.LANDMARKS
        return Modality.LIDAR

    @property
    def variant_count(self) -> int:
        """Number of stored scans (1 for landmark observations)"""
        return 1 if self.lidar_ranges is None else len(self.lidar_ranges)

    @property
    def n_beams(self) -> int:
        """Beams per scan"""
        return self.lidar_ranges.shape[1]

    @property
    def lidar_scan(self) -> np.ndarray:
        """Points of the first scan in the sensor frame, ordered by beam angle"""
        return self.scan_points(0)

    def scan_points(self, variant: int) -> np.ndarray:
        """(n_beams, 2) sensor-frame points of one variant"""
        angles = beam_angles(self.n_beams)
        ranges = self.lidar_ranges[variant]
        return np.column_stack([ranges * np.cos(angles), ranges * np.sin(angles)])

    def features(self, variant: int = 0) -> np.ndarray:
        """Network input: landmark distances or the flattened scan"""
        if self.landmark_distances is not None:
            return self.landmark_distances
        return self.scan_points(variant).ravel()

    @staticmethod
    def merge(observations: Sequence["Observation"]) -> "Observation":
        """Stack lidar scans of one position into a multi-variant observation"""
        return Observation(
            lidar_ranges=np.vstack([obs.lidar_ranges for obs in observations]),
            headings=np.concatenate([obs.headings for obs in observations]),
        )


@dataclass(frozen=True)
class Segment:
    """Samples taken along one straight line"""

    indices: np.ndarray
    """observation indices in travel order"""
    labels: np.ndarray
    """arc-length labels, starting at 0 and strictly increasing"""

    def __len__(self):
        return len(self.indices)


class FeatureTable:
    """Row lookup of network inputs for a whole dataset

    Lidar scans stay stored as ranges and are expanded to sensor-frame points
    only for the requested rows.
    """

    def __init__(self, observations: Sequence[Observation]):
        first = observations[0]
        if first.landmark_distances is not None:
            self._distances = np.vstack(
                [obs.landmark_distances for obs in observations]
            )
            self._ranges = None
            self.variant_count = 1
            self.width = self._distances.shape[1]
        else:
            self._distances = None
            self._ranges = np.stack([obs.lidar_ranges for obs in observations])
            angles = beam_angles(first.n_beams)
            self._cos, self._sin = np.cos(angles), np.sin(angles)
            self.variant_count = self._ranges.shape[1]
            self.width = 2 * first.n_beams

    def rows(self, indices: np.ndarray, variants: Optional[np.ndarray] = None):
        """(len(indices), width) features, lidar variant 0 unless given"""
        if self._distances is not None:
            return self._distances[indices]
        if variants is None:
            variants = np.zeros(len(indices), dtype=int)
        ranges = self._ranges[indices, variants]
        points = np.empty((len(indices), self.width))
        points[:, 0::2] = ranges * self._cos
        points[:, 1::2] = ranges * self._sin
        return points


@dataclass
class ConstraintGraph:
    """Observations grouped into segments with arc-length labels

    Ground-truth positions are kept for evaluation; training code works on
    ``without_ground_truth()`` copies.
    """

    modality: Modality
    observations: List[Observation]
    segments: List[Segment]
    gt_positions: Optional[np.ndarray] = field(default=None, repr=False)
    meta: Dict[str, Any] = field(default_factory=dict)

    def __len__(self):
        return len(self.observations)

    @property
    def has_ground_truth(self) -> bool:
        """True if ground-truth positions are attached"""
        return self.gt_positions is not None

    @property
    def input_size(self) -> int:
        """Length of one feature vector"""
        return len(self.observations[0].features())

    def ground_truth(self) -> np.ndarray:
        """
        Ground-truth positions, reserved for evaluation and privileged baselines

        Raises:
            WeakPosError: InvalidConfig if the graph was stripped
        """
        if self.gt_positions is None:
            raise WeakPosError(
                ErrorKind.INVALID_CONFIG, "Dataset carries no ground-truth positions"
            )
        return self.gt_positions

    def without_ground_truth(self) -> "ConstraintGraph":
        """Copy of the graph that cannot reveal positions"""
        return replace(self, gt_positions=None)

    def feature_matrix(self, variants: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Stack feature vectors of all observations

        Args:
            variants: lidar variant per observation, first variant if None
        Returns:
            np.ndarray: (N, input_size) matrix
        """
        return self.feature_table.rows(np.arange(len(self)), variants)

    @cached_property
    def feature_table(self) -> FeatureTable:
        """Lookup of network inputs by observation index"""
        return FeatureTable(self.observations)

    def memberships(self) -> List[List[Tuple[int, float]]]:
        """(segment_id, arc_label) pairs of every observation"""
        result: List[List[Tuple[int, float]]] = [[] for _ in self.observations]
        for segment_id, segment in enumerate(self.segments):
            for index, label in zip(segment.indices, segment.labels):
                result[int(index)].append((segment_id, float(label)))
        return result

    def subset(self, count: int, stream: np.random.Generator) -> "ConstraintGraph":
        """
        Prefix of the segment-shuffled dataset holding ``count`` observations

        Raises:
            WeakPosError: SampleBudgetExceeded if count exceeds the dataset
        """
        if count > len(self):
            raise WeakPosError(
                ErrorKind.SAMPLE_BUDGET_EXCEEDED,
                f"Requested {count} samples from a dataset of {len(self)}",
            )
        remap: Dict[int, int] = {}
        segments: List[Segment] = []
        for segment_id in stream.permutation(len(self.segments)):
            segment = self.segments[segment_id]
            keep = 0
            for index in segment.indices:
                index = int(index)
                if index not in remap:
                    if len(remap) >= count:
                        break
                    remap[index] = len(remap)
                keep += 1
            if keep:
                segments.append(
                    Segment(
                        indices=np.array(
                            [remap[int(i)] for i in segment.indices[:keep]], dtype=int
                        ),
                        labels=segment.labels[:keep].copy(),
                    )
                )
            if len(remap) >= count:
                break
        old = sorted(remap, key=remap.get)
        return ConstraintGraph(
            modality=self.modality,
            observations=[self.observations[i] for i in old],
            segments=segments,
            gt_positions=None if self.gt_positions is None else self.gt_positions[old],
            meta=dict(self.meta, subset=count),
        )

    def check_invariants(self, tolerance: Optional[float] = None) -> None:
        """
        Verify the structural invariants of the graph

        Args:
            tolerance: if given, also check that noise-free labels match
                ground-truth distances within this tolerance
        Raises:
            ValueError: on the first violated invariant
        """
        seen = np.zeros(len(self), dtype=int)
        for segment_id, segment in enumerate(self.segments):
            if segment.labels[0] != 0.0:
                raise ValueError(f"Segment {segment_id} does not start at 0")
            if (np.diff(segment.labels) <= 0).any():
                raise ValueError(f"Segment {segment_id} labels are not increasing")
            seen[segment.indices] += 1
            if tolerance is not None and self.gt_positions is not None:
                points = self.gt_positions[segment.indices]
                true = np.linalg.norm(points - points[0], axis=1)
                if np.abs(true - segment.labels).max() > tolerance:
                    raise ValueError(f"Segment {segment_id} labels disagree with gt")
        if (seen == 0).any():
            raise ValueError("Observation outside every segment")
        if self.meta.get("strategy") != Strategy.ENDPOINT.value and (seen > 1).any():
            raise ValueError("Observation in more than one segment")
        if self.gt_positions is not None and len(self.gt_positions) != len(self):
            raise ValueError("Ground truth and observations differ in length")


def modality_of(env: Environment2D) -> Modality:
    """Observation modality an environment supports"""
    return Modality.LANDMARKS if len(env.landmarks) else Modality.LIDAR


def apply_odometry_noise(
    c: Union[float, np.ndarray], cfg: NoiseConfig, stream: np.random.Generator
) -> Union[float, np.ndarray]:
    """
    Perturb traveled distances with Gaussian noise of deviation w*c

    Args:
        c: noise-free distance(s), nonnegative
        cfg: noise configuration
        stream: noise random stream
    Returns:
        noisy distance(s), clamped below at 0
    """
    values = np.asarray(c, dtype=float)
    if (values < 0).any():
        raise ValueError("Distances must be nonnegative")
    if cfg.w == 0.0:
        return c if np.ndim(c) else float(c)
    noisy = np.maximum(values + stream.normal(0.0, cfg.w * values), 0.0)
    return noisy if np.ndim(c) else float(noisy)


def observe_landmarks(
    env: Environment2D, p: np.ndarray, d_max: Optional[float] = None
) -> np.ndarray:
    """
    Distances from a position (or rows of positions) to every landmark

    Args:
        env: landmark world
        p: position (2,) or positions (n, 2)
        d_max: range cutoff, no clipping if None
    Returns:
        np.ndarray: (M,) or (n, M) distances in landmark order
    Raises:
        WeakPosError: NoLandmarks if the environment has none
    """
    if not len(env.landmarks):
        raise WeakPosError(ErrorKind.NO_LANDMARKS, "Environment has no landmarks")
    points = np.asarray(p, dtype=float)
    distances = cdist(np.atleast_2d(points), env.landmarks)
    if d_max is not None:
        distances = np.minimum(distances, d_max)
    return distances[0] if points.ndim == 1 else distances


def lidar_ranges(
    env: Environment2D,
    points: np.ndarray,
    headings: np.ndarray,
    n_beams: int,
    max_range: float,
) -> np.ndarray:
    """(n, n_beams) beam ranges at many positions and headings"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    headings = np.broadcast_to(np.asarray(headings, dtype=float), len(points))
    angles = beam_angles(n_beams)
    result = np.empty((len(points), n_beams))
    for start in range(0, len(points), LIDAR_CHUNK):
        chunk = slice(start, start + LIDAR_CHUNK)
        world = (headings[chunk, None] + angles[None, :]).ravel()
        directions = np.column_stack([np.cos(world), np.sin(world)])
        origins = np.repeat(points[chunk], n_beams, axis=0)
        ranges = ray_cast_many(env.occupancy, origins, directions, max_range)
        result[chunk] = ranges.reshape(-1, n_beams)
    return result


def observe_lidar(
    env: Environment2D,
    p: np.ndarray,
    heading: float,
    n_beams: int,
    max_range: float,
) -> Observation:
    """
    Scan the room from one position

    Beam j points at world angle heading + 2*pi*j/n_beams; misses report
    max_range. Points are stored in the sensor frame.

    Raises:
        WeakPosError: errors of ray_cast
    """
    ranges = lidar_ranges(env, p, heading, n_beams, max_range)
    return Observation(lidar_ranges=ranges, headings=np.array([float(heading)]))


def _variant_headings(
    orientations: int, sample: int, stream: np.random.Generator
) -> np.ndarray:
    if not 1 <= sample <= orientations:
        raise ValueError("Need 1 <= sample <= orientations")
    picks = stream.choice(orientations, size=sample, replace=False)
    return 2.0 * np.pi * picks / orientations


def orientation_variants(
    env: Environment2D,
    p: np.ndarray,
    orientations: int,
    sample: int,
    stream: np.random.Generator,
    n_beams: int = 256,
    max_range: float = 10.0,
) -> List[Observation]:
    """
    Scans at distinct headings drawn from the uniform grid 2*pi*r/R

    Args:
        env: room
        p: free position
        orientations: grid size R
        sample: number of scans, at most R
        stream: random stream for the heading draw
    Returns:
        List[Observation]: one single-scan observation per drawn heading
    """
    headings = _variant_headings(orientations, sample, stream)
    return [observe_lidar(env, p, heading, n_beams, max_range) for heading in headings]


def observe_many(
    env: Environment2D,
    points: np.ndarray,
    cfg: CollectionConfig,
    stream: Optional[np.random.Generator] = None,
    variants: Optional[int] = None,
) -> List[Observation]:
    """
    Observations at many positions with the configured sensor

    Lidar scans take ``variants`` headings per position (orientation_sample by
    default) drawn from the heading grid; without a stream the single heading 0
    is used.
    """
    points = np.atleast_2d(points)
    if modality_of(env) == Modality.LANDMARKS:
        distances = observe_landmarks(env, points, cfg.d_max)
        return [Observation(landmark_distances=row) for row in distances]

    if stream is None:
        headings = np.zeros((len(points), 1))
    else:
        count = variants or cfg.orientation_sample
        headings = np.vstack(
            [
                _variant_headings(cfg.orientations, count, stream)
                for _ in range(len(points))
            ]
        )
    ranges = lidar_ranges(
        env,
        np.repeat(points, headings.shape[1], axis=0),
        headings.ravel(),
        cfg.n_beams,
        cfg.max_range,
    ).reshape(len(points), headings.shape[1], cfg.n_beams)
    return [
        Observation(lidar_ranges=scans, headings=heads)
        for scans, heads in zip(ranges, headings)
    ]


def _strictly_increasing(labels: np.ndarray) -> np.ndarray:
    labels = labels.copy()
    for i in np.flatnonzero(np.diff(labels) <= 0) + 1:
        if labels[i] <= labels[i - 1]:
            labels[i] = np.nextafter(labels[i - 1], np.inf)
    # a fixed label can break the next comparison, sweep again
    for i in range(1, len(labels)):
        if labels[i] <= labels[i - 1]:
            labels[i] = np.nextafter(labels[i - 1], np.inf)
    return labels


def _segment_labels(
    arc: np.ndarray, noise: NoiseConfig, stream: np.random.Generator
) -> np.ndarray:
    """Measured arc labels for true arc lengths starting at 0"""
    if noise.mode == NoiseMode.INCREMENT:
        increments = apply_odometry_noise(np.diff(arc), noise, stream)
        labels = np.concatenate([[0.0], np.cumsum(increments)])
    else:
        labels = np.concatenate([[0.0], apply_odometry_noise(arc[1:], noise, stream)])
    return _strictly_increasing(labels)


def arc_samples(length: float, spacing: float) -> np.ndarray:
    """Arc positions 0, spacing, ... of every full step that fits in length"""
    steps = math.floor(length / spacing + 1e-9)
    return np.arange(steps + 1) * spacing


def _free_length(env: Environment2D, origin: np.ndarray, direction: np.ndarray):
    """Usable travel along a heading and whether an obstacle limits it"""
    xmin, xmax, ymin, ymax = env.bounds
    exits = []
    for value, low, high, step in (
        (origin[0], xmin, xmax, direction[0]),
        (origin[1], ymin, ymax, direction[1]),
    ):
        if step > 0:
            exits.append((high - value) / step)
        elif step < 0:
            exits.append((low - value) / step)
    length = max(min(exits), 0.0)
    if env.occupancy is None or length == 0.0:
        return length, False
    hit = ray_cast(env.occupancy, origin, direction, length)
    if hit < length:
        return max(hit - 1e-9 * env.occupancy.cell_size, 0.0), True
    return length, False


def _graph(
    env: Environment2D,
    cfg: CollectionConfig,
    points: np.ndarray,
    segments: List[Segment],
    stream: np.random.Generator,
    meta: Dict[str, Any],
) -> ConstraintGraph:
    observations = observe_many(env, points, cfg, stream)
    logger.info(
        "Collected %d observations on %d segments (%s)",
        len(points),
        len(segments),
        meta["strategy"],
    )
    return ConstraintGraph(
        modality=modality_of(env),
        observations=observations,
        segments=segments,
        gt_positions=points,
        meta=meta,
    )


def collect_endpoint(
    env: Environment2D,
    count: int,
    cfg: CollectionConfig,
    seed: int,
    noise_seed: int,
) -> ConstraintGraph:
    """
    Visit random waypoints, measuring the straight-line distance in between

    Args:
        env: world to collect in
        count: number of waypoints N (>= 2)
        cfg: sensor and noise settings
        seed: trajectory seed
        noise_seed: odometry noise seed
    Returns:
        ConstraintGraph: N observations on N-1 two-sample segments
    Raises:
        WeakPosError: RetryExhausted if no reachable next waypoint is found
    """
    if count < 2:
        raise ValueError("Need at least two waypoints")
    trajectory, orientation = (
        np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(2)
    )
    noise_stream = np.random.default_rng(noise_seed)
    points = [env.sample_free(trajectory)]
    for _ in range(count - 1):
        for _ in range(RETRY_CAP):
            candidate = env.sample_free(trajectory)
            if segment_clear(env.occupancy, points[-1], candidate):
                points.append(candidate)
                break
        else:
            raise WeakPosError(
                ErrorKind.RETRY_EXHAUSTED,
                f"No reachable waypoint after {RETRY_CAP} draws",
            )
    points = np.vstack(points)
    segments = []
    for k in range(count - 1):
        arc = np.array([0.0, float(np.linalg.norm(points[k + 1] - points[k]))])
        segments.append(
            Segment(
                indices=np.array([k, k + 1]),
                labels=_segment_labels(arc, cfg.noise, noise_stream),
            )
        )
    meta = {"strategy": Strategy.ENDPOINT.value, "seed": seed, "noise_seed": noise_seed}
    return _graph(env, cfg, points, segments, orientation, meta)


def collect_dense(
    env: Environment2D,
    cfg: CollectionConfig,
    seed: int,
    noise_seed: int,
) -> ConstraintGraph:
    """
    Drive straight segments, sampling every ``cfg.spacing`` of arc length

    Each segment runs along a random heading until the next step would leave
    the bounds or touch an obstacle; the next segment starts where it ended.
    Headings that allow less than ``cfg.min_segment_length`` of travel are
    redrawn; the default 0 accepts any heading with at least one step.
    Collection stops after ``cfg.segments`` segments or ``cfg.budget`` samples,
    whichever comes first.

    Args:
        env: world to collect in
        cfg: strategy parameters, sensor and noise settings
        seed: trajectory seed
        noise_seed: odometry noise seed
    Returns:
        ConstraintGraph: the dense-sampling dataset
    Raises:
        WeakPosError: Stuck if no heading admits a step
    """
    spacing = cfg.spacing
    trajectory, orientation = (
        np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(2)
    )
    noise_stream = np.random.default_rng(noise_seed)
    xmin, xmax, ymin, ymax = env.bounds
    position = env.sample_free(trajectory)
    chunks: List[np.ndarray] = []
    segments: List[Segment] = []
    total = 0
    while (cfg.segments is None or len(segments) < cfg.segments) and (
        cfg.budget is None or total < cfg.budget
    ):
        for _ in range(RETRY_CAP):
            heading = trajectory.uniform(0.0, 2.0 * math.pi)
            direction = np.array([math.cos(heading), math.sin(heading)])
            usable, _ = _free_length(env, position, direction)
            arc = arc_samples(usable, spacing)
            if len(arc) >= 2 and arc[-1] >= cfg.min_segment_length:
                break
        else:
            raise WeakPosError(
                ErrorKind.STUCK, f"No heading admits a step from {position.tolist()}"
            )

        if cfg.budget is not None:
            arc = arc[: cfg.budget - total]
        samples = len(arc)
        points = position + arc[:, None] * direction
        points[:, 0] = np.clip(points[:, 0], xmin, xmax)
        points[:, 1] = np.clip(points[:, 1], ymin, ymax)
        segments.append(
            Segment(
                indices=np.arange(total, total + samples),
                labels=_segment_labels(arc, cfg.noise, noise_stream),
            )
        )
        chunks.append(points)
        total += samples
        position = points[-1]

    meta = {"strategy": Strategy.DENSE.value, "seed": seed, "noise_seed": noise_seed}
    return _graph(env, cfg, np.vstack(chunks), segments, orientation, meta)


def collect(
    env: Environment2D, cfg: CollectionConfig, seed: int, noise_seed: int
) -> ConstraintGraph:
    """Run the configured collection strategy"""
    if cfg.strategy == Strategy.ENDPOINT:
        return collect_endpoint(env, cfg.positions, cfg, seed, noise_seed)
    return collect_dense(env, cfg, seed, noise_seed)


def save_dataset(
    graph: ConstraintGraph,
    path: Union[str, Path],
    env_reference: Optional[str] = None,
    config: Optional[Dict[str, Any]] = None,
    seeds: Optional[Dict[str, int]] = None,
) -> None:
    """
    Write the graph as JSON Lines: one header, then one record per observation

    Args:
        graph: dataset
        path: output file
        env_reference: path of the environment document
        config: collection configuration echo
        seeds: seeds used for collection
    """
    header = DatasetHeader(
        modality=graph.modality,
        env_reference=env_reference,
        config=config or {},
        seed=seeds or {},
        n=len(graph),
        segment_count=len(graph.segments),
    )
    memberships = graph.memberships()
    with open(path, "w", encoding="utf-8") as stream:
        stream.write(header.model_dump_json() + "\n")
        for index, obs in enumerate(graph.observations):
            (segment_id, arc_label), *extra = memberships[index]
            record = ObservationRecord(
                index=index,
                segment_id=segment_id,
                arc_label=arc_label,
                extra_memberships=extra,
                landmark_distances=(
                    None
                    if obs.landmark_distances is None
                    else obs.landmark_distances.tolist()
                ),
                lidar_ranges=(
                    None if obs.lidar_ranges is None else obs.lidar_ranges.tolist()
                ),
                headings=None if obs.headings is None else obs.headings.tolist(),
                gt_position=(
                    None
                    if graph.gt_positions is None
                    else tuple(graph.gt_positions[index].tolist())
                ),
            )
            stream.write(record.model_dump_json(exclude_none=True) + "\n")


def load_dataset(path: Union[str, Path]) -> Tuple[DatasetHeader, ConstraintGraph]:
    """
    Read a JSON Lines dataset

    Returns:
        the header and the reconstructed graph
    Raises:
        WeakPosError: SchemaMismatch on unknown versions or inconsistent files
    """
    with open(path, "r", encoding="utf-8") as stream:
        header = DatasetHeader.model_validate_json(stream.readline())
        if header.schema_version != DATASET_SCHEMA_VERSION:
            raise WeakPosError(
                ErrorKind.SCHEMA_MISMATCH,
                f"Unsupported dataset schema {header.schema_version}",
            )
        records = [
            ObservationRecord.model_validate_json(line)
            for line in stream
            if line.strip()
        ]
    if len(records) != header.n:
        raise WeakPosError(
            ErrorKind.SCHEMA_MISMATCH,
            f"Header announces {header.n} observations, file has {len(records)}",
        )
    records.sort(key=lambda record: record.index)

    members: Dict[int, List[Tuple[float, int]]] = {}
    observations = []
    for record in records:
        for segment_id, label in [(record.segment_id, record.arc_label)] + list(
            record.extra_memberships
        ):
            members.setdefault(segment_id, []).append((label, record.index))
        if record.landmark_distances is not None:
            observations.append(
                Observation(landmark_distances=np.asarray(record.landmark_distances))
            )
        else:
            observations.append(
                Observation(
                    lidar_ranges=np.asarray(record.lidar_ranges, dtype=float),
                    headings=np.asarray(record.headings, dtype=float),
                )
            )
    segments = []
    for segment_id in sorted(members):
        ordered = sorted(members[segment_id])
        segments.append(
            Segment(
                indices=np.array([index for _, index in ordered], dtype=int),
                labels=np.array([label for label, _ in ordered]),
            )
        )
    gt_positions = None
    if all(record.gt_position is not None for record in records):
        gt_positions = np.array([record.gt_position for record in records], dtype=float)
    graph = ConstraintGraph(
        modality=header.modality,
        observations=observations,
        segments=segments,
        gt_positions=gt_positions,
        meta={"strategy": header.config.get("strategy"), **header.seed},
    )
    return header, graph
