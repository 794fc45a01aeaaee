"""Tests for data collection and dataset files"""

import numpy as np
import pytest

from weakpos import (
    Environment2D,
    ErrorKind,
    OccupancyGrid,
    WeakPosError,
    apply_odometry_noise,
    collect_dense,
    collect_endpoint,
    load_dataset,
    observe_landmarks,
    observe_lidar,
    orientation_variants,
    save_dataset,
    segment_clear,
)
from weakpos.collect import arc_samples
from weakpos.msg.config import CollectionConfig, NoiseConfig, NoiseMode
from weakpos.msg.dataset import Modality


def test__dense_segments_partition_observations(dense_graph):
    """Should place every observation on exactly one segment"""
    assert len(dense_graph.segments) == 6
    indices = np.concatenate([segment.indices for segment in dense_graph.segments])
    assert np.array_equal(np.sort(indices), np.arange(len(dense_graph)))
    dense_graph.check_invariants(tolerance=1e-9)


def test__dense_labels_match_travel(dense_graph):
    """Should label noise-free samples with their distance from the segment start"""
    for segment in dense_graph.segments:
        points = dense_graph.gt_positions[segment.indices]
        travelled = np.linalg.norm(points - points[0], axis=1)
        assert segment.labels[0] == 0.0
        assert segment.labels == pytest.approx(travelled, abs=1e-9)
        assert len(segment) >= 4


def test__dense_segments_are_chained(dense_graph):
    """Should start each segment where the previous one ended"""
    gt = dense_graph.gt_positions
    for previous, current in zip(dense_graph.segments, dense_graph.segments[1:]):
        assert gt[current.indices[0]] == pytest.approx(gt[previous.indices[-1]])


def test__dense_budget(landmark_env):
    """Should stop collecting once the sample budget is reached"""
    cfg = CollectionConfig(spacing=0.05, segments=None, budget=25)
    graph = collect_dense(landmark_env, cfg, seed=1, noise_seed=2)
    assert len(graph) == 25
    graph.check_invariants()


def test__dense_is_deterministic(landmark_env, small_config):
    """Should reproduce the dataset from the same seeds"""
    cfg = small_config.collection
    first = collect_dense(landmark_env, cfg, seed=5, noise_seed=6)
    second = collect_dense(landmark_env, cfg, seed=5, noise_seed=6)
    assert np.array_equal(first.gt_positions, second.gt_positions)
    assert np.array_equal(first.feature_matrix(), second.feature_matrix())


@pytest.mark.parametrize("mode", [NoiseMode.INCREMENT, NoiseMode.ABSOLUTE])
def test__noisy_labels_stay_increasing(landmark_env, mode):
    """Should keep labels strictly increasing under heavy noise"""
    cfg = CollectionConfig(
        spacing=0.05, segments=5, noise=NoiseConfig(w=0.8, mode=mode)
    )
    graph = collect_dense(landmark_env, cfg, seed=1, noise_seed=2)
    graph.check_invariants()
    noise_free = collect_dense(
        landmark_env, cfg.model_copy(update={"noise": NoiseConfig()}), 1, 2
    )
    assert np.array_equal(graph.gt_positions, noise_free.gt_positions)
    assert not np.allclose(graph.segments[0].labels, noise_free.segments[0].labels)


def test__odometry_noise(stream):
    """Should leave distances untouched without noise and never go negative"""
    distances = np.full(1000, 0.02)
    assert np.array_equal(
        apply_odometry_noise(distances, NoiseConfig(w=0.0), stream), distances
    )
    noisy = apply_odometry_noise(distances, NoiseConfig(w=2.0), stream)
    assert (noisy >= 0).all()
    assert noisy.std() > 0
    assert isinstance(apply_odometry_noise(1.0, NoiseConfig(w=0.1), stream), float)


def test__odometry_noise_spread(stream):
    """Should add zero-mean noise with deviation w times the distance"""
    noisy = apply_odometry_noise(np.full(100_000, 2.0), NoiseConfig(w=0.1), stream)
    error = noisy - 2.0
    assert 0.198 <= error.std() <= 0.202
    assert abs(error.mean()) < 0.004
    assert apply_odometry_noise(0.0, NoiseConfig(w=0.1), stream) == 0.0


def test__arc_samples_count():
    """Should sample a free length of 1.0 at spacing 0.02 exactly 51 times"""
    arc = arc_samples(1.0, 0.02)
    assert len(arc) == 51
    assert arc == pytest.approx(np.linspace(0.0, 1.0, 51), abs=1e-12)
    assert len(arc_samples(0.019, 0.02)) == 1


def test__dense_segment_of_unit_length(mocker, landmark_env):
    """Should collect 51 samples labelled 0 to 1 on a segment of free length 1"""
    mocker.patch("weakpos.collect._free_length", return_value=(1.0, False))
    cfg = CollectionConfig(spacing=0.02, segments=1)
    graph = collect_dense(landmark_env, cfg, seed=0, noise_seed=0)
    assert len(graph) == 51
    assert graph.segments[0].labels == pytest.approx(np.arange(51) * 0.02, abs=1e-12)


def test__min_segment_length_is_opt_in(landmark_env):
    """Should redraw short headings only when a minimum length is configured"""
    assert CollectionConfig().min_segment_length == 0.0
    cfg = CollectionConfig(spacing=0.05, segments=20, min_segment_length=1.2)
    graph = collect_dense(landmark_env, cfg, seed=3, noise_seed=0)
    assert all(segment.labels[-1] >= 1.2 - 1e-9 for segment in graph.segments)


def test__observe_landmarks(landmark_env):
    """Should return distances in landmark order, clipped at d_max"""
    point = np.array([0.1, -0.2])
    distances = observe_landmarks(landmark_env, point)
    expected = np.linalg.norm(landmark_env.landmarks - point, axis=1)
    assert distances == pytest.approx(expected)
    clipped = observe_landmarks(landmark_env, point, d_max=0.5)
    assert clipped == pytest.approx(np.minimum(expected, 0.5))


def test__observe_landmarks_without_landmarks(room_env):
    """Should fail in worlds without landmarks"""
    with pytest.raises(WeakPosError) as err:
        observe_landmarks(room_env, np.array([0.2, 0.2]))
    assert err.value.kind == ErrorKind.NO_LANDMARKS


def test__lidar_scan_rotates_with_heading(room_env):
    """Should shift beam ranges when the heading turns by one beam step"""
    point = np.array([0.25, 0.25])
    straight = observe_lidar(room_env, point, 0.0, 8, 2.0)
    turned = observe_lidar(room_env, point, 2.0 * np.pi / 8, 8, 2.0)
    assert turned.lidar_ranges[0] == pytest.approx(
        np.roll(straight.lidar_ranges[0], -1), abs=1e-6
    )
    assert straight.lidar_scan.shape == (8, 2)
    assert (straight.lidar_ranges <= 2.0).all()
    assert straight.lidar_ranges[0, 0] == pytest.approx(0.65)


def test__lidar_in_circular_room():
    """Should see the wall of a circular free region at its radius"""
    size, radius = 0.01, 0.8
    centers = -1.0 + size * (np.arange(200) + 0.5)
    xs, ys = np.meshgrid(centers, centers)
    grid = OccupancyGrid(
        rows=200,
        cols=200,
        cell_size=size,
        origin=(-1.0, -1.0),
        cells=np.hypot(xs, ys) > radius,
    )
    env = Environment2D(
        bounds=(-1.0, 1.0, -1.0, 1.0), landmarks=np.empty((0, 2)), occupancy=grid
    )
    for heading in (0.0, 0.3, 2.0):
        scan = observe_lidar(env, np.zeros(2), heading, 64, 2.0)
        radii = np.linalg.norm(scan.lidar_scan, axis=1)
        assert radii == pytest.approx(np.full(64, radius), abs=size)


def test__lidar_heading_is_periodic(room_env):
    """Should return the same scan for headings a full turn apart"""
    point = np.array([0.23, 0.31])
    scan = observe_lidar(room_env, point, 0.37, 16, 2.0)
    turned = observe_lidar(room_env, point, 0.37 + 2.0 * np.pi, 16, 2.0)
    assert turned.lidar_ranges == pytest.approx(scan.lidar_ranges, abs=1e-9)


def test__orientation_variants_are_distinct(room_env, stream):
    """Should scan at distinct headings from the heading grid"""
    variants = orientation_variants(
        room_env, np.array([0.25, 0.25]), 12, 5, stream, n_beams=8, max_range=2.0
    )
    headings = np.array([obs.headings[0] for obs in variants])
    assert len(set(np.round(headings, 9))) == 5
    steps = headings / (2.0 * np.pi / 12)
    assert steps == pytest.approx(np.round(steps))


def test__lidar_dataset(room_env, room_config):
    """Should store several orientation variants per lidar position"""
    graph = collect_dense(room_env, room_config.collection, seed=1, noise_seed=2)
    assert graph.modality == Modality.LIDAR
    assert graph.feature_table.variant_count == 2
    assert graph.input_size == 16
    features = graph.feature_matrix()
    first = graph.observations[0]
    angles = 2.0 * np.pi * np.arange(8) / 8
    assert features[0, 0::2] == pytest.approx(first.lidar_ranges[0] * np.cos(angles))
    assert features[0, 1::2] == pytest.approx(first.lidar_ranges[0] * np.sin(angles))
    assert room_env.is_free(graph.gt_positions).all()


def test__endpoint_collection(landmark_env, small_config):
    """Should link consecutive waypoints with two-sample segments"""
    graph = collect_endpoint(landmark_env, 10, small_config.collection, 1, 2)
    assert len(graph) == 10
    assert len(graph.segments) == 9
    graph.check_invariants(tolerance=1e-9)
    memberships = graph.memberships()
    assert len(memberships[0]) == 1
    assert len(memberships[5]) == 2


def test__endpoint_collection_in_room(room_env, room_config):
    """Should only connect waypoints with a clear straight path"""
    graph = collect_endpoint(room_env, 12, room_config.collection, 3, 4)
    gt = graph.gt_positions
    for segment in graph.segments:
        first, second = segment.indices
        assert segment_clear(room_env.occupancy, gt[first], gt[second])


def test__dataset_file_restores_graph(landmark_env, small_config, tmp_path):
    """Should write and read back observations, memberships and positions"""
    graph = collect_endpoint(landmark_env, 6, small_config.collection, 1, 2)
    path = tmp_path / "dataset.jsonl"
    save_dataset(graph, path, config={"strategy": "endpoint"}, seeds={"trajectory": 1})
    header, loaded = load_dataset(path)
    assert header.n == 6
    assert header.segment_count == 5
    assert np.allclose(loaded.feature_matrix(), graph.feature_matrix())
    assert np.allclose(loaded.gt_positions, graph.gt_positions)
    for original, restored in zip(graph.segments, loaded.segments):
        assert np.array_equal(original.indices, restored.indices)
        assert restored.labels == pytest.approx(original.labels)
    loaded.check_invariants()


def test__dataset_file_wrong_count(dense_graph, tmp_path):
    """Should refuse a file whose header disagrees with its records"""
    path = tmp_path / "dataset.jsonl"
    save_dataset(dense_graph, path)
    lines = path.read_text(encoding="utf-8").splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(WeakPosError) as err:
        load_dataset(path)
    assert err.value.kind == ErrorKind.SCHEMA_MISMATCH


def test__subset_keeps_segment_prefixes(dense_graph):
    """Should take whole segments from one shuffle until the count is reached"""
    subset = dense_graph.subset(20, np.random.default_rng(0))
    assert len(subset) == 20
    subset.check_invariants(tolerance=1e-9)
    assert subset.meta["subset"] == 20


def test__subset_too_large(dense_graph, stream):
    """Should refuse to draw more samples than collected"""
    with pytest.raises(WeakPosError) as err:
        dense_graph.subset(len(dense_graph) + 1, stream)
    assert err.value.kind == ErrorKind.SAMPLE_BUDGET_EXCEEDED


def test__stripped_graph_has_no_positions(dense_graph):
    """Should not reveal positions once ground truth is stripped"""
    stripped = dense_graph.without_ground_truth()
    assert not stripped.has_ground_truth
    assert len(stripped) == len(dense_graph)
    with pytest.raises(WeakPosError) as err:
        stripped.ground_truth()
    assert err.value.kind == ErrorKind.INVALID_CONFIG
