"""Invariance and oracle checks across modules"""

import numpy as np
import pytest

from weakpos import (
    EdmMatrix,
    ExplicitState,
    PairSet,
    RigidTransform2D,
    ate_stats,
    backward,
    classical_mds,
    dense_segment_loss,
    explicit_solve,
    forward,
    init_params,
    knn_predict,
    pca_fit,
    pca_project,
    rigid_align,
    triangulate,
    weak_pair_term,
)
from weakpos.baselines import fit_pca_knn

TOY_SHAPE = [12, 16, 16, 16, 12, 12, 8, 6, 2]
LIDAR_SHAPE = [24, 16, 16, 16, 20, 16, 16, 12, 12, 8, 2]


def _isometry(stream: np.random.Generator):
    angle = stream.uniform(0.0, 2.0 * np.pi)
    cos, sin = np.cos(angle), np.sin(angle)
    rotation = np.array([[cos, -sin], [sin, cos]])
    if stream.random() < 0.5:
        rotation = rotation @ np.diag([1.0, -1.0])
    return rotation, stream.uniform(-5.0, 5.0, size=2)


def _two_circle_oracle(anchors: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    """Intersect the first two circles and keep the point the third agrees with"""
    a, b = anchors[0], anchors[1]
    base = np.linalg.norm(b - a)
    along = (ranges[0] ** 2 - ranges[1] ** 2 + base**2) / (2.0 * base)
    height = np.sqrt(max(ranges[0] ** 2 - along**2, 0.0))
    axis = (b - a) / base
    normal = np.array([-axis[1], axis[0]])
    foot = a + along * axis
    candidates = [foot + height * normal, foot - height * normal]
    misfit = [abs(np.linalg.norm(c - anchors[2]) - ranges[2]) for c in candidates]
    return candidates[int(np.argmin(misfit))]


def test__mds_recovers_random_points():
    """Should align the embedding of 100 points to RMS below 1e-6"""
    stream = np.random.default_rng(0)
    points = stream.uniform(-1.0, 1.0, size=(100, 2))
    result = classical_mds(EdmMatrix.from_points(points))
    assert ate_stats(result.coordinates, points, align=True).rms < 1e-6


def test__loss_and_alignment_are_gauge_invariant():
    """Should not change under rotations, reflections and translations"""
    stream = np.random.default_rng(1)
    pairs = PairSet.within(np.cumsum(stream.uniform(0.01, 0.1, size=12)) - 0.01)
    gt = stream.uniform(-1.0, 1.0, size=(12, 2))
    for _ in range(100):
        pred = stream.normal(size=(12, 2))
        rotation, shift = _isometry(stream)
        moved = pred @ rotation.T + shift
        base = dense_segment_loss(pred, pairs).value
        assert dense_segment_loss(moved, pairs).value == pytest.approx(base, rel=1e-12)
        aligned = ate_stats(pred, gt, align=True)
        realigned = ate_stats(moved, gt, align=True)
        assert realigned.rms == pytest.approx(aligned.rms, abs=1e-9)


def _loss_and_pattern(model, inputs, weights):
    pred, cache = forward(model, inputs)
    pattern = [z > 0 for z in cache.pre_activations[:-1]]
    return float((pred * weights).sum()), pattern


@pytest.mark.parametrize("shape", [TOY_SHAPE, LIDAR_SHAPE])
def test__backward_relative_error(shape):
    """Should agree with central differences to a relative error below 1e-5"""
    h = 1e-6
    for seed in range(20):
        stream = np.random.default_rng(seed)
        model = init_params(shape, seed)
        for bias in model.biases:
            bias += stream.uniform(0.05, 0.2, size=bias.shape)
        inputs = stream.normal(size=(4, shape[0]))
        weights = stream.normal(size=(4, 2))
        _, cache = forward(model, inputs)
        gradients = backward(model, cache, weights)
        params = model.parameters()
        grads = gradients.parameters()
        checked = 0
        for _ in range(30):
            layer = int(stream.integers(len(params)))
            index = tuple(int(stream.integers(n)) for n in params[layer].shape)
            original = params[layer][index]
            params[layer][index] = original + h
            upper, upper_pattern = _loss_and_pattern(model, inputs, weights)
            params[layer][index] = original - h
            lower, lower_pattern = _loss_and_pattern(model, inputs, weights)
            params[layer][index] = original
            if not all(map(np.array_equal, upper_pattern, lower_pattern)):
                continue
            checked += 1
            numeric = (upper - lower) / (2 * h)
            analytic = grads[layer][index]
            scale = max(abs(numeric), abs(analytic), 1e-3)
            assert abs(numeric - analytic) / scale < 1e-5
        assert checked >= 25


def test__segment_loss_is_mean_of_pair_terms():
    """Should equal the mean of independently computed pair terms"""
    stream = np.random.default_rng(2)
    pred = stream.normal(size=(9, 2))
    pairs = PairSet.concat(
        [
            PairSet.within(np.array([0.0, 0.1, 0.25, 0.3])),
            PairSet.within(np.arange(5) * 0.2, 4),
        ]
    )
    terms = [
        weak_pair_term(pred[i], pred[j], c)[0]
        for i, j, c in zip(pairs.i, pairs.j, pairs.c)
    ]
    loss = dense_segment_loss(pred, pairs)
    assert loss.value == pytest.approx(np.mean(terms), abs=1e-12)


def test__triangulate_matches_two_circle_oracle():
    """Should agree with the closed-form circle intersection"""
    stream = np.random.default_rng(3)
    for _ in range(50):
        anchors = stream.uniform(-1.0, 1.0, size=(3, 2))
        point = stream.uniform(-1.0, 1.0, size=2)
        ranges = np.linalg.norm(anchors - point, axis=1)
        expected = _two_circle_oracle(anchors, ranges)
        assert triangulate(anchors, ranges) == pytest.approx(expected, abs=1e-9)


def test__full_rank_pca_knn_equals_raw_knn():
    """Should retrieve the same neighbours with k = d components"""
    stream = np.random.default_rng(4)
    features = stream.normal(size=(200, 6))
    positions = stream.uniform(-1.0, 1.0, size=(200, 2))
    queries = stream.normal(size=(100, 6))
    model = fit_pca_knn(features, positions, components=6)
    expected = knn_predict(features, positions, queries)
    assert model.predict(queries) == pytest.approx(expected)


def _rms(points: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum((points - target) ** 2, axis=1))))


def test__rigid_align_is_optimal():
    """Should fit no worse than 1,000 random rigid transforms"""
    stream = np.random.default_rng(4)
    source = stream.uniform(-1.0, 1.0, size=(25, 2))
    rotation, translation = _isometry(stream)
    target = source @ rotation.T + translation + stream.normal(scale=0.05, size=(25, 2))
    best = _rms(rigid_align(source, target).apply(source), target)
    for trial in range(1000):
        if trial % 2:
            rotation, translation = _isometry(stream)
        else:
            angle = stream.normal(scale=0.05)
            cos, sin = np.cos(angle), np.sin(angle)
            fitted = rigid_align(source, target)
            rotation = fitted.rotation @ np.array([[cos, -sin], [sin, cos]])
            translation = fitted.translation + stream.normal(scale=0.05, size=2)
        other = RigidTransform2D(rotation, translation)
        assert best <= _rms(other.apply(source), target) + 1e-12


def test__explicit_residual_never_increases(landmark_env, dense_graph):
    """Should not raise the residual norm with more iterations"""
    stream = np.random.default_rng(6)
    graph = dense_graph.subset(min(30, len(dense_graph)), np.random.default_rng(0))
    init = ExplicitState(
        landmark_env.landmarks + stream.normal(scale=0.1, size=(8, 2)),
        graph.gt_positions + stream.normal(scale=0.1, size=(len(graph), 2)),
    )
    stripped = graph.without_ground_truth()
    norms = [
        explicit_solve(stripped, init, max_iters=iters).residual_norm
        for iters in range(12)
    ]
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))
    assert norms[-1] < norms[0]


def test__pca_projection_is_contraction():
    """Should never lengthen the distance between two rows"""
    stream = np.random.default_rng(8)
    data = stream.normal(size=(200, 10)) @ stream.normal(size=(10, 10))
    projected = pca_project(pca_fit(data, 3), data)
    pairs = stream.integers(0, len(data), size=(500, 2))
    for i, j in pairs:
        before = np.linalg.norm(data[i] - data[j])
        after = np.linalg.norm(projected[i] - projected[j])
        assert after <= before + 1e-9


def test__mds_is_idempotent():
    """Should reproduce its own embedding from that embedding's distances"""
    stream = np.random.default_rng(9)
    points = stream.uniform(-1.0, 1.0, size=(40, 2))
    first = classical_mds(EdmMatrix.from_points(points)).coordinates
    second = classical_mds(EdmMatrix.from_points(first)).coordinates
    assert ate_stats(second, first, align=True).rms < 1e-9
