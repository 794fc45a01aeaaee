"""Tests for the comparison methods"""

import numpy as np
import pytest

from weakpos import (
    EdmMatrix,
    ErrorKind,
    ExplicitState,
    WeakPosError,
    classical_mds,
    explicit_solve,
    knn_predict,
    pca_fit,
    pca_project,
    rigid_align,
    triangulate,
)
from weakpos import baselines
from weakpos.baselines import PcaKnnModel, explicit_restarts, fit_pca_knn


@pytest.fixture(name="solve_graph")
def _solve_graph(dense_graph):
    return dense_graph.subset(min(30, len(dense_graph)), np.random.default_rng(0))


def test__triangulate_exact_ranges(landmark_env):
    """Should recover a position from exact ranges"""
    point = np.array([0.3, -0.4])
    distances = np.linalg.norm(landmark_env.landmarks - point, axis=1)
    estimate = triangulate(landmark_env.landmarks, distances)
    assert estimate == pytest.approx(point, abs=1e-8)


def test__triangulate_ignores_clipped_ranges(landmark_env):
    """Should skip ranges at the clip value"""
    point = np.array([0.1, 0.2])
    distances = np.linalg.norm(landmark_env.landmarks - point, axis=1)
    d_max = float(np.sort(distances)[4]) + 1e-6
    clipped = np.minimum(distances, d_max)
    assert triangulate(landmark_env.landmarks, clipped, d_max) == pytest.approx(
        point, abs=1e-8
    )


def test__triangulate_degenerate():
    """Should refuse collinear or too few landmarks"""
    line = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    with pytest.raises(WeakPosError) as err:
        triangulate(line, np.array([1.0, 1.0, 1.5, 2.0]))
    assert err.value.kind == ErrorKind.DEGENERATE_GEOMETRY

    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(WeakPosError) as err:
        triangulate(corners, np.array([0.5, 2.0, 2.0]), d_max=2.0)
    assert err.value.kind == ErrorKind.DEGENERATE_GEOMETRY


def test__explicit_solve_keeps_exact_solution(landmark_env, solve_graph):
    """Should stay at the true configuration of noise-free data"""
    init = ExplicitState(landmark_env.landmarks.copy(), solve_graph.gt_positions.copy())
    state = explicit_solve(solve_graph.without_ground_truth(), init)
    assert state.residual_norm == pytest.approx(0.0, abs=1e-9)
    assert state.positions == pytest.approx(solve_graph.gt_positions, abs=1e-9)


def test__explicit_solve_converges_from_nearby_start(landmark_env, solve_graph, stream):
    """Should recover the geometry up to a rigid motion from a perturbed start"""
    truth = solve_graph.gt_positions
    init = ExplicitState(
        landmark_env.landmarks + stream.normal(scale=0.01, size=(8, 2)),
        truth + stream.normal(scale=0.01, size=truth.shape),
    )
    state = explicit_solve(solve_graph.without_ground_truth(), init, max_iters=100)
    assert state.residual_norm < 1e-6
    assert state.iterations > 0
    transform = rigid_align(state.positions, truth)
    assert transform.apply(state.positions) == pytest.approx(truth, abs=1e-4)


def test__residual_norm_without_residual():
    """Should report NaN for a state that was never solved"""
    state = ExplicitState(np.zeros((2, 2)), np.zeros((3, 2)))
    assert np.isnan(state.residual_norm)


def test__explicit_solve_shape_mismatch(solve_graph):
    """Should refuse an initial state of the wrong size"""
    init = ExplicitState(np.zeros((3, 2)), np.zeros((len(solve_graph), 2)))
    with pytest.raises(WeakPosError) as err:
        explicit_solve(solve_graph, init)
    assert err.value.kind == ErrorKind.DIMENSION_MISMATCH


def test__explicit_restarts_keep_best(mocker, solve_graph, stream):
    """Should return the restart with the smallest residual"""
    states = [
        ExplicitState(np.zeros((8, 2)), np.zeros((3, 2)), np.array([3.0]), 4),
        ExplicitState(np.ones((8, 2)), np.ones((3, 2)), np.array([0.5]), 7),
        ExplicitState(np.zeros((8, 2)), np.zeros((3, 2)), np.array([2.0]), 2),
    ]
    solve = mocker.patch("weakpos.baselines.explicit_solve", side_effect=states)
    best = explicit_restarts(solve_graph, (-1.0, 1.0, -1.0, 1.0), 3, stream)
    assert solve.call_count == 3
    assert best.iterations == 7
    assert best.residual_norm == pytest.approx(0.5)


def test__edm_validation():
    """Should refuse asymmetric or negative distance matrices"""
    with pytest.raises(ValueError):
        EdmMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        EdmMatrix(np.array([[0.0, -1.0], [-1.0, 0.0]]))
    with pytest.raises(ValueError):
        EdmMatrix(np.array([[1.0, 1.0], [1.0, 0.0]]))


def test__classical_mds_recovers_points(stream):
    """Should reproduce exact distances up to a rigid motion"""
    points = stream.uniform(-1.0, 1.0, size=(40, 2))
    result = classical_mds(EdmMatrix.from_points(points))
    assert not result.not_euclidean
    assert (np.diff(result.eigenvalues) <= 1e-12).all()
    transform = rigid_align(result.coordinates, points)
    assert transform.apply(result.coordinates) == pytest.approx(points, abs=1e-8)


def test__classical_mds_flags_non_euclidean(stream):
    """Should flag matrices that need more than two dimensions"""
    points = stream.uniform(-1.0, 1.0, size=(30, 3))
    edm = EdmMatrix.from_points(points)
    result = classical_mds(edm)
    assert result.not_euclidean
    assert result.coordinates.shape == (30, 2)
    assert not edm.violates_triangle(stream)


def test__violates_triangle(stream):
    """Should detect a broken triangle inequality"""
    d = np.array([[0.0, 1.0, 5.0], [1.0, 0.0, 1.0], [5.0, 1.0, 0.0]])
    assert EdmMatrix(d).violates_triangle(stream, samples=200)


def test__pca_fit_orthonormal_with_sign_convention(stream):
    """Should return orthonormal directions with a positive first nonzero entry"""
    data = stream.normal(size=(50, 6)) * np.array([5.0, 3.0, 2.0, 1.0, 0.5, 0.1])
    basis = pca_fit(data, 3)
    assert basis.components @ basis.components.T == pytest.approx(np.eye(3), abs=1e-10)
    for row in basis.components:
        assert row[np.flatnonzero(np.abs(row) > 1e-12)[0]] > 0
    assert (np.diff(basis.explained_variance) <= 0).all()
    assert pca_project(basis, data).shape == (50, 3)
    centered = pca_project(basis, data.mean(axis=0))
    assert centered == pytest.approx(np.zeros(3), abs=1e-10)


def test__pca_fit_more_directions_than_samples(stream):
    """Should complete the basis and flag rank deficiency"""
    data = stream.normal(size=(3, 5))
    basis = pca_fit(data, 4)
    assert basis.k == 4
    assert basis.components @ basis.components.T == pytest.approx(np.eye(4), abs=1e-10)
    assert basis.rank_deficient


def test__knn_predict():
    """Should return the nearest stored position with ties to the lowest index"""
    features = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 3.0]])
    positions = np.array([[10.0, 10.0], [20.0, 20.0], [30.0, 30.0], [40.0, 40.0]])
    assert knn_predict(features, positions, np.array([0.9, 0.1])) == pytest.approx(
        [20.0, 20.0]
    )
    batch = knn_predict(features, positions, np.array([[0.0, 0.1], [0.0, 2.9]]))
    assert batch == pytest.approx(np.array([[10.0, 10.0], [40.0, 40.0]]))
    averaged = knn_predict(features, positions, np.array([0.0, 0.0]), k=2)
    assert averaged == pytest.approx([15.0, 15.0])


def test__knn_predict_bounds_distance_blocks(mocker, stream):
    """Should cap the distance block size by the number of stored rows"""
    features = stream.normal(size=(50, 3))
    positions = stream.normal(size=(50, 2))
    queries = stream.normal(size=(23, 3))
    expected = knn_predict(features, positions, queries)
    mocker.patch("weakpos.baselines.KNN_BLOCK_ELEMENTS", 200)
    spy = mocker.spy(baselines, "cdist")
    assert knn_predict(features, positions, queries) == pytest.approx(expected)
    assert spy.call_count == 6
    assert all(len(call.args[0]) * 50 <= 200 for call in spy.call_args_list)


def test__knn_predict_empty():
    """Should refuse queries without stored features"""
    with pytest.raises(WeakPosError) as err:
        knn_predict(np.empty((0, 2)), np.empty((0, 2)), np.zeros(2))
    assert err.value.kind == ErrorKind.EMPTY_TRAINING_SET


def test__pca_knn_memorizes_training_set(dense_graph):
    """Should return the stored position for a stored feature"""
    features = dense_graph.feature_matrix()
    model = fit_pca_knn(features, dense_graph.gt_positions, 8)
    assert model.predict(features[:5]) == pytest.approx(dense_graph.gt_positions[:5])
    assert model.footprint() == len(features) * 8 + len(features) * 2 + 8 + 8 * 8


def test__pca_knn_save_load(dense_graph, tmp_path):
    """Should restore the retrieval model from its header and archive"""
    features = dense_graph.feature_matrix()
    model = fit_pca_knn(features, dense_graph.gt_positions, 4, k_neighbours=2)
    path = tmp_path / "pca_knn.json"
    model.save(path, {"name": "small"})
    assert path.with_suffix(".npz").exists()
    loaded = PcaKnnModel.load(path)
    assert loaded.k_neighbours == 2
    assert loaded.predict(features[:7]) == pytest.approx(model.predict(features[:7]))


def test__pca_knn_load_wrong_method(tmp_path):
    """Should refuse a header written for another baseline"""
    path = tmp_path / "pca_knn.json"
    path.write_text('{"method": "explicit"}', encoding="utf-8")
    with pytest.raises(WeakPosError) as err:
        PcaKnnModel.load(path)
    assert err.value.kind == ErrorKind.SCHEMA_MISMATCH
