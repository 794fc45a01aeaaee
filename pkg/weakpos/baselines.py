"""Comparison methods: explicit positioning, classical MDS and PCA+KNN retrieval"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.optimize import least_squares
from scipy.sparse.linalg import splu
from scipy.spatial.distance import cdist, pdist, squareform
from sklearn.decomposition import PCA

from weakpos.collect import ConstraintGraph
from weakpos.error import ErrorKind, WeakPosError
from weakpos.msg.checkpoint import CHECKPOINT_SCHEMA_VERSION, BaselineHeader
from weakpos.msg.dataset import Modality

logger = logging.getLogger(__name__)

DAMPING_START = 1e-3
DAMPING_CAP = 1e10
COLLINEAR_TOLERANCE = 1e-9
NOT_EUCLIDEAN_RATIO = 1e-6
RANK_TOLERANCE = 1e-12
KNN_BLOCK_ELEMENTS = 4_000_000
"""distance entries computed per knn_predict block"""


@dataclass
class ExplicitState:
    """Unknowns and residual of the joint landmark/position solve"""

    landmarks: np.ndarray
    """(M, 2) landmark estimates"""
    positions: np.ndarray
    """(N, 2) position estimates"""
    residual: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def residual_norm(self) -> float:
        """Euclidean norm of the residual vector, NaN if none was computed"""
        if self.residual is None:
            return float("nan")
        return float(np.linalg.norm(self.residual))

    def vector(self) -> np.ndarray:
        """Unknowns stacked as landmarks then positions"""
        return np.concatenate([self.landmarks.ravel(), self.positions.ravel()])


class ExplicitProblem:
    """Stacked range and distance residuals of a landmark dataset

    One range residual |m_k - p_i| - x_ik per unclipped observation, and one
    distance residual |p_i - p_j| - c_ij per intra-segment pair.
    """

    def __init__(self, graph: ConstraintGraph, d_max: Optional[float] = None):
        if graph.modality != Modality.LANDMARKS:
            raise WeakPosError(
                ErrorKind.INVALID_CONFIG, "Explicit positioning needs landmark data"
            )
        distances = graph.feature_matrix()
        self.n = len(graph)
        self.m = distances.shape[1]
        usable = (
            np.isfinite(distances) if d_max is None else distances < d_max
        )
        self.obs_i, self.obs_k = np.nonzero(usable)
        self.obs_x = distances[self.obs_i, self.obs_k]
        pairs_i, pairs_j, pairs_c = [], [], []
        for segment in graph.segments:
            i, j = np.triu_indices(len(segment), k=1)
            pairs_i.append(segment.indices[i])
            pairs_j.append(segment.indices[j])
            pairs_c.append(np.abs(segment.labels[j] - segment.labels[i]))
        self.pair_i = np.concatenate(pairs_i).astype(int)
        self.pair_j = np.concatenate(pairs_j).astype(int)
        self.pair_c = np.concatenate(pairs_c)

    @property
    def residual_count(self) -> int:
        """Unclipped observations plus distance constraints"""
        return len(self.obs_x) + len(self.pair_c)

    @property
    def unknown_count(self) -> int:
        """Scalar unknowns"""
        return 2 * (self.m + self.n)

    def split(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Landmarks and positions of a stacked vector"""
        return z[: 2 * self.m].reshape(-1, 2), z[2 * self.m :].reshape(-1, 2)

    def _deltas(self, z: np.ndarray):
        landmarks, positions = self.split(z)
        range_delta = landmarks[self.obs_k] - positions[self.obs_i]
        pair_delta = positions[self.pair_i] - positions[self.pair_j]
        return range_delta, pair_delta

    def residual(self, z: np.ndarray) -> np.ndarray:
        """Stacked residual vector"""
        range_delta, pair_delta = self._deltas(z)
        return np.concatenate(
            [
                np.linalg.norm(range_delta, axis=1) - self.obs_x,
                np.linalg.norm(pair_delta, axis=1) - self.pair_c,
            ]
        )

    def jacobian(self, z: np.ndarray) -> sparse.csr_matrix:
        """Sparse Jacobian of the residual vector"""
        range_delta, pair_delta = self._deltas(z)
        range_unit = _unit(range_delta)
        pair_unit = _unit(pair_delta)
        ranges = len(self.obs_x)
        rows_r = np.arange(ranges)
        rows_p = ranges + np.arange(len(self.pair_c))
        landmark_col = 2 * self.obs_k
        position_col = 2 * (self.m + self.obs_i)
        first_col = 2 * (self.m + self.pair_i)
        second_col = 2 * (self.m + self.pair_j)
        rows, cols, values = [], [], []
        for axis in range(2):
            rows += [rows_r, rows_r, rows_p, rows_p]
            cols += [
                landmark_col + axis,
                position_col + axis,
                first_col + axis,
                second_col + axis,
            ]
            values += [
                range_unit[:, axis],
                -range_unit[:, axis],
                pair_unit[:, axis],
                -pair_unit[:, axis],
            ]
        return sparse.csr_matrix(
            (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.residual_count, self.unknown_count),
        )

    def state(self, z: np.ndarray, iterations: int = 0) -> ExplicitState:
        """Wrap a stacked vector"""
        landmarks, positions = self.split(z)
        return ExplicitState(
            landmarks=landmarks.copy(),
            positions=positions.copy(),
            residual=self.residual(z),
            iterations=iterations,
        )


def _unit(delta: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(delta, axis=1)
    unit = np.zeros_like(delta)
    moving = norms > 0
    unit[moving] = delta[moving] / norms[moving, None]
    return unit


def explicit_solve(
    graph: ConstraintGraph,
    init: ExplicitState,
    max_iters: int = 100,
    tol: float = 1e-10,
    d_max: Optional[float] = None,
) -> ExplicitState:
    """
    Levenberg-Marquardt on the stacked range and distance residuals

    Damping starts at 1e-3, is divided by 10 on accepted steps and
    multiplied by 10 on rejected ones. The solve stops when the gradient norm
    drops below tol, after max_iters, or when no damping up to 1e10 reduces
    the residual.

    Args:
        graph: landmark dataset
        init: starting landmarks and positions
        max_iters: iteration cap
        tol: gradient-norm threshold
        d_max: observations at this value are treated as clipped and skipped
    Returns:
        ExplicitState: final estimates with residual
    Raises:
        WeakPosError: SingularNormalEquations if no damping up to the cap
            gives a factorizable system
    """
    problem = ExplicitProblem(graph, d_max)
    if init.landmarks.shape != (problem.m, 2) or init.positions.shape != (
        problem.n,
        2,
    ):
        raise WeakPosError(
            ErrorKind.DIMENSION_MISMATCH, "Initial state does not match the dataset"
        )
    z = init.vector().astype(float)
    r = problem.residual(z)
    cost = float(r @ r)
    damping = DAMPING_START
    identity = sparse.identity(problem.unknown_count, format="csc")
    iterations = 0
    while iterations < max_iters:
        jac = problem.jacobian(z)
        gradient = jac.T @ r
        if np.linalg.norm(gradient) < tol:
            break
        normal = (jac.T @ jac).tocsc()
        iterations += 1
        while True:
            try:
                step = splu(normal + damping * identity).solve(-gradient)
            except RuntimeError as err:
                damping *= 10.0
                if damping > DAMPING_CAP:
                    raise WeakPosError(
                        ErrorKind.SINGULAR_NORMAL_EQUATIONS,
                        f"Normal equations stay singular up to damping {DAMPING_CAP}",
                    ) from err
                continue
            candidate = z + step
            r_new = problem.residual(candidate)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                z, r, cost = candidate, r_new, cost_new
                damping = max(damping / 10.0, 1e-15)
                break
            damping *= 10.0
            if damping > DAMPING_CAP:
                logger.debug("LM stalled at cost %.6g", cost)
                return problem.state(z, iterations)
    logger.debug("LM finished after %d iterations, cost %.6g", iterations, cost)
    return problem.state(z, iterations)


def random_init(
    graph: ConstraintGraph,
    bounds: Tuple[float, float, float, float],
    stream: np.random.Generator,
) -> ExplicitState:
    """Landmarks and positions uniform over the bounds"""
    xmin, xmax, ymin, ymax = bounds
    landmark_count = graph.input_size
    points = stream.uniform(
        (xmin, ymin), (xmax, ymax), size=(landmark_count + len(graph), 2)
    )
    return ExplicitState(
        landmarks=points[:landmark_count], positions=points[landmark_count:]
    )


def explicit_restarts(
    graph: ConstraintGraph,
    bounds: Tuple[float, float, float, float],
    restarts: int,
    stream: np.random.Generator,
    max_iters: int = 100,
    tol: float = 1e-10,
    d_max: Optional[float] = None,
) -> ExplicitState:
    """
    Solve from several random starts and keep the smallest residual

    Returns:
        ExplicitState: best solution
    """
    best = None
    for attempt in range(restarts):
        state = explicit_solve(
            graph, random_init(graph, bounds, stream), max_iters, tol, d_max
        )
        logger.info(
            "Explicit restart %d/%d: residual %.6g after %d iterations",
            attempt + 1,
            restarts,
            state.residual_norm,
            state.iterations,
        )
        if best is None or state.residual_norm < best.residual_norm:
            best = state
    return best


def triangulate(
    landmarks: np.ndarray, distances: np.ndarray, d_max: Optional[float] = None
) -> np.ndarray:
    """
    Position from ranges to known landmarks

    The circle equations are linearized against the first usable landmark and
    solved by least squares, then refined on the range residuals.

    Args:
        landmarks: (M, 2) landmark positions
        distances: (M,) measured ranges
        d_max: ranges at this value are clipped and ignored
    Returns:
        np.ndarray: estimated position
    Raises:
        WeakPosError: DegenerateGeometry if fewer than 3 usable landmarks
            remain or they are collinear
    """
    landmarks = np.asarray(landmarks, dtype=float)
    distances = np.asarray(distances, dtype=float)
    usable = np.isfinite(distances) if d_max is None else distances < d_max
    anchors, ranges = landmarks[usable], distances[usable]
    if len(anchors) < 3:
        raise WeakPosError(
            ErrorKind.DEGENERATE_GEOMETRY,
            f"Only {len(anchors)} usable landmarks, need 3",
        )
    singular = np.linalg.svd(anchors - anchors.mean(axis=0), compute_uv=False)
    if singular[-1] < COLLINEAR_TOLERANCE * singular[0]:
        raise WeakPosError(
            ErrorKind.DEGENERATE_GEOMETRY, "Usable landmarks are collinear"
        )

    lhs = 2.0 * (anchors[1:] - anchors[0])
    rhs = (
        (anchors[1:] ** 2).sum(axis=1)
        - (anchors[0] ** 2).sum()
        - ranges[1:] ** 2
        + ranges[0] ** 2
    )
    guess = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    refined = least_squares(
        lambda p: np.linalg.norm(anchors - p, axis=1) - ranges, guess, method="lm"
    )
    return refined.x if refined.cost <= _half_cost(anchors, ranges, guess) else guess


def _half_cost(anchors: np.ndarray, ranges: np.ndarray, point: np.ndarray) -> float:
    residual = np.linalg.norm(anchors - point, axis=1) - ranges
    return 0.5 * float(residual @ residual)


@dataclass(frozen=True)
class EdmMatrix:
    """Symmetric matrix of pairwise Euclidean distances"""

    distances: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ValueError("Distance matrix must be square")
        if not np.allclose(d, d.T, rtol=0.0, atol=1e-12):
            raise ValueError("Distance matrix must be symmetric")
        if (d < 0).any() or np.any(np.diag(d) != 0):
            raise ValueError("Distances must be nonnegative with a zero diagonal")
        object.__setattr__(self, "distances", d)

    def __len__(self):
        return len(self.distances)

    @staticmethod
    def from_points(points: np.ndarray) -> "EdmMatrix":
        """Exact distance matrix of a point set"""
        return EdmMatrix(squareform(pdist(np.asarray(points, dtype=float))))

    def violates_triangle(
        self, stream: np.random.Generator, samples: int = 1000, tolerance: float = 1e-9
    ) -> bool:
        """True if any sampled triple breaks the triangle inequality"""
        triples = stream.integers(0, len(self), size=(samples, 3))
        a, b, c = triples.T
        d = self.distances
        return bool((d[a, c] > d[a, b] + d[b, c] + tolerance).any())


@dataclass
class MdsResult:
    """Embedding recovered by classical MDS"""

    coordinates: np.ndarray
    eigenvalues: np.ndarray
    """all eigenvalues of the centered Gram matrix, descending"""
    not_euclidean: bool = False


def classical_mds(edm: EdmMatrix, dim: int = 2) -> MdsResult:
    """
    Coordinates whose pairwise distances reproduce the matrix

    The centered Gram matrix B = -J D2 J / 2 is eigendecomposed; the top
    ``dim`` eigenvectors scaled by the square roots of their clamped
    eigenvalues give the coordinates.

    Args:
        edm: distance matrix
        dim: embedding dimension
    Returns:
        MdsResult: coordinates, spectrum and the not-Euclidean flag
    """
    n = len(edm)
    centering = np.eye(n) - np.full((n, n), 1.0 / n)
    gram = -0.5 * centering @ (edm.distances**2) @ centering
    eigenvalues, eigenvectors = np.linalg.eigh(gram)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues, eigenvectors = eigenvalues[order], eigenvectors[:, order]
    top = np.maximum(eigenvalues[:dim], 0.0)
    coordinates = eigenvectors[:, :dim] * np.sqrt(top)
    if coordinates.shape[1] < dim:
        coordinates = np.pad(coordinates, ((0, 0), (0, dim - coordinates.shape[1])))
    not_euclidean = bool(
        n > dim and eigenvalues[dim] > NOT_EUCLIDEAN_RATIO * max(eigenvalues[0], 0.0)
    )
    if not_euclidean:
        logger.warning(
            "Distance matrix is not %d-D Euclidean: eigenvalue %.3g vs %.3g",
            dim,
            eigenvalues[dim],
            eigenvalues[0],
        )
    return MdsResult(coordinates, eigenvalues, not_euclidean)


@dataclass
class PcaBasis:
    """Principal subspace of a feature set"""

    mean: np.ndarray
    components: np.ndarray
    """(k, d) orthonormal directions, rows"""
    explained_variance: np.ndarray
    """descending"""
    rank_deficient: bool = False

    @property
    def k(self) -> int:
        """Number of directions"""
        return len(self.components)


def pca_fit(data: np.ndarray, k: int) -> PcaBasis:
    """
    Top-k principal directions with a deterministic sign

    Each direction is flipped so its first nonzero entry is positive.

    Args:
        data: (N, d) samples, N >= 2
        k: number of directions, at most d
    Returns:
        PcaBasis: mean, directions and explained variances
    """
    data = np.asarray(data, dtype=float)
    n, d = data.shape
    if n < 2 or not 1 <= k <= d:
        raise ValueError(f"Cannot fit {k} components to {n} samples of width {d}")
    pca = PCA(n_components=min(k, n), svd_solver="full")
    pca.fit(data)
    components = pca.components_.copy()
    variance = pca.explained_variance_.copy()
    if len(components) < k:
        # fewer samples than directions: complete the basis orthogonally
        _, _, vt = np.linalg.svd(components, full_matrices=True)
        components = np.vstack([components, vt[len(components) : k]])
        variance = np.concatenate([variance, np.zeros(k - len(variance))])
    for row in components:
        lead = np.flatnonzero(np.abs(row) > RANK_TOLERANCE)
        if len(lead) and row[lead[0]] < 0:
            row *= -1.0
    rank_deficient = bool(variance[k - 1] < RANK_TOLERANCE)
    if rank_deficient:
        logger.warning("PCA basis is rank deficient at component %d", k)
    return PcaBasis(pca.mean_.copy(), components, variance, rank_deficient)


def pca_project(basis: PcaBasis, rows: np.ndarray) -> np.ndarray:
    """Coordinates of rows (or a single row) in the principal subspace"""
    return (np.asarray(rows, dtype=float) - basis.mean) @ basis.components.T


def knn_predict(
    train_features: np.ndarray,
    train_positions: np.ndarray,
    query: np.ndarray,
    k: int = 1,
) -> np.ndarray:
    """
    Position of the nearest training feature

    Ties go to the lowest training index; with k > 1 the positions of the k
    nearest are averaged.

    Args:
        train_features: (N, d) stored features
        train_positions: (N, 2) positions attached to them
        query: (d,) or (Q, d) query features
        k: neighbours to average
    Returns:
        np.ndarray: (2,) or (Q, 2) positions
    Raises:
        WeakPosError: EmptyTrainingSet if nothing is stored
    """
    if not len(train_features):
        raise WeakPosError(ErrorKind.EMPTY_TRAINING_SET, "No stored training features")
    query = np.asarray(query, dtype=float)
    queries = np.atleast_2d(query)
    result = np.empty((len(queries), 2))
    rows = max(1, KNN_BLOCK_ELEMENTS // len(train_features))
    for start in range(0, len(queries), rows):
        chunk = slice(start, start + rows)
        distances = cdist(queries[chunk], train_features, "sqeuclidean")
        if k == 1:
            result[chunk] = train_positions[np.argmin(distances, axis=1)]
        else:
            nearest = np.argsort(distances, axis=1, kind="stable")[:, :k]
            result[chunk] = train_positions[nearest].mean(axis=1)
    return result[0] if query.ndim == 1 else result


@dataclass
class PcaKnnModel:
    """Retrieval baseline: PCA features of every stored training scan"""

    basis: PcaBasis
    features: np.ndarray
    """(S, k) projected stored features"""
    positions: np.ndarray
    """(S, 2) positions of the stored features"""
    k_neighbours: int = 1

    def predict(self, raw_features: np.ndarray) -> np.ndarray:
        """Positions for raw (unprojected) features"""
        return knn_predict(
            self.features,
            self.positions,
            pca_project(self.basis, raw_features),
            self.k_neighbours,
        )

    def footprint(self) -> int:
        """Floats kept in memory: stored features, positions and the basis"""
        return int(
            self.features.size
            + self.positions.size
            + self.basis.mean.size
            + self.basis.components.size
        )

    def save(self, path: Union[str, Path], config: Optional[dict] = None) -> None:
        """Write a JSON header and a companion .npz archive"""
        path = Path(path)
        archive = path.with_suffix(".npz")
        np.savez(
            archive,
            mean=self.basis.mean,
            components=self.basis.components,
            explained_variance=self.basis.explained_variance,
            features=self.features,
            positions=self.positions,
        )
        header = BaselineHeader(
            method="pca_knn",
            arrays_file=archive.name,
            meta={
                "k_neighbours": self.k_neighbours,
                "rank_deficient": self.basis.rank_deficient,
                "footprint": self.footprint(),
            },
            config=config or {},
        )
        path.write_text(header.model_dump_json(), encoding="utf-8")

    @staticmethod
    def load(path: Union[str, Path]) -> "PcaKnnModel":
        """
        Read a saved model

        Raises:
            WeakPosError: SchemaMismatch if the file holds another baseline
        """
        path = Path(path)
        header = load_baseline_header(path, "pca_knn")
        with np.load(path.parent / header.arrays_file) as archive:
            basis = PcaBasis(
                archive["mean"],
                archive["components"],
                archive["explained_variance"],
                header.meta["rank_deficient"],
            )
            return PcaKnnModel(
                basis,
                archive["features"],
                archive["positions"],
                header.meta["k_neighbours"],
            )


def fit_pca_knn(
    features: np.ndarray, positions: np.ndarray, components: int, k_neighbours: int = 1
) -> PcaKnnModel:
    """Fit PCA on the features and store every projected sample"""
    if not len(features):
        raise WeakPosError(ErrorKind.EMPTY_TRAINING_SET, "No training features")
    basis = pca_fit(features, min(components, features.shape[1]))
    return PcaKnnModel(
        basis, pca_project(basis, features), np.asarray(positions), k_neighbours
    )


def load_baseline_header(path: Union[str, Path], method: str) -> BaselineHeader:
    """
    Read a baseline header and check its method and version

    Raises:
        WeakPosError: SchemaMismatch on either disagreement
    """
    header = BaselineHeader.model_validate_json(Path(path).read_text(encoding="utf-8"))
    if header.schema_version != CHECKPOINT_SCHEMA_VERSION or header.method != method:
        raise WeakPosError(
            ErrorKind.SCHEMA_MISMATCH,
            f"Expected a {method} baseline, found {header.method} "
            f"(schema {header.schema_version})",
        )
    return header
