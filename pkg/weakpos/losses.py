"""Supervised and distance-constraint losses, and batch construction"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from weakpos.collect import ConstraintGraph
from weakpos.error import ErrorKind, WeakPosError
from weakpos.msg.config import LossVariant
from weakpos.net import Batch

logger = logging.getLogger(__name__)

ZERO_DISTANCE = 1e-12
"""below this both distances count as zero and the weak term vanishes"""

ConstraintFn = Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class PairConstraint:
    """Measured distance between two observations of one segment"""

    index_i: int
    index_j: int
    c_ij: float

    def __post_init__(self):
        if self.index_i == self.index_j:
            raise ValueError("A constraint needs two distinct observations")
        if self.c_ij < 0:
            raise ValueError("Measured distance must be nonnegative")


@dataclass(frozen=True)
class PairSet:
    """Constraints of one batch as parallel arrays of batch-row indices"""

    i: np.ndarray
    j: np.ndarray
    c: np.ndarray

    def __len__(self):
        return len(self.c)

    @staticmethod
    def from_constraints(constraints: Sequence[PairConstraint]) -> "PairSet":
        """Pack a list of constraints"""
        return PairSet(
            i=np.array([pair.index_i for pair in constraints], dtype=int),
            j=np.array([pair.index_j for pair in constraints], dtype=int),
            c=np.array([pair.c_ij for pair in constraints], dtype=float),
        )

    @staticmethod
    def within(labels: np.ndarray, offset: int = 0) -> "PairSet":
        """All pairs i < j of one segment window whose rows start at offset"""
        i, j = np.triu_indices(len(labels), k=1)
        return PairSet(i=i + offset, j=j + offset, c=np.abs(labels[j] - labels[i]))

    @staticmethod
    def concat(parts: Sequence["PairSet"]) -> "PairSet":
        """Join pair sets of several windows"""
        if not parts:
            return PairSet(np.empty(0, int), np.empty(0, int), np.empty(0))
        return PairSet(
            i=np.concatenate([part.i for part in parts]),
            j=np.concatenate([part.j for part in parts]),
            c=np.concatenate([part.c for part in parts]),
        )

    def constraints(self) -> List[PairConstraint]:
        """Unpack into constraint records"""
        return [
            PairConstraint(int(i), int(j), float(c))
            for i, j, c in zip(self.i, self.j, self.c)
        ]


@dataclass
class LossValue:
    """Loss of a batch and its gradient with respect to the predictions"""

    value: float
    gradient: np.ndarray
    """shaped like the predictions"""
    pair_count: int = 0


def _as_pairs(pairs) -> PairSet:
    return pairs if isinstance(pairs, PairSet) else PairSet.from_constraints(pairs)


def supervised_loss(pred: np.ndarray, gt: np.ndarray) -> LossValue:
    """
    Mean Euclidean distance between predictions and true positions

    Raises:
        WeakPosError: ShapeMismatch if the shapes differ
    """
    if np.shape(pred) != np.shape(gt):
        raise WeakPosError(
            ErrorKind.SHAPE_MISMATCH,
            f"Predictions {np.shape(pred)} and positions {np.shape(gt)} differ",
        )
    diff = np.asarray(pred, dtype=float) - gt
    norms = np.linalg.norm(diff, axis=1)
    gradient = np.zeros_like(diff)
    moving = norms > 0
    gradient[moving] = diff[moving] / norms[moving, None] / len(diff)
    return LossValue(value=float(norms.mean()), gradient=gradient)


def _pair_terms(
    pred: np.ndarray, pairs: PairSet, normalized: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pair loss terms and d term / d pred_i (d term / d pred_j is its negative)"""
    delta = pred[pairs.i] - pred[pairs.j]
    d = np.linalg.norm(delta, axis=1)
    c = pairs.c
    sign = np.sign(d - c)
    if normalized:
        total = d + c
        vanishing = (d < ZERO_DISTANCE) & (c < ZERO_DISTANCE)
        safe = np.where(vanishing, 1.0, total)
        terms = np.where(vanishing, 0.0, np.abs(d - c) / safe)
        slope = np.where(vanishing, 0.0, sign * 2.0 * c / safe**2)
    else:
        terms = np.abs(d - c)
        slope = sign
    unit = np.zeros_like(delta)
    moving = d > 0
    unit[moving] = delta[moving] / d[moving, None]
    return terms, slope[:, None] * unit


def weak_pair_term(
    pred_i: np.ndarray, pred_j: np.ndarray, c_ij: float
) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Normalized distance disagreement |d - c| / (d + c) of one pair

    Args:
        pred_i: predicted position of the first observation
        pred_j: predicted position of the second observation
        c_ij: measured distance, nonnegative
    Returns:
        the term in [0, 1] and its gradients with respect to pred_i and pred_j
    """
    if c_ij < 0:
        raise ValueError("Measured distance must be nonnegative")
    pred = np.vstack([pred_i, pred_j]).astype(float)
    pairs = PairSet(np.array([0]), np.array([1]), np.array([float(c_ij)]))
    terms, grad = _pair_terms(pred, pairs, normalized=True)
    return float(terms[0]), grad[0], -grad[0]


def _accumulate(pred: np.ndarray, pairs: PairSet, pair_grad: np.ndarray) -> np.ndarray:
    gradient = np.zeros_like(pred, dtype=float)
    np.add.at(gradient, pairs.i, pair_grad)
    np.add.at(gradient, pairs.j, -pair_grad)
    return gradient


def dense_segment_loss(
    pred: np.ndarray,
    pairs,
    variant: LossVariant = LossVariant.NORMALIZED,
) -> LossValue:
    """
    Mean weak term over all intra-segment pairs of a batch

    Args:
        pred: (rows, 2) predicted positions
        pairs: PairSet or list of PairConstraint over batch rows
        variant: normalized weak term or the plain |d - c| ablation
    Returns:
        LossValue: mean term, gradient per row and pair count
    Raises:
        WeakPosError: EmptyPairSet if there are no pairs
    """
    pairs = _as_pairs(pairs)
    if not len(pairs):
        raise WeakPosError(ErrorKind.EMPTY_PAIR_SET, "Batch holds no constraint pairs")
    pred = np.asarray(pred, dtype=float)
    terms, pair_grad = _pair_terms(
        pred, pairs, normalized=variant == LossVariant.NORMALIZED
    )
    count = len(pairs)
    return LossValue(
        value=float(terms.mean()),
        gradient=_accumulate(pred, pairs, pair_grad / count),
        pair_count=count,
    )


def _numeric_gradient(
    fn: ConstraintFn, a: np.ndarray, b: np.ndarray, h: float = 1e-6
) -> Tuple[np.ndarray, np.ndarray]:
    grad_a, grad_b = np.zeros(2), np.zeros(2)
    for axis in range(2):
        step = np.zeros(2)
        step[axis] = h
        grad_a[axis] = (fn(a + step, b) - fn(a - step, b)) / (2 * h)
        grad_b[axis] = (fn(a, b + step) - fn(a, b - step)) / (2 * h)
    return grad_a, grad_b


def generic_constraint_loss(
    pred: np.ndarray,
    pairs,
    constraint_fn: Optional[ConstraintFn] = None,
    reduction: str = "sum",
) -> LossValue:
    """
    Sum of |constraint_fn(pred_i, pred_j) - c_ij| over the edges

    With the default Euclidean constraint the gradient is analytic; custom
    constraint functions are differentiated by central differences.

    Args:
        pred: (rows, 2) predicted positions
        pairs: PairSet or list of PairConstraint
        constraint_fn: scalar function of two positions, Euclidean distance if None
        reduction: "sum" or "mean"
    Raises:
        WeakPosError: EmptyPairSet if there are no pairs
    """
    if reduction not in ("sum", "mean"):
        raise ValueError("reduction must be 'sum' or 'mean'")
    pairs = _as_pairs(pairs)
    if not len(pairs):
        raise WeakPosError(ErrorKind.EMPTY_PAIR_SET, "Batch holds no constraint pairs")
    pred = np.asarray(pred, dtype=float)
    scale = 1.0 if reduction == "sum" else 1.0 / len(pairs)
    if constraint_fn is None:
        terms, pair_grad = _pair_terms(pred, pairs, normalized=False)
        gradient = _accumulate(pred, pairs, pair_grad * scale)
    else:
        terms = np.empty(len(pairs))
        gradient = np.zeros_like(pred)
        for n, (i, j, c) in enumerate(zip(pairs.i, pairs.j, pairs.c)):
            residual = constraint_fn(pred[i], pred[j]) - c
            terms[n] = abs(residual)
            grad_i, grad_j = _numeric_gradient(constraint_fn, pred[i], pred[j])
            gradient[i] += np.sign(residual) * grad_i * scale
            gradient[j] += np.sign(residual) * grad_j * scale
    return LossValue(
        value=float(terms.sum() * scale), gradient=gradient, pair_count=len(pairs)
    )


def _units(graph: ConstraintGraph, order: np.ndarray, batch_size: int):
    """Segment windows of at most batch_size rows, in shuffled segment order"""
    for segment_id in order:
        segment = graph.segments[segment_id]
        for start in range(0, len(segment), batch_size):
            yield (
                segment_id,
                segment.indices[start : start + batch_size],
                segment.labels[start : start + batch_size],
            )


def make_batches(
    graph: ConstraintGraph, batch_size: int, stream: np.random.Generator
) -> Iterator[Tuple[Batch, PairSet]]:
    """
    One epoch of batches packed from whole segments

    Segments are shuffled; a segment longer than batch_size is split into
    contiguous windows. Windows are added to a batch until the next would
    overflow it. Lidar rows get a random orientation variant each.

    Args:
        graph: training dataset
        batch_size: maximum rows per batch
        stream: shuffle stream of this epoch
    Yields:
        the batch and its intra-window pairs i < j
    Raises:
        WeakPosError: BatchTooSmall if batch_size < 2
    """
    if batch_size < 2:
        raise WeakPosError(
            ErrorKind.BATCH_TOO_SMALL, f"Batch size {batch_size} cannot hold a pair"
        )
    table = graph.feature_table
    order = stream.permutation(len(graph.segments))
    pending: List[Tuple[int, np.ndarray, np.ndarray]] = []
    filled = 0

    def emit():
        rows = np.concatenate([indices for _, indices, _ in pending])
        variants = None
        if table.variant_count > 1:
            variants = stream.integers(0, table.variant_count, size=len(rows))
        parts, offset = [], 0
        for _, indices, labels in pending:
            parts.append(PairSet.within(labels, offset))
            offset += len(indices)
        batch = Batch(
            inputs=table.rows(rows, variants),
            rows=rows,
            segment_ids=np.concatenate(
                [np.full(len(indices), sid) for sid, indices, _ in pending]
            ),
            labels=np.concatenate([labels for _, _, labels in pending]),
        )
        return batch, PairSet.concat(parts)

    for unit in _units(graph, order, batch_size):
        if filled + len(unit[1]) > batch_size:
            yield emit()
            pending, filled = [], 0
        pending.append(unit)
        filled += len(unit[1])
    if pending:
        yield emit()
