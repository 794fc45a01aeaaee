"""Multilayer perceptron with hand-written backpropagation and Adam"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from weakpos.error import ErrorKind, WeakPosError
from weakpos.msg.checkpoint import CHECKPOINT_SCHEMA_VERSION, CheckpointHeader

logger = logging.getLogger(__name__)

_DTYPE = np.dtype("<f8")


@dataclass
class MlpModel:
    """Fully connected network mapping observations to planar positions

    Layer l computes ``h @ weights[l] + biases[l]``; hidden layers apply ReLU,
    the output layer is linear.
    """

    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("Need at least an input and an output layer")
        if self.layer_sizes[-1] != 2:
            raise ValueError("Output layer must have 2 units")
        for l, (fan_in, fan_out) in enumerate(
            zip(self.layer_sizes, self.layer_sizes[1:])
        ):
            if self.weights[l].shape != (fan_in, fan_out) or self.biases[
                l
            ].shape != (fan_out,):
                raise ValueError(f"Layer {l} parameters disagree with layer sizes")

    @property
    def input_size(self) -> int:
        """Expected feature length"""
        return self.layer_sizes[0]

    @property
    def depth(self) -> int:
        """Number of affine layers"""
        return len(self.weights)

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in declared order: W0, b0, W1, b1, ..."""
        result = []
        for weight, bias in zip(self.weights, self.biases):
            result += [weight, bias]
        return result

    def parameter_count(self) -> int:
        """Total number of scalar parameters"""
        return sum(array.size for array in self.parameters())

    def is_finite(self) -> bool:
        """True if every parameter is finite"""
        return all(np.isfinite(array).all() for array in self.parameters())

    def copy(self) -> "MlpModel":
        """Deep copy"""
        return MlpModel(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )


@dataclass
class Batch:
    """Network inputs with the segment metadata needed for the loss"""

    inputs: np.ndarray
    """(rows, input_size)"""
    rows: Optional[np.ndarray] = None
    """observation index of every row"""
    segment_ids: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    """arc label of every row"""

    def __len__(self):
        return len(self.inputs)


@dataclass
class ForwardCache:
    """Activations retained by forward for backward"""

    layer_sizes: Tuple[int, ...]
    activations: List[np.ndarray]
    """layer inputs, activations[0] is the batch itself"""
    pre_activations: List[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        """Network output of the cached pass"""
        return self.pre_activations[-1]


@dataclass
class Gradients:
    """Parameter gradients, shaped like the model parameters"""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def parameters(self) -> List[np.ndarray]:
        """Gradient arrays in the model's declared order"""
        result = []
        for weight, bias in zip(self.weights, self.biases):
            result += [weight, bias]
        return result


@dataclass
class AdamState:
    """First and second moment buffers of Adam"""

    first: List[np.ndarray]
    second: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def zeros(
        model: MlpModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> "AdamState":
        """Fresh optimizer state for a model"""
        return AdamState(
            first=[np.zeros_like(p) for p in model.parameters()],
            second=[np.zeros_like(p) for p in model.parameters()],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def init_params(layer_sizes: Sequence[int], seed: int) -> MlpModel:
    """
    He-uniform weights and zero biases

    Weights of a layer with fan-in n are uniform on +-sqrt(6/n), which gives
    variance 2/n.

    Args:
        layer_sizes: units per layer, input first
        seed: initialization seed
    Returns:
        MlpModel: freshly initialized model
    """
    if len(layer_sizes) < 2:
        raise ValueError("Need at least two layers")
    stream = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(stream.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_sizes=list(layer_sizes), weights=weights, biases=biases)


def forward(
    model: MlpModel, batch: Union[Batch, np.ndarray]
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Predict positions for a batch

    Args:
        model: network
        batch: Batch or (rows, input_size) matrix
    Returns:
        (rows, 2) predictions and the cache for backward
    Raises:
        WeakPosError: DimensionMismatch if the inputs have the wrong width
    """
    inputs = batch.inputs if isinstance(batch, Batch) else batch
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.input_size:
        raise WeakPosError(
            ErrorKind.DIMENSION_MISMATCH,
            f"Model expects {model.input_size} features, got shape {inputs.shape}",
        )
    activations = [inputs]
    pre_activations = []
    hidden = inputs
    for l in range(model.depth):
        z = hidden @ model.weights[l] + model.biases[l]
        pre_activations.append(z)
        if l < model.depth - 1:
            hidden = np.maximum(z, 0.0)
            activations.append(hidden)
    cache = ForwardCache(tuple(model.layer_sizes), activations, pre_activations)
    return cache.output, cache


def backward(
    model: MlpModel, cache: ForwardCache, output_gradient: np.ndarray
) -> Gradients:
    """
    Reverse-mode gradients of a scalar loss

    Args:
        model: network used for the forward pass
        cache: cache returned by forward
        output_gradient: d loss / d output, shaped like the output
    Returns:
        Gradients: d loss / d parameters
    Raises:
        WeakPosError: StaleCache if the cache does not belong to this pass
    """
    if (
        cache.layer_sizes != tuple(model.layer_sizes)
        or np.shape(output_gradient) != cache.output.shape
    ):
        raise WeakPosError(
            ErrorKind.STALE_CACHE,
            f"Gradient of shape {np.shape(output_gradient)} does not match "
            f"cached output {cache.output.shape}",
        )
    grad_w: List[np.ndarray] = [None] * model.depth
    grad_b: List[np.ndarray] = [None] * model.depth
    delta = np.asarray(output_gradient, dtype=np.float64)
    for l in reversed(range(model.depth)):
        grad_w[l] = cache.activations[l].T @ delta
        grad_b[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ model.weights[l].T) * (cache.pre_activations[l - 1] > 0)
    return Gradients(weights=grad_w, biases=grad_b)


def adam_step(
    model: MlpModel, state: AdamState, gradients: Gradients, lr: float
) -> Tuple[MlpModel, AdamState]:
    """
    One Adam update with bias correction, applied in place

    Returns:
        the updated model and state
    """
    if lr <= 0:
        raise ValueError("Learning rate must be positive")
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for param, grad, first, second in zip(
        model.parameters(), gradients.parameters(), state.first, state.second
    ):
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * grad * grad
        denominator = np.sqrt(second / correction2) + state.eps
        param -= lr * (first / correction1) / denominator
    return model, state


def predict(model: MlpModel, inputs: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Forward pass in chunks, without keeping the cache"""
    inputs = np.atleast_2d(inputs)
    if not len(inputs):
        return np.empty((0, 2))
    return np.vstack(
        [forward(model, inputs[i : i + chunk])[0] for i in range(0, len(inputs), chunk)]
    )


def checkpoint_save(
    path: Union[str, Path],
    model: MlpModel,
    state: AdamState,
    epoch: int = 0,
    loss_trace: Optional[Sequence[float]] = None,
    config: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Write a checkpoint: one JSON header line, then raw little-endian float64
    parameters, first moments and second moments
    """
    header = CheckpointHeader(
        layer_sizes=model.layer_sizes,
        activation=model.activation,
        step=state.step,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        epoch=epoch,
        loss_trace=list(loss_trace or []),
        config=config or {},
    )
    with open(path, "wb") as stream:
        stream.write(header.model_dump_json().encode("utf-8") + b"\n")
        for array in model.parameters() + state.first + state.second:
            stream.write(np.ascontiguousarray(array, dtype=_DTYPE).tobytes())
    logger.debug("Checkpoint written to %s (step %d)", path, state.step)


def checkpoint_load(
    path: Union[str, Path], layer_sizes: Optional[Sequence[int]] = None
) -> Tuple[MlpModel, AdamState, CheckpointHeader]:
    """
    Read a checkpoint

    Args:
        path: checkpoint file
        layer_sizes: expected architecture, not checked if None
    Returns:
        model, optimizer state and header
    Raises:
        WeakPosError: SchemaMismatch on version, architecture or size disagreement
    """
    with open(path, "rb") as stream:
        header = CheckpointHeader.model_validate_json(stream.readline())
        payload = stream.read()
    if header.schema_version != CHECKPOINT_SCHEMA_VERSION:
        raise WeakPosError(
            ErrorKind.SCHEMA_MISMATCH,
            f"Unsupported checkpoint schema {header.schema_version}",
        )
    if layer_sizes is not None and list(layer_sizes) != header.layer_sizes:
        raise WeakPosError(
            ErrorKind.SCHEMA_MISMATCH,
            f"Checkpoint has layers {header.layer_sizes}, expected {list(layer_sizes)}",
        )
    shapes = []
    for fan_in, fan_out in zip(header.layer_sizes, header.layer_sizes[1:]):
        shapes += [(fan_in, fan_out), (fan_out,)]
    shapes = shapes * 3
    expected = sum(int(np.prod(shape)) for shape in shapes) * _DTYPE.itemsize
    if len(payload) != expected:
        raise WeakPosError(
            ErrorKind.SCHEMA_MISMATCH,
            f"Checkpoint payload has {len(payload)} bytes, expected {expected}",
        )
    flat = np.frombuffer(payload, dtype=_DTYPE)
    arrays = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[offset : offset + size].reshape(shape).astype(np.float64))
        offset += size
    count = len(shapes) // 3
    params = arrays[:count]
    first, second = arrays[count : 2 * count], arrays[2 * count :]
    model = MlpModel(
        layer_sizes=header.layer_sizes,
        weights=params[0::2],
        biases=params[1::2],
        activation=header.activation,
    )
    state = AdamState(
        first=first,
        second=second,
        step=header.step,
        beta1=header.beta1,
        beta2=header.beta2,
        eps=header.eps,
    )
    return model, state, header

