"""
Feed-forward network module.

Sigmoid hidden layers, softmax output, cross-entropy loss and mini-batch SGD
with momentum. Also extracts per-layer activation matrices for kernel
construction and reads/writes versioned model files.
"""

import io
import json
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, log_softmax, softmax

from schemas.config import TrainConfig
from schemas.records import MODEL_FORMAT, MODEL_VERSION, EpochRecord, ModelHeader
from services.dataio import Dataset, subsample
from services.numerics import Rng
from utils.errors import FormatError, PreconditionError, TrainingError
from utils.logging_config import get_logger

logger = get_logger(__name__)  # pylint: disable=invalid-name

PathLike = Union[str, Path]
EpochHook = Callable[[int, "NetworkParams"], Optional["NetworkParams"]]


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class NetworkParams:
    """
    Parameters of a fully connected network.

    ``weights[l]`` has shape ``layer_sizes[l] x layer_sizes[l + 1]`` and
    ``biases[l]`` has length ``layer_sizes[l + 1]``. Arrays are read-only.
    """
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        weights = tuple(_frozen(w) for w in self.weights)
        biases = tuple(_frozen(b) for b in self.biases)
        if not weights or len(weights) != len(biases):
            raise PreconditionError("need one bias vector per weight matrix")
        for index, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise PreconditionError(
                    f"layer {index}: weight {w.shape} does not match bias {b.shape}"
                )
            if index and weights[index - 1].shape[1] != w.shape[0]:
                raise PreconditionError(f"layer {index}: fan-in {w.shape[0]} does not match "
                                        f"previous fan-out {weights[index - 1].shape[1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise PreconditionError(f"layer {index}: non-finite parameters")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def layer_sizes(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def hidden_count(self) -> int:
        return len(self.weights) - 1

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    @classmethod
    def initialize(cls, layer_sizes: Sequence[int], seed: int) -> "NetworkParams":
        """
        Sigmoid-aware uniform initialization.

        Weights are uniform in +-4 * sqrt(6 / (fan_in + fan_out)); biases are zero.
        """
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise PreconditionError(f"invalid layer sizes {list(layer_sizes)}")
        rng = Rng(seed)
        weights = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 4.0 * np.sqrt(6.0 / (fan_in + fan_out))
            weights.append((2.0 * rng.uniform_array(fan_in * fan_out) - 1.0).reshape(fan_in, fan_out) * bound)
        biases = [np.zeros(size) for size in layer_sizes[1:]]
        return cls(tuple(weights), tuple(biases))

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int]) -> "NetworkParams":
        """All-zero network, useful as a symmetric fixture."""
        return cls(
            tuple(np.zeros((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])),
            tuple(np.zeros(b) for b in layer_sizes[1:]),
        )


@dataclass(frozen=True)
class ForwardPass:
    """
    Intermediate values of a forward pass over a batch.

    ``hidden[l]`` and ``pre_activations[l]`` are instances x width for hidden
    layer ``l + 1``; ``pre_activations[-1]`` are the output logits.
    """
    hidden: Tuple[np.ndarray, ...]
    pre_activations: Tuple[np.ndarray, ...]
    probabilities: np.ndarray

    @property
    def logits(self) -> np.ndarray:
        return self.pre_activations[-1]


@dataclass(frozen=True)
class ActivationMatrix:
    """
    Post-sigmoid activations of one hidden layer.

    ``values[i]`` is the activation vector of neuron ``i`` over the instances
    (neurons x instances).
    """
    layer_index: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise PreconditionError(f"activation matrix must be 2-D with neurons, got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def neuron_count(self) -> int:
        return self.values.shape[0]

    @property
    def instance_count(self) -> int:
        return self.values.shape[1]


@dataclass
class TrainResult:
    """Trained parameters and the per-epoch log."""
    params: NetworkParams
    epochs: List[EpochRecord] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_train_error(self) -> float:
        return self.epochs[-1].train_error if self.epochs else float("nan")


def _check_inputs(net: NetworkParams, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != net.layer_sizes[0]:
        raise PreconditionError(
            f"input width {inputs.shape[-1] if inputs.ndim else 0} does not match "
            f"network input size {net.layer_sizes[0]}"
        )
    return inputs


def forward(net: NetworkParams, inputs) -> ForwardPass:
    """
    Run a batch through the network.

    Hidden layers apply the logistic sigmoid, the output layer a softmax.

    Raises:
        PreconditionError: If the input width does not match the network.
    """
    return _forward(net.weights, net.biases, _check_inputs(net, inputs))


def _forward(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
             activation: np.ndarray) -> ForwardPass:
    hidden = []
    pre_activations = []
    last = len(weights) - 1
    for index, (w, b) in enumerate(zip(weights, biases)):
        z = activation @ w + b
        pre_activations.append(z)
        if index < last:
            activation = expit(z)
            hidden.append(activation)
    probabilities = softmax(pre_activations[-1], axis=1)
    return ForwardPass(tuple(hidden), tuple(pre_activations), probabilities)


def predict(net: NetworkParams, inputs) -> np.ndarray:
    """Argmax class per instance; ties go to the lowest class index."""
    return np.argmax(forward(net, inputs).logits, axis=1)


def loss(net: NetworkParams, inputs, labels) -> float:
    """Mean cross-entropy of the softmax output."""
    logits = forward(net, inputs).logits
    labels = np.asarray(labels, dtype=np.int64)
    return float(-np.mean(log_softmax(logits, axis=1)[np.arange(labels.size), labels]))


def loss_and_gradients(net: NetworkParams, inputs, labels
                       ) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """
    Mean cross-entropy and its gradients by backpropagation.

    Returns:
        tuple: ``(loss, weight_gradients, bias_gradients)`` aligned with
        ``net.weights`` and ``net.biases``.
    """
    return _backprop(net.weights, net.biases, _check_inputs(net, inputs),
                     np.asarray(labels, dtype=np.int64))


def _backprop(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
              inputs: np.ndarray, labels: np.ndarray):
    passed = _forward(weights, biases, inputs)
    count = labels.size
    rows = np.arange(count)
    value = float(-np.mean(log_softmax(passed.logits, axis=1)[rows, labels]))

    delta = passed.probabilities.copy()
    delta[rows, labels] -= 1.0
    delta /= count

    layer_inputs = [inputs] + list(passed.hidden)
    grad_w: List[np.ndarray] = [None] * len(weights)
    grad_b: List[np.ndarray] = [None] * len(weights)
    for index in range(len(weights) - 1, -1, -1):
        grad_w[index] = layer_inputs[index].T @ delta
        grad_b[index] = delta.sum(axis=0)
        if index:
            a = layer_inputs[index]
            delta = (delta @ weights[index].T) * a * (1.0 - a)
    return value, grad_w, grad_b


def classification_error(net: NetworkParams, data: Dataset) -> float:
    """Fraction of argmax mispredictions (0 for an empty dataset)."""
    if data.instance_count == 0:
        return 0.0
    return float(np.mean(predict(net, data.inputs) != data.labels))


def train(net: NetworkParams, data: Dataset, cfg: TrainConfig,
          on_epoch_end: Optional[EpochHook] = None) -> TrainResult:
    """
    Mini-batch SGD with momentum on the mean cross-entropy.

    Stops at the first epoch whose training classification error is below
    ``cfg.error_threshold`` or after ``cfg.max_epochs`` epochs. ``on_epoch_end``
    may return a replacement network (for instance a pruned one); momentum is
    reset when it does.

    Raises:
        TrainingError: If the loss becomes non-finite.
    """
    if data.feature_count != net.layer_sizes[0]:
        raise PreconditionError("dataset width does not match the network input size")
    if data.class_count > net.layer_sizes[-1]:
        raise PreconditionError("network has fewer outputs than the dataset has classes")

    rng = Rng(cfg.seed)
    weights = [np.array(w) for w in net.weights]
    biases = [np.array(b) for b in net.biases]
    velocity_w = [np.zeros_like(w) for w in weights]
    velocity_b = [np.zeros_like(b) for b in biases]
    result = TrainResult(params=net)
    start = time.perf_counter()

    for epoch in range(1, cfg.max_epochs + 1):
        epoch_start = time.perf_counter()
        order = rng.permutation(data.instance_count)
        for begin in range(0, data.instance_count, cfg.batch_size):
            batch = order[begin:begin + cfg.batch_size]
            batch_loss, grad_w, grad_b = _backprop(weights, biases,
                                                   data.inputs[batch], data.labels[batch])
            if not np.isfinite(batch_loss):
                logger.error("Training diverged at epoch %d", epoch)
                raise TrainingError("loss became non-finite", epoch=epoch)
            for index in range(len(weights)):
                velocity_w[index] = cfg.momentum * velocity_w[index] - cfg.learning_rate * grad_w[index]
                velocity_b[index] = cfg.momentum * velocity_b[index] - cfg.learning_rate * grad_b[index]
                weights[index] += velocity_w[index]
                biases[index] += velocity_b[index]

        if not all(np.all(np.isfinite(w)) for w in weights + biases):
            logger.error("Training diverged at epoch %d", epoch)
            raise TrainingError("parameters became non-finite", epoch=epoch)
        current = NetworkParams(tuple(weights), tuple(biases))
        epoch_loss = loss(current, data.inputs, data.labels)
        if not np.isfinite(epoch_loss):
            logger.error("Training diverged at epoch %d", epoch)
            raise TrainingError("loss became non-finite", epoch=epoch)
        error = classification_error(current, data)

        if on_epoch_end is not None:
            replacement = on_epoch_end(epoch, current)
            if replacement is not None:
                current = replacement
                weights = [np.array(w) for w in current.weights]
                biases = [np.array(b) for b in current.biases]
                velocity_w = [np.zeros_like(w) for w in weights]
                velocity_b = [np.zeros_like(b) for b in biases]
                error = classification_error(current, data)

        result.epochs.append(EpochRecord(
            epoch=epoch, loss=epoch_loss, train_error=error,
            seconds=time.perf_counter() - epoch_start,
            width=current.layer_sizes[1:-1],
        ))
        logger.info("Epoch %d: loss %.5f, train error %.4f", epoch, epoch_loss, error)
        result.params = current
        if error < cfg.error_threshold:
            logger.info("Reached train error %.4f < %.4f after %d epochs",
                        error, cfg.error_threshold, epoch)
            break
    else:
        logger.info("Stopped at max_epochs=%d with train error %.4f",
                    cfg.max_epochs, result.final_train_error)

    result.seconds = time.perf_counter() - start
    return result


def layer_activations(net: NetworkParams, data: Dataset, layer_index: int,
                      instance_cap: Optional[int] = None, seed: int = 0) -> ActivationMatrix:
    """
    Activation matrix of hidden layer ``layer_index`` (1-based).

    With ``instance_cap`` smaller than the dataset, a seeded uniform subsample
    of that many instances is used.

    Raises:
        PreconditionError: If ``layer_index`` is not a hidden layer.
    """
    if not 1 <= layer_index <= net.hidden_count:
        raise PreconditionError(
            f"layer_index {layer_index} is not a hidden layer (1..{net.hidden_count})"
        )
    if instance_cap is not None and instance_cap < data.instance_count:
        data = subsample(data, instance_cap, seed)
    activation = _check_inputs(net, data.inputs)
    for w, b in zip(net.weights[:layer_index], net.biases[:layer_index]):
        activation = expit(activation @ w + b)
    return ActivationMatrix(layer_index=layer_index, values=activation.T.copy())


def save_model(net: NetworkParams, path: PathLike, train_config: Optional[TrainConfig] = None,
               seed: Optional[int] = None, train_seconds: Optional[float] = None) -> None:
    """
    Write a model file.

    The file is an uncompressed npz archive holding a JSON ``header``
    (format, version, layer sizes, training config, seed) and arrays
    ``weight_<l>`` / ``bias_<l>``.
    """
    header = ModelHeader(layer_sizes=net.layer_sizes, train_config=train_config,
                         seed=seed, train_seconds=train_seconds)
    arrays = {"header": np.frombuffer(header.model_dump_json().encode("utf-8"), dtype=np.uint8)}
    for index, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"weight_{index}"] = w
        arrays[f"bias_{index}"] = b
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    Path(path).write_bytes(buffer.getvalue())


def _read_archive(path: PathLike):
    try:
        archive = np.load(path, allow_pickle=False)
    except FileNotFoundError:
        raise
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as exc:
        raise FormatError(f"{path}: corrupt model file: {exc}") from exc
    if not isinstance(archive, np.lib.npyio.NpzFile):
        raise FormatError(f"{path}: not an npz archive")
    try:
        with archive:
            contents = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, EOFError, KeyError, zipfile.BadZipFile) as exc:
        raise FormatError(f"{path}: corrupt model file: {exc}") from exc
    if "header" not in contents:
        raise FormatError(f"{path}: model file has no header")
    try:
        header = ModelHeader.model_validate(json.loads(contents["header"].tobytes().decode("utf-8")))
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: unreadable model header: {exc}") from exc
    if header.format != MODEL_FORMAT or header.version != MODEL_VERSION:
        raise FormatError(
            f"{path}: unsupported model format {header.format} v{header.version}, "
            f"expected {MODEL_FORMAT} v{MODEL_VERSION}"
        )
    return header, contents


def read_model_header(path: PathLike) -> ModelHeader:
    """Header of a model file."""
    header, _ = _read_archive(path)
    return header


def load_model(path: PathLike) -> NetworkParams:
    """
    Read a model file written by ``save_model``.

    Raises:
        FormatError: Corrupt or truncated file, or a version mismatch.
    """
    header, contents = _read_archive(path)
    layers = len(header.layer_sizes) - 1
    try:
        net = NetworkParams(
            tuple(contents[f"weight_{i}"] for i in range(layers)),
            tuple(contents[f"bias_{i}"] for i in range(layers)),
        )
    except (KeyError, PreconditionError) as exc:
        raise FormatError(f"{path}: inconsistent model file: {exc}") from exc
    if net.layer_sizes != header.layer_sizes:
        raise FormatError(f"{path}: header layer sizes {header.layer_sizes} do not match "
                          f"stored parameters {net.layer_sizes}")
    return net
