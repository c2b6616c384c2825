"""
Dataset loading and normalization module.

Parsers for the IDX (MNIST), amat (MNIST_ROT) and CIFAR-10 binary formats, a
synthetic Gaussian-blob generator for offline runs, deterministic subsampling
and the rotated-MNIST fallback. All inputs are scaled into [0, 1].
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np
from scipy import ndimage

from schemas.config import DatasetRef
from services.numerics import Rng
from utils.errors import FormatError, PreconditionError
from utils.logging_config import get_logger
from utils.settings import get_settings

logger = get_logger(__name__)  # pylint: disable=invalid-name

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 1 + 3072
CIFAR_FEATURES = 3072

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
MNIST_ROT_FILES = {
    "train": "mnist_all_rotation_normalized_float_train_valid.amat",
    "test": "mnist_all_rotation_normalized_float_test.amat",
}
CIFAR_DIR = "cifar-10-batches-bin"
CIFAR_TRAIN_BATCHES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_BATCHES = ["test_batch.bin"]

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Dataset:
    """
    Labelled instances with features in [0, 1].

    Attributes:
        name (str): Identifier such as ``"mnist"``.
        inputs (np.ndarray): instances x features.
        labels (np.ndarray): Integer class ids in [0, class_count).
        class_count (int): Number of classes C.
    """
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise PreconditionError(f"inputs must be 2-D, got shape {inputs.shape}")
        if labels.shape != (inputs.shape[0],):
            raise PreconditionError(
                f"{inputs.shape[0]} instances but label vector has shape {labels.shape}"
            )
        if self.class_count < 1:
            raise PreconditionError("class_count must be at least 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise PreconditionError(f"labels must lie in [0, {self.class_count})")
        if inputs.size and (inputs.min() < 0 or inputs.max() > 1 or not np.all(np.isfinite(inputs))):
            raise PreconditionError("inputs must lie in [0, 1]")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def instance_count(self) -> int:
        return self.inputs.shape[0]

    @property
    def feature_count(self) -> int:
        return self.inputs.shape[1]

    def take(self, indices) -> "Dataset":
        """Dataset restricted to ``indices`` (in that order)."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.name, self.inputs[indices], self.labels[indices], self.class_count)

    def one_per_class(self) -> np.ndarray:
        """
        Index of the first instance of every class, ordered by class.

        Raises:
            PreconditionError: If some class has no instance.
        """
        indices = []
        for label in range(self.class_count):
            hits = np.flatnonzero(self.labels == label)
            if hits.size == 0:
                raise PreconditionError(f"class {label} has no instance in {self.name}")
            indices.append(int(hits[0]))
        return np.array(indices, dtype=np.int64)


@dataclass(frozen=True)
class DataSplit:
    """Train and test datasets sharing feature width and class count."""
    train: Dataset
    test: Dataset

    def __post_init__(self):
        if self.train.feature_count != self.test.feature_count:
            raise PreconditionError("train and test splits have different feature widths")
        if self.train.class_count != self.test.class_count:
            raise PreconditionError("train and test splits have different class counts")


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        try:
            with gzip.open(path, "rb") as handle:
                return handle.read()
        except FileNotFoundError:
            raise
        except (EOFError, OSError) as exc:
            raise FormatError(f"{path}: corrupt gzip stream: {exc}") from exc
    return path.read_bytes()


def _idx_header(data: bytes, magic: int, dims: int, what: str) -> List[int]:
    header_size = 4 * (1 + dims)
    if len(data) < header_size:
        raise FormatError(f"{what}: truncated header", offset=len(data))
    values = struct.unpack_from(">" + "I" * (1 + dims), data, 0)
    if values[0] != magic:
        raise FormatError(f"{what}: bad magic number 0x{values[0]:08x}, expected 0x{magic:08x}", offset=0)
    return list(values[1:])


def load_idx(images_path: PathLike, labels_path: PathLike, class_count: int = 10,
             name: str = "mnist") -> Dataset:
    """
    Load an IDX image/label file pair.

    Pixel bytes are divided by 255.0; each image is flattened row-major.

    Raises:
        FormatError: Bad magic number, truncated file, count mismatch or a label
            outside [0, class_count). The message names the byte offset.
    """
    images = _read_bytes(images_path)
    labels = _read_bytes(labels_path)

    count, rows, cols = _idx_header(images, IDX_IMAGES_MAGIC, 3, "images")
    (label_count,) = _idx_header(labels, IDX_LABELS_MAGIC, 1, "labels")
    if label_count != count:
        raise FormatError(
            f"labels: {label_count} labels for {count} images", offset=4
        )

    features = rows * cols
    expected = 16 + count * features
    if len(images) < expected:
        raise FormatError(f"images: truncated pixel data, expected {expected} bytes", offset=len(images))
    if len(labels) < 8 + count:
        raise FormatError(f"labels: truncated label data, expected {8 + count} bytes", offset=len(labels))

    pixels = np.frombuffer(images, dtype=np.uint8, count=count * features, offset=16)
    label_values = np.frombuffer(labels, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    bad = np.flatnonzero(label_values >= class_count)
    if bad.size:
        raise FormatError(
            f"labels: label {label_values[bad[0]]} is not below the class count {class_count}",
            offset=8 + int(bad[0]),
        )

    inputs = pixels.reshape(count, features).astype(np.float64) / 255.0
    logger.info("Loaded %s from IDX: %d x %d", name, count, features)
    return Dataset(name, inputs, label_values, class_count)


def write_idx(dataset: Dataset, images_path: PathLike, labels_path: PathLike) -> None:
    """
    Serialize a dataset as an IDX pair (pixels rounded to bytes).

    Square feature counts are written as square images, anything else as
    1 x features images.
    """
    count, features = dataset.inputs.shape
    side = int(round(np.sqrt(features)))
    rows, cols = (side, side) if side * side == features else (1, features)
    pixels = np.rint(dataset.inputs * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols) + pixels.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, count) + dataset.labels.astype(np.uint8).tobytes()
    )


def load_amat(path: PathLike, feature_count: int = 784, class_count: int = 10,
              name: str = "mnist_rot") -> Dataset:
    """
    Load a whitespace-separated amat text file whose last column is the label.

    Features are clamped to [0, 1]; labels must be integral.

    Raises:
        FormatError: Wrong field count, non-numeric token or invalid label,
            naming the 1-based line number.
    """
    rows = []
    labels = []
    try:
        text = Path(path).read_text(encoding="ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not an ASCII text file", offset=exc.start) from exc
    for line_number, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != feature_count + 1:
            raise FormatError(
                f"expected {feature_count + 1} fields, found {len(tokens)}", line=line_number
            )
        try:
            values = np.array([float(token) for token in tokens])
        except ValueError as exc:
            raise FormatError(f"non-numeric token: {exc}", line=line_number) from exc
        if not np.all(np.isfinite(values)):
            raise FormatError("non-finite value", line=line_number)
        label = values[-1]
        if label != int(label) or not 0 <= label < class_count:
            raise FormatError(f"invalid label {tokens[-1]}", line=line_number)
        rows.append(np.clip(values[:-1], 0.0, 1.0))
        labels.append(int(label))

    inputs = np.vstack(rows) if rows else np.zeros((0, feature_count))
    logger.info("Loaded %s from amat: %d x %d", name, inputs.shape[0], feature_count)
    return Dataset(name, inputs, np.array(labels, dtype=np.int64), class_count)


def load_cifar10(batch_paths: Iterable[PathLike], name: str = "cifar10") -> Dataset:
    """
    Load CIFAR-10 binary batches (records of 1 label byte + 3072 pixel bytes).

    Raises:
        FormatError: If a file size is not a multiple of 3073 bytes or a label
            is not below 10.
    """
    inputs = []
    labels = []
    for path in batch_paths:
        data = _read_bytes(path)
        remainder = len(data) % CIFAR_RECORD_BYTES
        if remainder:
            raise FormatError(
                f"{path}: size {len(data)} is not a multiple of {CIFAR_RECORD_BYTES}",
                offset=len(data) - remainder,
            )
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        batch_labels = records[:, 0].astype(np.int64)
        bad = np.flatnonzero(batch_labels >= 10)
        if bad.size:
            raise FormatError(f"{path}: label {batch_labels[bad[0]]} out of range",
                              offset=int(bad[0]) * CIFAR_RECORD_BYTES)
        inputs.append(records[:, 1:].astype(np.float64) / 255.0)
        labels.append(batch_labels)

    if inputs:
        all_inputs = np.vstack(inputs)
        all_labels = np.concatenate(labels)
    else:
        all_inputs = np.zeros((0, CIFAR_FEATURES))
        all_labels = np.zeros(0, dtype=np.int64)
    logger.info("Loaded %s: %d instances", name, all_inputs.shape[0])
    return Dataset(name, all_inputs, all_labels, 10)


def synth_blobs(class_count: int, features: int, per_class: int, spread: float,
                seed: int, name: str = "blobs") -> DataSplit:
    """
    Gaussian class clusters clipped to [0, 1], split 80/20 into train/test.

    Centroids are uniform in [0, 1]^features; instances are centroid plus
    ``spread`` times standard normal noise.
    """
    if min(class_count, features, per_class) < 1:
        raise PreconditionError("class_count, features and per_class must be at least 1")
    if spread < 0:
        raise PreconditionError("spread must be non-negative")
    rng = Rng(seed)
    centroids = rng.uniform_array(class_count * features).reshape(class_count, features)
    labels = np.repeat(np.arange(class_count), per_class)
    noise = rng.normal((labels.size, features))
    inputs = np.clip(centroids[labels] + spread * noise, 0.0, 1.0)

    order = rng.permutation(labels.size)
    n_train = max(1, int(round(0.8 * labels.size)))
    train_idx, test_idx = order[:n_train], order[n_train:]
    return DataSplit(
        train=Dataset(name, inputs[train_idx], labels[train_idx], class_count),
        test=Dataset(name, inputs[test_idx], labels[test_idx], class_count),
    )


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """
    Uniform subsample without replacement, deterministic under ``seed``.

    Raises:
        PreconditionError: If ``n`` is negative or exceeds the instance count.
    """
    if not 0 <= n <= dataset.instance_count:
        raise PreconditionError(
            f"cannot draw {n} instances from a dataset of {dataset.instance_count}"
        )
    indices = Rng(seed).choice(dataset.instance_count, size=n, replace=False)
    return dataset.take(indices)


def rotate_dataset(dataset: Dataset, seed: int, name: str = "mnist_rot_synth") -> Dataset:
    """
    Rotate every square image by a uniform angle in [0, 2 pi).

    Bilinear interpolation, zero fill, output clipped to [0, 1].
    """
    side = int(round(np.sqrt(dataset.feature_count)))
    if side * side != dataset.feature_count:
        raise PreconditionError("rotation needs square images")
    rng = Rng(seed)
    angles = rng.uniform_array(dataset.instance_count) * 360.0
    rotated = np.empty_like(dataset.inputs)
    for i, angle in enumerate(angles):
        image = dataset.inputs[i].reshape(side, side)
        rotated[i] = ndimage.rotate(image, angle, reshape=False, order=1,
                                    mode="constant", cval=0.0).ravel()
    return Dataset(name, np.clip(rotated, 0.0, 1.0), dataset.labels, dataset.class_count)


def save_dataset(dataset: Dataset, path: PathLike) -> None:
    """Write the canonical npz serialization of a dataset."""
    with open(path, "wb") as handle:
        np.savez(handle, inputs=dataset.inputs, labels=dataset.labels,
                 class_count=np.int64(dataset.class_count), name=np.str_(dataset.name))


def load_dataset(path: PathLike) -> Dataset:
    """Read a dataset written by ``save_dataset``."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            return Dataset(str(archive["name"]), archive["inputs"], archive["labels"],
                           int(archive["class_count"]))
    except FileNotFoundError:
        raise
    except (OSError, ValueError, KeyError, EOFError) as exc:
        raise FormatError(f"{path}: not a dataset archive: {exc}") from exc


def _find(root: Path, filename: str) -> Path:
    path = root / filename
    if path.exists():
        return path
    compressed = root / f"{filename}.gz"
    if compressed.exists():
        return compressed
    raise FileNotFoundError(f"dataset file not found: {path}")


def _load_mnist(root: Path, part: str) -> Dataset:
    images, labels = MNIST_FILES[part]
    return load_idx(_find(root, images), _find(root, labels), name="mnist")


def load_split(ref: DatasetRef, data_root: Optional[PathLike] = None) -> DataSplit:
    """
    Resolve a ``DatasetRef`` into a train/test split.

    Files are looked up under ``ref.root``, then ``data_root``, then the
    ``DIVNET_DATA_ROOT`` setting. Optional train/test sizes subsample each split.
    """
    root = Path(ref.root or data_root or get_settings().data_root)
    if ref.kind == "blobs":
        split = synth_blobs(ref.class_count, ref.features, ref.per_class, ref.spread, ref.seed)
    elif ref.kind == "mnist":
        split = DataSplit(_load_mnist(root, "train"), _load_mnist(root, "test"))
    elif ref.kind == "mnist_rot_synth":
        split = DataSplit(rotate_dataset(_load_mnist(root, "train"), ref.seed),
                          rotate_dataset(_load_mnist(root, "test"), ref.seed + 1))
    elif ref.kind == "mnist_rot":
        split = DataSplit(load_amat(_find(root, MNIST_ROT_FILES["train"])),
                          load_amat(_find(root, MNIST_ROT_FILES["test"])))
    else:
        cifar_root = root / CIFAR_DIR
        split = DataSplit(load_cifar10([_find(cifar_root, f) for f in CIFAR_TRAIN_BATCHES]),
                          load_cifar10([_find(cifar_root, f) for f in CIFAR_TEST_BATCHES]))

    train, test = split.train, split.test
    if ref.train_size is not None and ref.train_size < train.instance_count:
        train = subsample(train, ref.train_size, ref.subsample_seed)
    if ref.test_size is not None and ref.test_size < test.instance_count:
        test = subsample(test, ref.test_size, ref.subsample_seed + 1)
    return DataSplit(train, test)
