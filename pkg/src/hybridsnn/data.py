"""Datasets: MNIST IDX files and small synthetic classification tasks."""

import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    x_val: np.ndarray = None
    y_val: np.ndarray = None
    n_classes: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x_train) == 0:
            raise DataError("training split is empty")
        if not self.n_classes:
            self.n_classes = int(max(self.y_train.max(), self.y_test.max())) + 1

    @property
    def n_features(self):
        return int(np.prod(self.x_train.shape[1:]))

    def split_validation(self, n_val, rng):
        """Move ``n_val`` random training samples into a validation split."""
        idx = rng.permutation(len(self.x_train))
        val, train = idx[:n_val], idx[n_val:]
        return Dataset(self.x_train[train], self.y_train[train], self.x_test, self.y_test,
                       self.x_train[val], self.y_train[val], self.n_classes, dict(self.meta))


def _open(path):
    if not os.path.exists(path) and os.path.exists(path + ".gz"):
        path = path + ".gz"
    if path.endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path):
    """Parse one big-endian IDX file (images or labels) into a uint8 array."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise OSError(f"{path}: truncated IDX header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic == IDX_IMAGES_MAGIC:
        if len(raw) < 16:
            raise OSError(f"{path}: truncated IDX header")
        rows, cols = struct.unpack(">II", raw[8:16])
        shape, offset = (count, rows, cols), 16
    elif magic == IDX_LABELS_MAGIC:
        shape, offset = (count,), 8
    else:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}")
    need = int(np.prod(shape))
    if len(raw) - offset < need:
        raise OSError(f"{path}: truncated, expected {need} bytes of data")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=offset).reshape(shape)


def write_idx(path, array):
    array = np.asarray(array, dtype=np.uint8)
    if array.ndim == 3:
        header = struct.pack(">IIII", IDX_IMAGES_MAGIC, *array.shape)
    elif array.ndim == 1:
        header = struct.pack(">II", IDX_LABELS_MAGIC, array.shape[0])
    else:
        raise FormatError("IDX writer supports image stacks (3-D) and label vectors (1-D)")
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + array.tobytes())


def load_mnist_idx(path, normalize=True, flatten=True):
    """Load the four MNIST IDX files from directory ``path``.

    Pixels are scaled to [0, 1]; with ``normalize`` the training-set mean and
    standard deviation are then removed from both splits.
    """
    arrays = {k: read_idx(os.path.join(path, v)) for k, v in MNIST_FILES.items()}
    x_train = arrays["train_images"].astype(np.float64) / 255.0
    x_test = arrays["test_images"].astype(np.float64) / 255.0
    meta = {}
    if normalize:
        mean, std = float(x_train.mean()), float(x_train.std())
        x_train = (x_train - mean) / std
        x_test = (x_test - mean) / std
        meta = {"mean": mean, "std": std}
    if flatten:
        x_train = x_train.reshape(len(x_train), -1)
        x_test = x_test.reshape(len(x_test), -1)
    y_train = arrays["train_labels"].astype(np.int64)
    y_test = arrays["test_labels"].astype(np.int64)
    if len(x_train) != len(y_train) or len(x_test) != len(y_test):
        raise DataError("image and label counts differ")
    return Dataset(x_train, y_train, x_test, y_test, n_classes=10, meta=meta)


def gaussian_blobs(n_train=400, n_test=200, n_features=2, n_classes=2, spread=4.0, seed=0):
    """Well separated isotropic Gaussian clusters with non-negative centres."""
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.0, spread, (n_classes, n_features))

    def draw(n):
        y = rng.integers(0, n_classes, n)
        return centres[y] + 0.35 * rng.normal(size=(n, n_features)), y

    x_tr, y_tr = draw(n_train)
    x_te, y_te = draw(n_test)
    return Dataset(x_tr, y_tr, x_te, y_te, n_classes=n_classes)


def xor_dataset():
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0, 1, 1, 0])
    return Dataset(x, y, x.copy(), y.copy(), n_classes=2)


def iterate_minibatches(n, batch_size, rng=None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
