import gzip
import os
import struct

import numpy as np
import pytest

from hybridsnn.data import (MNIST_FILES, gaussian_blobs, iterate_minibatches, load_mnist_idx,
                            read_idx, write_idx, xor_dataset)
from hybridsnn.errors import FormatError

MNIST_DIR = os.path.join(os.path.dirname(__file__), "..", "data", "mnist")


def test_idx_round_trip(tmp_path, rng):
    images = rng.integers(0, 256, (5, 3, 4)).astype(np.uint8)
    labels = rng.integers(0, 10, 5).astype(np.uint8)
    write_idx(tmp_path / "img", images)
    write_idx(str(tmp_path / "lab.gz"), labels)
    assert np.array_equal(read_idx(str(tmp_path / "img")), images)
    assert np.array_equal(read_idx(str(tmp_path / "lab.gz")), labels)


def test_idx_header_layout(tmp_path):
    write_idx(tmp_path / "img", np.zeros((2, 28, 28), dtype=np.uint8))
    raw = (tmp_path / "img").read_bytes()
    assert struct.unpack(">IIII", raw[:16]) == (0x803, 2, 28, 28)
    assert len(raw) == 16 + 2 * 784


def test_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(struct.pack(">II", 0x1234, 0))
    with pytest.raises(FormatError):
        read_idx(str(tmp_path / "bad"))


def test_truncated_file(tmp_path):
    write_idx(tmp_path / "img", np.zeros((3, 4, 4), dtype=np.uint8))
    raw = (tmp_path / "img").read_bytes()
    (tmp_path / "cut").write_bytes(raw[:-5])
    with pytest.raises(OSError):
        read_idx(str(tmp_path / "cut"))
    (tmp_path / "stub").write_bytes(raw[:6])
    with pytest.raises(OSError):
        read_idx(str(tmp_path / "stub"))


def test_gzip_fallback_when_plain_file_missing(tmp_path):
    with gzip.open(tmp_path / "lab.gz", "wb") as fh:
        fh.write(struct.pack(">II", 0x801, 2) + bytes([3, 7]))
    assert read_idx(str(tmp_path / "lab")).tolist() == [3, 7]


def test_loader_normalises_with_training_statistics(tmp_path, rng):
    for key, name in MNIST_FILES.items():
        n = 6 if key.startswith("train") else 3
        arr = rng.integers(0, 256, (n, 28, 28)) if key.endswith("images") else rng.integers(0, 10, n)
        write_idx(tmp_path / name, arr)
    ds = load_mnist_idx(str(tmp_path))
    assert ds.x_train.shape == (6, 784) and ds.x_test.shape == (3, 784)
    assert ds.x_train.mean() == pytest.approx(0.0, abs=1e-12)
    assert ds.x_train.std() == pytest.approx(1.0)


@pytest.mark.skipif(not os.path.isdir(MNIST_DIR), reason="MNIST files not present")
def test_real_mnist_headers():
    images = read_idx(os.path.join(MNIST_DIR, MNIST_FILES["test_images"]))
    labels = read_idx(os.path.join(MNIST_DIR, MNIST_FILES["test_labels"]))
    assert images.shape == (10000, 28, 28) and labels.shape == (10000,)
    assert labels.max() == 9


def test_validation_split_is_disjoint(rng):
    ds = gaussian_blobs(n_train=50, seed=1)
    ds.x_train = np.arange(50, dtype=float)[:, None]
    split = ds.split_validation(10, rng)
    assert len(split.x_val) == 10 and len(split.x_train) == 40
    assert not set(split.x_val.ravel()) & set(split.x_train.ravel())


def test_blobs_are_seeded():
    a, b = gaussian_blobs(seed=4), gaussian_blobs(seed=4)
    assert np.array_equal(a.x_train, b.x_train) and a.n_classes == 2


def test_minibatches_cover_every_index(rng):
    seen = np.concatenate(list(iterate_minibatches(23, 5, rng)))
    assert sorted(seen.tolist()) == list(range(23))
    assert xor_dataset().y_train.tolist() == [0, 1, 1, 0]
