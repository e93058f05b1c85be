"""Shared fixtures: synthetic dataset trees for fast tests, the official
files when present, and a one-time kernel warmup so timed tests measure
compute rather than jit compilation."""

import gzip
import os
from pathlib import Path

import numpy as np
import pytest

from margincnn import data

REPO_ROOT = Path(__file__).resolve().parent.parent


def official_data_dir():
    """Directory holding the official dataset files, or None."""
    env = os.environ.get("MARGINCNN_DATA")
    candidates = ([Path(env)] if env else []) + [REPO_ROOT / "data"]
    for cand in candidates:
        if has_dataset(cand, "mnist"):
            return cand
    return None


def has_dataset(root, name):
    for image_file, label_file in data.SPLIT_FILES.values():
        for fname in (image_file, label_file):
            p = root / name / fname
            if not (p.exists() or p.with_name(fname + ".gz").exists()):
                return False
    return True


@pytest.fixture(scope="session")
def official_dir():
    root = official_data_dir()
    if root is None:
        pytest.skip("official MNIST files not found (run `margincnn fetch-data`)")
    return root


@pytest.fixture(scope="session")
def mnist_train(official_dir):
    return data.load_split(official_dir, "mnist", "train")


@pytest.fixture(scope="session")
def mnist_test(official_dir):
    return data.load_split(official_dir, "mnist", "test")


def write_synth_tree(root, n_train=48, n_test=16, extent=28, seed=0, dataset="mnist",
                     gzip_files=False):
    """A miniature dataset directory in the on-disk layout load_split expects."""
    rng = np.random.default_rng(seed)
    d = Path(root) / dataset
    d.mkdir(parents=True, exist_ok=True)
    for split, count in (("train", n_train), ("test", n_test)):
        images = rng.integers(0, 256, size=(count, extent, extent, 1)).astype(np.float64)
        labels = rng.integers(0, 10, size=count).astype(np.int64)
        image_file, label_file = data.SPLIT_FILES[split]
        for fname, blob in (
            (image_file, data.write_idx_images(images, raw_pixels=True)),
            (label_file, data.write_idx_labels(labels)),
        ):
            if gzip_files:
                (d / (fname + ".gz")).write_bytes(gzip.compress(blob))
            else:
                (d / fname).write_bytes(blob)
    return Path(root)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    return write_synth_tree(tmp_path_factory.mktemp("synthdata"))


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Load or compile the numba kernels once, off any timed path."""
    from margincnn import layers
    from margincnn.tensor import Rng

    x = np.linspace(-1.0, 1.0, 2 * 8 * 8).reshape(2, 8, 8, 1)
    model = layers.init_model(Rng(0, 0), input_extent=8, conv1_filters=2,
                              conv2_filters=3, fc_units=8)
    scores, caches = layers.cnn_forward(x, model, "train", rng=Rng(0, 2))
    layers.cnn_backward(np.ones_like(scores), caches, model)
