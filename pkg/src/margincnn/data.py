"""MNIST-family dataset ingestion: IDX parsing, batching, fetching.

The IDX container is big-endian: a 32-bit magic (0x803 for images, 0x801
for labels), 32-bit counts, then raw unsigned bytes.  Pixels are mapped to
[0, 1] by u/255 (``raw_pixels=True`` keeps the original 0..255 values);
nothing else is done to the images besides optional zero-padding.

Files are read from ``<data_dir>/<dataset>/``, plain or gzipped, under the
published names (train-images-idx3-ubyte, train-labels-idx1-ubyte,
t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte).
"""

from __future__ import annotations

import dataclasses
import gzip
import hashlib
import os
import struct
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import FormatError
from .objectives import TargetEncoding, encode_targets
from .tensor import Rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DATASETS = ("mnist", "fashion-mnist")

SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

DEFAULT_BASE_URLS = {
    "mnist": "https://ossci-datasets.s3.amazonaws.com/mnist",
    "fashion-mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com",
}

# sha256 of the decompressed canonical files, for post-download verification
KNOWN_SHA256 = {
    "mnist": {
        "train-images-idx3-ubyte": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db",
        "train-labels-idx1-ubyte": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5",
        "t10k-images-idx3-ubyte": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7",
        "t10k-labels-idx1-ubyte": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2",
    },
}


@dataclass
class DatasetSplit:
    images: np.ndarray  # [n, H, W, 1] float64
    labels: np.ndarray  # [n] int64 in [0, 10)
    dataset: str
    split: str

    @property
    def n(self) -> int:
        return self.images.shape[0]


@dataclass
class Batch:
    x: np.ndarray  # [b, H, W, 1]
    labels: np.ndarray  # [b]
    _encoding: TargetEncoding | None = dataclasses.field(default=None, repr=False)

    @property
    def encoding(self) -> TargetEncoding:
        """{-1, +1} per-class targets, built on first use."""
        if self._encoding is None:
            self._encoding = encode_targets(self.labels)
        return self._encoding


def parse_idx_images(raw: bytes, raw_pixels: bool = False) -> np.ndarray:
    """Decode an IDX image file into a ``[n, rows, cols, 1]`` float tensor."""
    if len(raw) < 16:
        raise FormatError(f"image file truncated: {len(raw)} bytes is too short for a header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    expected = 16 + n * rows * cols
    if len(raw) != expected:
        raise FormatError(f"image payload is {len(raw)} bytes, expected {expected}")
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(n, rows, cols, 1)
    out = pixels.astype(np.float64)
    if not raw_pixels:
        out /= 255.0
    return out


def parse_idx_labels(raw: bytes) -> np.ndarray:
    """Decode an IDX label file; every label must be < 10."""
    if len(raw) < 8:
        raise FormatError(f"label file truncated: {len(raw)} bytes is too short for a header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise FormatError(f"bad label magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    expected = 8 + n
    if len(raw) != expected:
        raise FormatError(f"label payload is {len(raw)} bytes, expected {expected}")
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() >= 10:
        raise FormatError(f"label {labels.max()} out of range [0, 10)")
    return labels


def write_idx_images(images: np.ndarray, raw_pixels: bool = False) -> bytes:
    """Inverse of :func:`parse_idx_images`; round-trips bit-exactly."""
    n, rows, cols, _ = images.shape
    scaled = images if raw_pixels else images * 255.0
    pixels = np.rint(scaled).astype(np.uint8)
    return struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()


def write_idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">II", LABELS_MAGIC, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()


def _read_maybe_gzip(path: Path) -> bytes:
    """Read ``path`` or ``path + '.gz'``, decompressing when gzipped."""
    candidates = [path, path.with_name(path.name + ".gz")]
    for p in candidates:
        if p.exists():
            raw = p.read_bytes()
            if raw[:2] == b"\x1f\x8b":
                raw = gzip.decompress(raw)
            return raw
    raise FileNotFoundError(
        f"no {path.name}[.gz] under {path.parent} (run `margincnn fetch-data` to download)"
    )


def load_split(
    data_dir: str | Path, dataset: str, split: str, raw_pixels: bool = False
) -> DatasetSplit:
    """Load one train/test split from disk."""
    if dataset not in DATASETS:
        raise ValueError(f"unknown dataset {dataset!r}, expected one of {DATASETS}")
    if split not in SPLIT_FILES:
        raise ValueError(f"unknown split {split!r}, expected one of {tuple(SPLIT_FILES)}")
    base = Path(data_dir) / dataset
    image_file, label_file = SPLIT_FILES[split]
    images = parse_idx_images(_read_maybe_gzip(base / image_file), raw_pixels=raw_pixels)
    labels = parse_idx_labels(_read_maybe_gzip(base / label_file))
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{dataset}/{split}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    return DatasetSplit(images=images, labels=labels, dataset=dataset, split=split)


def pad_images(split: DatasetSplit, target: int) -> DatasetSplit:
    """Zero-pad images symmetrically to ``target x target``; labels unchanged."""
    extent = split.images.shape[1]
    if target < extent:
        raise ValueError(f"target extent {target} smaller than stored extent {extent}")
    if target == extent:
        return split
    if (target - extent) % 2:
        raise ValueError(f"padding {extent} -> {target} is not symmetric")
    margin = (target - extent) // 2
    padded = np.pad(split.images, ((0, 0), (margin, margin), (margin, margin), (0, 0)))
    return dataclasses.replace(split, images=padded)


def batches(
    split: DatasetSplit, batch_size: int, shuffle: bool, rng: Rng | None = None
) -> Iterator[Batch]:
    """One epoch of minibatches; the final batch may be short.

    Shuffling draws a fresh Fisher-Yates permutation from ``rng``, so each
    epoch consumes the stream in a reproducible order.
    """
    n = split.n
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    if shuffle:
        if rng is None:
            raise ValueError("shuffling needs an rng")
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    for lo in range(0, n, batch_size):
        idx = order[lo : lo + batch_size]
        yield Batch(x=split.images[idx], labels=split.labels[idx])


def resolve_data_dir(cli_value: str | Path | None) -> Path:
    """Precedence: explicit flag, then MARGINCNN_DATA, then ./data."""
    if cli_value is not None:
        return Path(cli_value)
    env = os.environ.get("MARGINCNN_DATA")
    return Path(env) if env else Path("data")


def parse_sha256_manifest(text: str) -> dict[str, str]:
    """Parse ``sha256sum``-style lines: ``<hex digest>  <filename>``."""
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or len(parts[0]) != 64:
            raise FormatError(f"bad checksum line: {line!r}")
        digest, name = parts
        out[name] = digest.lower()
    return out


def fetch_dataset(
    data_dir: str | Path,
    dataset: str,
    base_url: str | None = None,
    checksums: dict[str, str] | None = None,
    overwrite: bool = False,
) -> list[Path]:
    """Download the four gzipped files of ``dataset`` into the data directory.

    ``checksums`` maps downloaded filenames (with .gz) to sha256 digests and
    is verified against the received bytes; independently, the decompressed
    payload is checked against the canonical digests when they are known.
    """
    if dataset not in DATASETS:
        raise ValueError(f"unknown dataset {dataset!r}, expected one of {DATASETS}")
    base_url = (base_url or DEFAULT_BASE_URLS[dataset]).rstrip("/")
    dest_dir = Path(data_dir) / dataset
    dest_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for image_file, label_file in [SPLIT_FILES["train"], SPLIT_FILES["test"]]:
        for name in (image_file, label_file):
            gz_name = name + ".gz"
            dest = dest_dir / gz_name
            if dest.exists() and not overwrite:
                written.append(dest)
                continue
            with urllib.request.urlopen(f"{base_url}/{gz_name}") as resp:
                payload = resp.read()
            if checksums and gz_name in checksums:
                digest = hashlib.sha256(payload).hexdigest()
                if digest != checksums[gz_name]:
                    raise FormatError(
                        f"{gz_name}: sha256 {digest} does not match manifest {checksums[gz_name]}"
                    )
            known = KNOWN_SHA256.get(dataset, {}).get(name)
            if known is not None:
                digest = hashlib.sha256(gzip.decompress(payload)).hexdigest()
                if digest != known:
                    raise FormatError(f"{name}: decompressed sha256 {digest} is not the canonical {known}")
            dest.write_bytes(payload)
            written.append(dest)
    return written
