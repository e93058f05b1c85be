"""Dense float64 arrays plus the seeded random stream used everywhere else.

Tensors are plain ``numpy.ndarray`` objects with ``dtype=float64`` and
row-major (C-order) layout; the helpers here validate shapes, wrap the
handful of primitive operations the layers are built on, and never modify
their inputs.

Randomness comes from numpy's Philox generator, a counter-based RNG:
identical seed + identical call sequence always reproduces the same
stream, independent of platform or thread count.  Independent named
streams are derived by seeding with the pair ``(seed, stream)``.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError, SizeError

Shape = tuple[int, ...]

# numpy indexes with C ssize_t; element counts beyond this are not addressable
_MAX_ELEMENTS = np.iinfo(np.intp).max


def as_shape(dims: Iterable[int]) -> Shape:
    """Validate and normalize a shape: every extent a positive integer."""
    shape = tuple(int(d) for d in dims)
    if not shape:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    if element_count(shape) > _MAX_ELEMENTS:
        raise SizeError(f"element count of shape {shape} exceeds addressable range")
    return shape


def element_count(shape: Sequence[int]) -> int:
    n = 1
    for d in shape:
        n *= int(d)
    return n


def strides_of(shape: Sequence[int]) -> tuple[int, ...]:
    """Row-major strides in elements: stride_k = product of trailing extents."""
    out = []
    acc = 1
    for d in reversed(shape):
        out.append(acc)
        acc *= d
    return tuple(reversed(out))


def flat_index(coords: Sequence[int], shape: Sequence[int]) -> int:
    """Row-major flat index of a coordinate tuple."""
    if len(coords) != len(shape):
        raise ShapeError(f"coordinate rank {len(coords)} != shape rank {len(shape)}")
    idx = 0
    for c, d, s in zip(coords, shape, strides_of(shape)):
        if not 0 <= c < d:
            raise ShapeError(f"coordinate {coords} out of bounds for shape {tuple(shape)}")
        idx += c * s
    return idx


def unflatten_index(idx: int, shape: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`flat_index`."""
    if not 0 <= idx < element_count(shape):
        raise ShapeError(f"flat index {idx} out of range for shape {tuple(shape)}")
    coords = []
    for s in strides_of(shape):
        coords.append(idx // s)
        idx %= s
    return tuple(coords)


def zeros(shape: Iterable[int]) -> np.ndarray:
    """Freshly allocated all-zero tensor."""
    return np.zeros(as_shape(shape), dtype=np.float64)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rank-2 matrix product ``c[i, j] = sum_t a[i, t] * b[t, j]``."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def map_unary(t: np.ndarray, f: Callable[[float], float]) -> np.ndarray:
    """Elementwise application of a scalar function; shape preserved."""
    return np.vectorize(f, otypes=[np.float64])(t)


class Rng:
    """Seedable random stream (Philox, counter-based).

    ``stream`` selects an independent substream of the same seed, so
    e.g. weight initialization and shuffling can draw from separate
    streams that are both fully determined by one experiment seed.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence((self.seed, self.stream)))
        )

    def derive(self, stream: int) -> "Rng":
        """Fresh stream with the same seed and a different stream id."""
        return Rng(self.seed, stream)

    def uniform(self, shape: Iterable[int]) -> np.ndarray:
        return self.gen.random(as_shape(shape), dtype=np.float64)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform random permutation of ``range(n)`` (Fisher-Yates)."""
        return self.gen.permutation(n)


def random_normal(
    shape: Iterable[int],
    mean: float,
    stddev: float,
    truncate_at: float | None = None,
    *,
    rng: Rng,
) -> np.ndarray:
    """I.i.d. normal samples; draws beyond ``truncate_at`` sigma are redrawn.

    With ``truncate_at=k`` every sample satisfies ``|x - mean| <= k * stddev``.
    """
    shape = as_shape(shape)
    if stddev <= 0:
        raise ValueError(f"stddev must be > 0, got {stddev}")
    out = mean + stddev * rng.gen.standard_normal(shape)
    if truncate_at is not None:
        bound = truncate_at * stddev
        bad = np.abs(out - mean) > bound
        while bad.any():
            redraw = mean + stddev * rng.gen.standard_normal(int(bad.sum()))
            out[bad] = redraw
            bad = np.abs(out - mean) > bound
    return out
