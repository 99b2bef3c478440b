"""Dense tensors, vector/tensor products, CP assembly and tensor file I/O.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. The helpers here only add validation on top of numpy.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence

import numpy as np

from .errors import InvalidArgument

MAGIC = b"GTD1"


def as_tensor(data, shape: Sequence[int] | None = None) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        shape = validate_shape(shape)
        if arr.size != int(np.prod(shape)):
            raise InvalidArgument(f"data length {arr.size} does not match shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim < 1:
        raise InvalidArgument("tensor order must be at least 1")
    return arr


def validate_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(n) for n in shape)
    if len(shape) < 1:
        raise InvalidArgument("shape must have at least one dimension")
    if any(n < 1 for n in shape):
        raise InvalidArgument(f"shape entries must be >= 1, got {shape}")
    return shape


def _as_vector(v, what="vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise InvalidArgument(f"{what} must be a nonempty 1-D sequence")
    return v


def outer_product(vs: Sequence) -> np.ndarray:
    """Iterated outer product; entry [i1,...,iD] is the product of vs[d][id]."""
    if len(vs) == 0:
        raise InvalidArgument("outer_product needs at least one vector")
    vecs = [_as_vector(v) for v in vs]
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return np.ascontiguousarray(out)


def cp_assemble(factors: Sequence[Sequence]) -> np.ndarray:
    """Sum of rank-1 terms.  ``factors[r][d]`` is the length-n_d vector h_{r,d}."""
    if len(factors) == 0:
        raise InvalidArgument("cp_assemble needs at least one rank term")
    order = len(factors[0])
    if order == 0:
        raise InvalidArgument("rank terms must hold at least one factor vector")
    mats = []
    for d in range(order):
        cols = []
        for r, term in enumerate(factors):
            if len(term) != order:
                raise InvalidArgument(f"rank term {r} has {len(term)} factors, expected {order}")
            cols.append(_as_vector(term[d], f"factor ({r},{d})"))
        lengths = {c.size for c in cols}
        if len(lengths) != 1:
            raise InvalidArgument(f"factor lengths along mode {d} disagree: {sorted(lengths)}")
        mats.append(np.stack(cols, axis=1))  # n_d x R
    return cp_from_matrices(mats)


def cp_from_matrices(mats: Sequence[np.ndarray]) -> np.ndarray:
    """CP tensor from factor matrices of shape (n_d, R)."""
    # products left to right, same order as outer_product, so R=1 agrees bitwise
    D = len(mats)
    out = None
    for d, m in enumerate(mats):
        m = np.asarray(m, dtype=np.float64)
        term = m.reshape((1,) * d + m.shape[:1] + (1,) * (D - 1 - d) + m.shape[1:])
        out = term if out is None else out * term
    return np.ascontiguousarray(out.sum(axis=-1))


def hadamard(a, b) -> np.ndarray:
    a, b = _as_vector(a), _as_vector(b)
    if a.shape != b.shape:
        raise InvalidArgument(f"hadamard length mismatch: {a.size} vs {b.size}")
    return a * b


def concat(a, b) -> np.ndarray:
    return np.concatenate([_as_vector(a), _as_vector(b)])


@dataclass(frozen=True)
class CoordinateGrid:
    """Per-axis sample positions; the full grid is their Cartesian product."""

    axes: tuple[np.ndarray, ...]

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        if not axes:
            raise InvalidArgument("coordinate grid needs at least one axis")
        for d, a in enumerate(axes):
            if a.ndim != 1 or a.size == 0:
                raise InvalidArgument(f"axis {d} must be a nonempty vector")
            if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() >= 1.0:
                raise InvalidArgument(f"axis {d} entries must lie in [0, 1)")
            if np.any(np.diff(a) <= 0):
                raise InvalidArgument(f"axis {d} must be strictly increasing")
        object.__setattr__(self, "axes", axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def points(self) -> np.ndarray:
        """All grid points as a (prod n_d, D) array in row-major order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def uniform_coordinates(shape: Sequence[int]) -> CoordinateGrid:
    shape = validate_shape(shape)
    return CoordinateGrid(tuple(np.arange(n, dtype=np.float64) / n for n in shape))


# -- GTD1 files ---------------------------------------------------------------
# magic "GTD1", uint32 D, D x uint64 dims, row-major float64 payload; all LE.

def write_gtd1(dst: str | Path | BinaryIO, arr) -> None:
    arr = as_tensor(arr)
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = arr.astype("<f8", copy=False).tobytes(order="C")
    if hasattr(dst, "write"):
        dst.write(header)
        dst.write(payload)
        return
    with open(dst, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_gtd1(src: str | Path | BinaryIO) -> np.ndarray:
    if hasattr(src, "read"):
        return _read_gtd1_stream(src)
    with open(src, "rb") as fh:
        return _read_gtd1_stream(fh)


def _read_gtd1_stream(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise InvalidArgument(f"bad magic {magic!r}, expected {MAGIC!r}")
    (order,) = struct.unpack("<I", fh.read(4))
    if order < 1:
        raise InvalidArgument("tensor order must be at least 1")
    dims = struct.unpack(f"<{order}Q", fh.read(8 * order))
    count = int(np.prod(dims))
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise InvalidArgument("truncated GTD1 payload")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(validate_shape(dims))
