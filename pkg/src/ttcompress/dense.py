"""Dense tensors with explicit column-major index arithmetic.

Tensors are stored as a flat float64 sequence in column-major (Fortran)
order together with a dimension list.  Reshaping and unfolding are
metadata-only operations on that flat sequence, so the linearization
semantics are independent of any array library's native memory layout.

All public indices and axis numbers are 1-based, matching the usual
mathematical convention for multi-index formulas.  Internally everything
is 0-based numpy.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, IndexRangeError, ShapeError


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Return a read-only float64 view of ``arr`` without copying."""
    out = np.asarray(arr, dtype=np.float64)
    if out.flags.writeable:
        out = out.view()
        out.flags.writeable = False
    return out


@dataclass(frozen=True)
class DenseTensor:
    """A d-dimensional real tensor: extents ``dims`` plus a flat
    column-major value sequence of length ``prod(dims)``."""

    dims: tuple
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 1 or any(n < 1 for n in dims):
            raise ShapeError(f"tensor extents must all be >= 1, got {dims}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ShapeError(
                "values must be a flat column-major sequence; "
                "use DenseTensor.from_numpy for multi-dimensional arrays"
            )
        if vals.size != math.prod(dims):
            raise ShapeError(
                f"got {vals.size} values for dims {dims} "
                f"(expected {math.prod(dims)})"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "values", _freeze(vals))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_numpy(cls, arr) -> "DenseTensor":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(tuple(arr.shape), arr.flatten(order="F"))

    def to_numpy(self) -> np.ndarray:
        """View the values as a numpy array of shape ``dims`` (read-only)."""
        return self.values.reshape(self.dims, order="F")

    def get(self, indices) -> float:
        """Entry at a 1-based multi-index."""
        return float(self.values[long_index(indices, self.dims) - 1])


@dataclass(frozen=True)
class DenseMatrix:
    """A rows x cols real matrix stored as a flat column-major sequence."""

    rows: int
    cols: int
    values: np.ndarray

    def __post_init__(self):
        rows, cols = int(self.rows), int(self.cols)
        if rows < 1 or cols < 1:
            raise ShapeError(f"matrix extents must be >= 1, got {rows}x{cols}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ShapeError("values must be a flat column-major sequence")
        if vals.size != rows * cols:
            raise ShapeError(
                f"got {vals.size} values for a {rows}x{cols} matrix"
            )
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", _freeze(vals))

    @classmethod
    def from_numpy(cls, arr) -> "DenseMatrix":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError(f"expected a 2-d array, got ndim={arr.ndim}")
        return cls(arr.shape[0], arr.shape[1], arr.flatten(order="F"))

    def to_numpy(self) -> np.ndarray:
        return self.values.reshape((self.rows, self.cols), order="F")

    def get(self, i: int, j: int) -> float:
        """Entry at 1-based (row, column)."""
        return float(self.values[long_index((i, j), (self.rows, self.cols)) - 1])


def long_index(indices, dims) -> int:
    """Column-major linearization of a 1-based multi-index.

    Returns ``1 + sum_j (prod_{j'<j} dims[j']) * (indices[j] - 1)``; the
    first index varies fastest.  Bijective between the index box and
    ``1..prod(dims)``.
    """
    indices = tuple(indices)
    dims = tuple(dims)
    if len(indices) != len(dims):
        raise ShapeError(
            f"multi-index length {len(indices)} != rank {len(dims)}"
        )
    linear = 0
    stride = 1
    for k, (i, n) in enumerate(zip(indices, dims)):
        i = int(i)
        if not 1 <= i <= n:
            raise IndexRangeError(
                f"index {i} out of range 1..{n} at position {k + 1}"
            )
        linear += stride * (i - 1)
        stride *= int(n)
    return linear + 1


def multi_index(linear: int, dims) -> tuple:
    """Inverse of :func:`long_index`: 1-based linear index -> 1-based multi-index."""
    dims = tuple(int(n) for n in dims)
    total = math.prod(dims)
    if not 1 <= linear <= total:
        raise IndexRangeError(f"linear index {linear} out of range 1..{total}")
    rem = int(linear) - 1
    out = []
    for n in dims:
        out.append(rem % n + 1)
        rem //= n
    return tuple(out)


def reshape(t: DenseTensor, new_dims) -> DenseTensor:
    """Reinterpret the flat value sequence under new extents.

    Column-major semantics: the values are untouched, only the dimension
    metadata changes.  The products of old and new extents must agree.
    """
    new_dims = tuple(int(n) for n in new_dims)
    if math.prod(new_dims) != t.size:
        raise ShapeError(
            f"cannot reshape {t.dims} (size {t.size}) to {new_dims} "
            f"(size {math.prod(new_dims)})"
        )
    return DenseTensor(new_dims, t.values)


def unfold(t: DenseTensor, k: int) -> DenseMatrix:
    """Matricization grouping the first ``k`` indices into rows.

    The result has shape ``(n_1...n_k) x (n_{k+1}...n_d)``; entry
    (row long index, column long index) equals the tensor entry at the
    corresponding multi-index.  Because the linearization is column-major
    this shares the flat values unchanged.
    """
    d = t.ndim
    if not 1 <= k <= d - 1:
        raise IndexRangeError(f"split position {k} out of range 1..{d - 1}")
    rows = math.prod(t.dims[:k])
    cols = math.prod(t.dims[k:])
    return DenseMatrix(rows, cols, t.values)


def frobenius_norm(t) -> float:
    """Square root of the sum of squared entries.

    Accepts :class:`DenseTensor` or :class:`DenseMatrix`.
    """
    return float(np.linalg.norm(t.values))


def check_finite(t) -> None:
    """Raise :class:`DataError` if any entry is NaN or infinite."""
    if not np.isfinite(t.values if hasattr(t, "values") else t).all():
        raise DataError("input contains non-finite entries")
