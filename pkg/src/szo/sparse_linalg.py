"""Sparse vectors over an n-dimensional real space.

A :class:`SparseVector` stores its nonzero coordinates as two parallel numpy
arrays sorted by index. Instances are immutable; every operation returns a new
vector in canonical form, meaning no stored value is exactly zero.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping

import numpy as np
import numpy.typing as npt

from .errors import DimensionMismatch

__all__ = [
    "SparseVector",
    "ActiveSet",
    "dot",
    "axpy",
    "l0_norm",
    "l2_norm_sq",
    "format_vectors",
    "parse_vectors",
]

IndexArray = npt.NDArray[np.int64]
ValueArray = npt.NDArray[np.float64]

MAX_DIM = 2**31


def _check_dim(dim: int) -> int:
    dim = int(dim)
    if not 0 < dim <= MAX_DIM:
        raise ValueError(f"dim must be in (0, 2**31], got {dim}")
    return dim


def _frozen(array: npt.NDArray[np.generic]) -> npt.NDArray[np.generic]:
    array.flags.writeable = False
    return array


class SparseVector:
    """An immutable sparse vector in canonical form."""

    __slots__ = ("_dim", "_indices", "_values")

    _dim: int
    _indices: IndexArray
    _values: ValueArray

    def __init__(
        self,
        dim: int,
        indices: Iterable[int] | npt.ArrayLike = (),
        values: Iterable[float] | npt.ArrayLike = (),
    ) -> None:
        dim = _check_dim(dim)
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        val = np.asarray(values, dtype=np.float64).reshape(-1)
        if idx.shape != val.shape:
            raise ValueError("indices and values must have the same length")
        if idx.size:
            if idx.min() < 0 or idx.max() >= dim:
                raise IndexError(f"index out of range for dim={dim}")
            order = np.argsort(idx, kind="stable")
            idx = idx[order]
            val = val[order]
            if np.any(idx[1:] == idx[:-1]):
                raise ValueError("duplicate index in sparse vector")
            keep = val != 0.0
            idx = idx[keep]
            val = val[keep]
        self._set(dim, idx, val)

    def _set(self, dim: int, indices: IndexArray, values: ValueArray) -> None:
        self._dim = dim
        self._indices = _frozen(np.ascontiguousarray(indices, dtype=np.int64))  # type: ignore[assignment]
        self._values = _frozen(np.ascontiguousarray(values, dtype=np.float64))  # type: ignore[assignment]

    @classmethod
    def _trusted(
        cls, dim: int, indices: IndexArray, values: ValueArray
    ) -> SparseVector:
        """Build from sorted unique indices, dropping exact zeros."""
        keep = values != 0.0
        self = cls.__new__(cls)
        self._set(dim, indices[keep], values[keep])
        return self

    @classmethod
    def zeros(cls, dim: int) -> SparseVector:
        return cls(dim)

    @classmethod
    def from_dict(cls, dim: int, entries: Mapping[int, float]) -> SparseVector:
        return cls(dim, list(entries.keys()), list(entries.values()))

    @classmethod
    def from_dense(cls, array: npt.ArrayLike) -> SparseVector:
        dense = np.asarray(array, dtype=np.float64).reshape(-1)
        (nonzero,) = np.nonzero(dense)
        return cls._trusted(dense.size, nonzero.astype(np.int64), dense[nonzero])

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def indices(self) -> IndexArray:
        return self._indices

    @property
    def values(self) -> ValueArray:
        return self._values

    def to_dict(self) -> dict[int, float]:
        return dict(zip(self._indices.tolist(), self._values.tolist()))

    def to_dense(self) -> ValueArray:
        dense = np.zeros(self._dim, dtype=np.float64)
        dense[self._indices] = self._values
        return dense

    def items(self) -> Iterator[tuple[int, float]]:
        return zip(self._indices.tolist(), self._values.tolist())

    def __getitem__(self, index: int) -> float:
        if not 0 <= index < self._dim:
            raise IndexError(index)
        pos = int(np.searchsorted(self._indices, index))
        if pos < self._indices.size and self._indices[pos] == index:
            return float(self._values[pos])
        return 0.0

    def scale(self, alpha: float) -> SparseVector:
        return SparseVector._trusted(self._dim, self._indices, self._values * alpha)

    def __neg__(self) -> SparseVector:
        return self.scale(-1.0)

    def restrict(self, active: ActiveSet) -> SparseVector:
        """The restriction of this vector to the coordinates in ``active``."""
        _same_dim(self._dim, active.dim)
        mask = np.isin(self._indices, active.indices, assume_unique=True)
        return SparseVector._trusted(
            self._dim, self._indices[mask], self._values[mask]
        )

    def gather(self, indices: IndexArray) -> ValueArray:
        """Dense values of this vector at the given sorted coordinates."""
        out = np.zeros(len(indices), dtype=np.float64)
        _, mine, theirs = np.intersect1d(
            self._indices, indices, assume_unique=True, return_indices=True
        )
        out[theirs] = self._values[mine]
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (
            self._dim == other._dim
            and np.array_equal(self._indices, other._indices)
            and np.array_equal(self._values, other._values)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"SparseVector(dim={self._dim}, {self.to_dict()!r})"


class ActiveSet:
    """A sorted set of coordinate indices of an n-dimensional space."""

    __slots__ = ("_dim", "_indices")

    _dim: int
    _indices: IndexArray

    def __init__(self, dim: int, indices: Iterable[int] | npt.ArrayLike = ()) -> None:
        dim = _check_dim(dim)
        idx = np.unique(np.asarray(indices, dtype=np.int64).reshape(-1))
        if idx.size and (idx[0] < 0 or idx[-1] >= dim):
            raise IndexError(f"index out of range for dim={dim}")
        self._dim = dim
        self._indices = _frozen(idx)  # type: ignore[assignment]

    @classmethod
    def _trusted(cls, dim: int, indices: IndexArray) -> ActiveSet:
        self = cls.__new__(cls)
        self._dim = dim
        self._indices = indices
        return self

    @classmethod
    def full(cls, dim: int) -> ActiveSet:
        dim = _check_dim(dim)
        return cls._trusted(dim, _frozen(np.arange(dim, dtype=np.int64)))  # type: ignore[arg-type]

    @classmethod
    def union_of(cls, dim: int, vectors: Iterable[SparseVector]) -> ActiveSet:
        """The union of the supports of ``vectors``."""
        arrays = []
        for vector in vectors:
            _same_dim(dim, vector.dim)
            arrays.append(vector.indices)
        if not arrays:
            return cls(dim)
        return cls._trusted(dim, _frozen(np.unique(np.concatenate(arrays))))  # type: ignore[arg-type]

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def indices(self) -> IndexArray:
        return self._indices

    @property
    def size(self) -> int:
        return int(self._indices.size)

    def __len__(self) -> int:
        return self.size

    def __iter__(self) -> Iterator[int]:
        return iter(self._indices.tolist())

    def __contains__(self, index: object) -> bool:
        if not isinstance(index, (int, np.integer)):
            return False
        pos = int(np.searchsorted(self._indices, index))
        return pos < self._indices.size and int(self._indices[pos]) == index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ActiveSet):
            return NotImplemented
        return self._dim == other._dim and np.array_equal(
            self._indices, other._indices
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"ActiveSet(dim={self._dim}, size={self.size})"


def _same_dim(a: int, b: int) -> None:
    if a != b:
        raise DimensionMismatch(f"dimension mismatch: {a} != {b}")


def dot(a: SparseVector, b: SparseVector) -> float:
    """Inner product of two sparse vectors by sorted merge."""
    _same_dim(a.dim, b.dim)
    if not a.indices.size or not b.indices.size:
        return 0.0
    _, ia, ib = np.intersect1d(
        a.indices, b.indices, assume_unique=True, return_indices=True
    )
    # elementwise products are symmetric so the sum is too
    return float(np.sum(a.values[ia] * b.values[ib]))


def axpy(alpha: float, x: SparseVector, y: SparseVector) -> SparseVector:
    """Return ``y + alpha * x``."""
    _same_dim(x.dim, y.dim)
    if alpha == 0.0 or not x.indices.size:
        return y
    union = np.union1d(x.indices, y.indices)
    values = np.zeros(union.size, dtype=np.float64)
    values[np.searchsorted(union, y.indices)] = y.values
    values[np.searchsorted(union, x.indices)] += alpha * x.values
    return SparseVector._trusted(y.dim, union, values)


def l0_norm(v: SparseVector) -> int:
    return int(v.indices.size)


def l2_norm_sq(v: SparseVector) -> float:
    return float(np.dot(v.values, v.values))


def format_vectors(vectors: Iterable[SparseVector], dim: int) -> str:
    """Serialise vectors as a ``dim=<n>`` header and one ``index:value`` line each.

    Values are written with :func:`repr`, which round-trips exactly.
    """
    lines = [f"dim={dim}"]
    for vector in vectors:
        _same_dim(dim, vector.dim)
        lines.append(" ".join(f"{i}:{v!r}" for i, v in vector.items()))
    return "\n".join(lines) + "\n"


def parse_vectors(text: str) -> list[SparseVector]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise ValueError("missing dim=<n> header")
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise ValueError(f"bad header {lines[0]!r}") from None
    vectors = []
    for line_no, line in enumerate(lines[1:], 2):
        indices: list[int] = []
        values: list[float] = []
        for pair in line.split():
            index, sep, value = pair.partition(":")
            if not sep:
                raise ValueError(f"line {line_no}: expected index:value, got {pair!r}")
            indices.append(int(index))
            values.append(float(value))
        vectors.append(SparseVector(dim, indices, values))
    return vectors
