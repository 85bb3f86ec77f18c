from __future__ import annotations

import logging
from collections.abc import Hashable, Iterable, Iterator, Sequence

import numpy as np
import numpy.typing as npt

from ..errors import DimensionMismatch
from ..sparse_linalg import ActiveSet, SparseVector, dot

__all__ = ["FeatureIndex", "LinearModel", "Instance"]

log = logging.getLogger(__name__)


class FeatureIndex:
    """A registry mapping feature names to coordinate indices.

    The registry is built by :meth:`add` and frozen before it is used for
    scoring. ``FeatureIndex.anonymous(n)`` is a frozen registry of ``n``
    unnamed coordinates.
    """

    __slots__ = ("_index", "_names", "_size", "_frozen")

    def __init__(self, names: Iterable[str] = ()) -> None:
        self._index: dict[str, int] = {}
        self._names: list[str] = []
        self._size = 0
        self._frozen = False
        for name in names:
            self.add(name)

    @classmethod
    def anonymous(cls, size: int) -> FeatureIndex:
        if size <= 0:
            raise ValueError(f"feature space size must be positive, got {size}")
        self = cls()
        self._size = size
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    @property
    def size(self) -> int:
        return self._size

    def __len__(self) -> int:
        return self._size

    def freeze(self) -> FeatureIndex:
        self._frozen = True
        return self

    def add(self, name: str) -> int:
        index = self._index.get(name)
        if index is None:
            if self._frozen:
                raise RuntimeError("cannot add features to a frozen registry")
            index = self._index[name] = self._size
            self._names.append(name)
            self._size += 1
        return index

    def get(self, name: str) -> int | None:
        return self._index.get(name)

    def name(self, index: int) -> str:
        if not 0 <= index < self._size:
            raise IndexError(index)
        if index < len(self._names):
            return self._names[index]
        return f"f{index}"

    def names(self) -> Iterator[str]:
        return (self.name(i) for i in range(self._size))


class LinearModel:
    """Weights over a frozen feature space scoring outputs by ``w . phi``."""

    __slots__ = ("weights", "feature_space")

    def __init__(self, weights: SparseVector, feature_space: FeatureIndex) -> None:
        if weights.dim != feature_space.size:
            raise DimensionMismatch(
                f"weights have dim {weights.dim} but the feature space has "
                f"{feature_space.size} features"
            )
        self.weights = weights
        self.feature_space = feature_space

    @classmethod
    def zeros(cls, feature_space: FeatureIndex) -> LinearModel:
        return cls(SparseVector.zeros(feature_space.size), feature_space)

    def score(self, features: SparseVector) -> float:
        return dot(self.weights, features)

    def scores(self, instance: Instance) -> npt.NDArray[np.float64]:
        return np.array([self.score(phi) for phi in instance.features])

    def predict(self, instance: Instance) -> int:
        """Index of the best scoring candidate; the lowest index wins ties."""
        if not instance.features:
            raise ValueError(f"instance {instance.id!r} has no candidates")
        return int(np.argmax(self.scores(instance)))


class Instance:
    """One bandit example: candidate outputs with their feature vectors.

    The loss of each candidate is hidden. It is revealed one candidate at a
    time through :meth:`feedback`, which plays the part of the user who scores
    a single prediction.
    """

    __slots__ = ("id", "outputs", "features", "active_set", "_losses")

    id: Hashable
    outputs: tuple[Hashable, ...]
    features: tuple[SparseVector, ...]
    active_set: ActiveSet

    def __init__(
        self,
        id: Hashable,
        candidates: Sequence[tuple[Hashable, SparseVector, float]],
    ) -> None:
        if not candidates:
            raise ValueError(f"instance {id!r} has no candidates")
        dim = candidates[0][1].dim
        losses = []
        for output, phi, loss in candidates:
            if phi.dim != dim:
                raise DimensionMismatch(
                    f"instance {id!r}: candidate feature dims differ ({phi.dim} != {dim})"
                )
            if not 0.0 <= loss <= 1.0:
                log.warning(
                    "instance %r: loss %r of candidate %r clamped to [0, 1]",
                    id,
                    loss,
                    output,
                )
                loss = min(1.0, max(0.0, loss))
            losses.append(float(loss))
        self.id = id
        self.outputs = tuple(c[0] for c in candidates)
        self.features = tuple(c[1] for c in candidates)
        self.active_set = ActiveSet.union_of(dim, self.features)
        self._losses = tuple(losses)

    @property
    def dim(self) -> int:
        return self.features[0].dim

    def __len__(self) -> int:
        return len(self.features)

    def feedback(self, index: int) -> float:
        """The task loss of candidate ``index``, in [0, 1]."""
        return self._losses[index]

    def materialize(self, weights: SparseVector) -> Instance:
        return self

    def __repr__(self) -> str:
        return f"Instance(id={self.id!r}, candidates={len(self)}, nbar={self.active_set.size})"
