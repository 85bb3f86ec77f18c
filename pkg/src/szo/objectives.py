"""Stochastic objectives ``F(w, x)`` and their Gaussian smoothing.

Two families are provided. Structured prediction criteria evaluate a linear
model on a bandit :class:`~szo.structpred.Instance`: the task loss of the MAP
prediction, or its annealed expectation under a softmax of temperature gamma.
Synthetic functions are Lipschitz test problems; ``x`` indexes one of a finite
set of samples, each reading ``n_bar`` coordinates of its own against its own
offsets.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal, Protocol, TypeVar

import numpy as np
import numpy.typing as npt
from scipy.special import ndtr, softmax

from .perturbation import RngStream, sample_gaussian_batch, sample_sparse_gaussian
from .sparse_linalg import ActiveSet, SparseVector, axpy
from .structpred import FeatureIndex, Instance, LinearModel

__all__ = [
    "Objective",
    "ObjectiveSpec",
    "MapCriterion",
    "AnnealedCriterion",
    "SyntheticFunction",
    "MCEstimate",
    "map_loss",
    "annealed_loss",
    "smoothed_estimate",
    "smoothed_value",
    "make_synthetic",
    "make_objective",
    "ZOO",
]

log = logging.getLogger(__name__)

X = TypeVar("X", contravariant=True)
FloatArray = npt.NDArray[np.float64]
IndexArray = npt.NDArray[np.int64]

SYNTHETIC_STREAM = 0x5EED


class Objective(Protocol[X]):
    """A stochastic function ``F(w, x)`` over an ``n``-dimensional space."""

    @property
    def dim(self) -> int: ...

    def __call__(self, w: SparseVector, x: X) -> float: ...

    def active_set(self, x: X) -> ActiveSet:
        """Coordinates that can influence ``F(., x)``."""
        ...


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: Literal["map_loss", "annealed_loss", "synthetic"] = "map_loss"
    gamma: float = math.inf
    synthetic_id: str = "l1_well"
    n: int = 32
    n_bar: int = 8
    seed: int = 0
    #: coordinates the samples draw their active sets from; None picks the default
    support: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("map_loss", "annealed_loss", "synthetic"):
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if not self.gamma >= 0.0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")

    def synthetic(self) -> SyntheticFunction:
        return make_synthetic(
            self.synthetic_id, self.n, self.n_bar, self.seed, support=self.support
        )


def map_loss(model: LinearModel, instance: Instance) -> float:
    """Task loss of the MAP prediction."""
    return instance.feedback(model.predict(instance))


def annealed_loss(model: LinearModel, instance: Instance, gamma: float) -> float:
    """Expected task loss under ``p(y) ∝ exp(gamma * w . phi(x, y))``."""
    if not gamma >= 0.0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    if not len(instance):
        raise ValueError(f"instance {instance.id!r} has no candidates")
    if math.isinf(gamma):
        return map_loss(model, instance)
    losses = np.array([instance.feedback(i) for i in range(len(instance))])
    if gamma == 0.0:
        weights = np.full(len(losses), 1.0 / len(losses))
    else:
        weights = softmax(gamma * model.scores(instance))
    value = float(weights @ losses)
    return min(float(losses.max()), max(float(losses.min()), value))


class MapCriterion:
    """``F(w, x) = Delta(argmax_y w . phi(x, y))``."""

    def __init__(self, feature_space: FeatureIndex) -> None:
        self.feature_space = feature_space

    @property
    def dim(self) -> int:
        return self.feature_space.size

    def __call__(self, w: SparseVector, x: Instance) -> float:
        return map_loss(LinearModel(w, self.feature_space), x)

    def active_set(self, x: Instance) -> ActiveSet:
        return x.active_set


class AnnealedCriterion(MapCriterion):
    """The annealed expected loss of temperature ``gamma``."""

    def __init__(self, feature_space: FeatureIndex, gamma: float) -> None:
        super().__init__(feature_space)
        if not gamma >= 0.0:
            raise ValueError(f"gamma must be non-negative, got {gamma}")
        self.gamma = gamma

    def __call__(self, w: SparseVector, x: Instance) -> float:
        return annealed_loss(LinearModel(w, self.feature_space), x, self.gamma)


Evaluator = Callable[[FloatArray, FloatArray], FloatArray]


def _l1_well(z: FloatArray, c: FloatArray) -> FloatArray:
    return np.abs(z - c).sum(axis=-1)  # type: ignore[no-any-return]


def _smooth_bowl(z: FloatArray, c: FloatArray) -> FloatArray:
    return np.sqrt(1.0 + np.square(z - c).sum(axis=-1)) - 1.0  # type: ignore[no-any-return]


def _nonconvex_ripple(z: FloatArray, c: FloatArray) -> FloatArray:
    return np.abs(z - c).sum(axis=-1) + 0.1 * np.sin(z).sum(axis=-1)  # type: ignore[no-any-return]


@dataclass(frozen=True, eq=False)
class SyntheticFunction:
    """``F(w, x) = g(w restricted to A_x, c_x)``.

    Every sample ``x`` reads its own ``n_bar`` coordinates ``A_x``, the row
    ``coordinates[x]``; coordinates read by no sample are inert. Arrays over
    the union of all ``A_x`` are indexed by :attr:`support` position.
    ``lipschitz`` bounds ``|F(w, x) - F(w', x)| / ||w - w'||`` and
    ``f_star`` bounds ``F`` from below, for every sample ``x``.
    """

    name: str
    dim: int
    coordinates: IndexArray = field(repr=False)
    lipschitz: float
    f_star: float
    offsets: FloatArray = field(repr=False)
    evaluator: Evaluator = field(repr=False)

    def __post_init__(self) -> None:
        if self.coordinates.ndim != 2 or self.offsets.shape != self.coordinates.shape:
            raise ValueError("coordinates and offsets must have shape (num_samples, n_bar)")

    @property
    def n_bar(self) -> int:
        return int(self.coordinates.shape[1])

    @property
    def num_samples(self) -> int:
        return int(self.coordinates.shape[0])

    @cached_property
    def support(self) -> ActiveSet:
        """Every coordinate some sample reads."""
        return ActiveSet(self.dim, self.coordinates)

    @cached_property
    def positions(self) -> IndexArray:
        """``coordinates`` as positions in ``support``."""
        return np.searchsorted(self.support.indices, self.coordinates)

    @cached_property
    def _active_sets(self) -> list[ActiveSet]:
        return [ActiveSet(self.dim, row) for row in self.coordinates]

    def active_set(self, x: int) -> ActiveSet:
        return self._active_sets[x]

    def restrict(self, w: SparseVector) -> FloatArray:
        """The support coordinates of ``w`` as a dense array."""
        return w.gather(self.support.indices)

    def local(self, z: FloatArray, x: int | IndexArray) -> FloatArray:
        """The values of sample ``x`` out of support values ``z``.

        ``z`` is a single support vector, or has one row per entry of ``x``.
        """
        if z.ndim == 1:
            return z[self.positions[x]]  # type: ignore[no-any-return]
        return np.take_along_axis(z, self.positions[x], axis=1)

    def scatter(self, rows: FloatArray, x: IndexArray) -> FloatArray:
        """Rows given on the coordinates of each sample, laid out over the support."""
        out = np.zeros((rows.shape[0], self.support.size))
        np.put_along_axis(out, self.positions[x], rows, axis=1)
        return out

    def batch_values(self, points: FloatArray, x: int | IndexArray) -> FloatArray:
        """Values at the rows of ``points``, each given on the coordinates of
        its sample."""
        return self.evaluator(points, self.offsets[x])

    def __call__(self, w: SparseVector, x: int) -> float:
        z = w.gather(self.coordinates[x])
        return float(self.evaluator(z[None, :], self.offsets[x])[0])

    def mean_value(self, w: SparseVector) -> float:
        """``f(w)``, the average of ``F(w, x)`` over all samples."""
        z = self.restrict(w)[self.positions]
        return float(np.mean(self.evaluator(z, self.offsets)))

    def smoothed_gradient(self, w: SparseVector, mu: float) -> FloatArray:
        """Exact gradient of the smoothed ``f`` over the support.

        Only available for ``l1_well``, where each coordinate of ``A_x``
        contributes ``E sign(t + mu u) = 2 Phi(t / mu) - 1``.
        """
        if self.evaluator is not _l1_well:
            raise NotImplementedError(f"no closed-form gradient for {self.name}")
        t = self.restrict(w)[self.positions] - self.offsets
        grad = np.zeros(self.support.size)
        np.add.at(grad, self.positions, 2.0 * ndtr(t / mu) - 1.0)
        return grad / self.num_samples  # type: ignore[no-any-return]


ZOO = ("l1_well", "smooth_bowl", "nonconvex_ripple")
SUPPORT_FACTOR = 4


def make_synthetic(
    id: str,
    n: int,
    n_bar: int,
    seed: int,
    num_samples: int = 64,
    noise: float = 0.1,
    support: int | None = None,
) -> SyntheticFunction:
    """Build a member of the synthetic zoo.

    ``l1_well``
        ``||w_A - c_x||_1``; nonsmooth, ``L0 = sqrt(n_bar)``, ``f* = 0``.
    ``smooth_bowl``
        ``sqrt(1 + ||w_A - c_x||^2) - 1``; smooth, ``L0 = 1``, ``f* = 0``.
    ``nonconvex_ripple``
        ``||w_A - c_x||_1 + 0.1 sum_i sin(w_i)``; ``L0 = 1.1 sqrt(n_bar)``,
        ``f* = -0.1 n_bar``.

    ``support`` coordinates are scattered over the ``n``, by default
    ``min(n, 4 n_bar)`` of them, and every sample reads ``n_bar`` of those,
    like the active features of a sparse input. With ``support == n_bar``
    all samples share one active set. The offsets are ``c_x = c + noise * e_x``
    with ``c`` and ``e_x`` standard normal.
    """
    if not 1 <= n_bar <= n:
        raise ValueError(f"need 1 <= n_bar <= n, got n_bar={n_bar}, n={n}")
    if support is None:
        support = min(n, SUPPORT_FACTOR * n_bar)
    if not n_bar <= support <= n:
        raise ValueError(
            f"need n_bar <= support <= n, got support={support}, n_bar={n_bar}, n={n}"
        )
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    rng = RngStream(seed, SYNTHETIC_STREAM)
    scattered = np.sort(np.argsort(rng.uniforms(n))[:support])
    picks = np.sort(np.argsort(rng.uniforms((num_samples, support)), axis=1)[:, :n_bar], axis=1)
    center = rng.normals(support)
    offsets = center[picks] + noise * rng.normals((num_samples, n_bar))
    coordinates = scattered[picks]
    root = math.sqrt(n_bar)
    log.debug("%s: n=%d n_bar=%d over %d support coordinates", id, n, n_bar, support)
    if id == "l1_well":
        return SyntheticFunction(id, n, coordinates, root, 0.0, offsets, _l1_well)
    if id == "smooth_bowl":
        return SyntheticFunction(id, n, coordinates, 1.0, 0.0, offsets, _smooth_bowl)
    if id == "nonconvex_ripple":
        return SyntheticFunction(
            id, n, coordinates, 1.1 * root, -0.1 * n_bar, offsets, _nonconvex_ripple
        )
    raise ValueError(f"unknown synthetic function {id!r}, expected one of {ZOO}")


def make_objective(
    spec: ObjectiveSpec, feature_space: FeatureIndex | None = None
) -> Objective[Instance] | SyntheticFunction:
    if spec.kind == "synthetic":
        return spec.synthetic()
    if feature_space is None:
        raise ValueError(f"{spec.kind} needs a feature space")
    if spec.kind == "annealed_loss":
        return AnnealedCriterion(feature_space, spec.gamma)
    return MapCriterion(feature_space)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    samples: int


def _mean_stderr(values: FloatArray) -> MCEstimate:
    # centring on the first value keeps constant inputs exact
    base = float(values[0])
    centred = values - base
    stderr = float(np.std(values, ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return MCEstimate(base + float(np.mean(centred)), stderr, int(values.size))


def smoothed_estimate(
    F: Objective[X] | SyntheticFunction,
    w: SparseVector,
    x: X,
    mu: float,
    active: ActiveSet,
    num_samples: int,
    rng: RngStream,
) -> MCEstimate:
    """Monte Carlo estimate of ``f_mu(w) = E_u F(w + mu u, x)``."""
    if not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    if isinstance(F, SyntheticFunction) and np.array_equal(
        active.indices, F.active_set(x).indices  # type: ignore[arg-type]
    ):
        u = sample_gaussian_batch(active, num_samples, rng)
        z = w.gather(active.indices)
        values = F.batch_values(z[None, :] + mu * u, x)  # type: ignore[arg-type]
    else:
        values = np.empty(num_samples)
        for j in range(num_samples):
            u_vec = sample_sparse_gaussian(active, rng).vector
            values[j] = F(axpy(mu, u_vec, w), x)  # type: ignore[arg-type]
    return _mean_stderr(values)


def smoothed_value(
    F: Objective[X] | SyntheticFunction,
    w: SparseVector,
    x: X,
    mu: float,
    active: ActiveSet,
    num_samples: int,
    rng: RngStream,
) -> float:
    return smoothed_estimate(F, w, x, mu, active, num_samples, rng).mean
