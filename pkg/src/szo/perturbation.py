"""Seedable sparse Gaussian perturbations.

Random numbers come from numpy's counter-based Philox generator keyed by
``(seed, stream_id)``. Every draw made through :class:`RngStream` consumes
exactly one counter block, so the k-th draw of a stream can be reproduced
without replaying the first k-1. Normal variates are produced by the inverse
normal CDF, one uniform per normal, so a block always yields the same values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.special import ndtri

from .sparse_linalg import ActiveSet, SparseVector, l0_norm

__all__ = [
    "RngStream",
    "Perturbation",
    "sample_sparse_gaussian",
    "sample_gaussian_batch",
    "moment_estimate",
    "norm_powers",
    "MIN_MOMENT_SAMPLES",
]

_U64 = 2**64
_BATCH_ELEMENTS = 1 << 21
MIN_MOMENT_SAMPLES = 10_000


class RngStream:
    """A single-owner stream of random blocks keyed by (seed, stream_id).

    >>> rng = RngStream(seed=1, stream_id=0)
    >>> a = rng.normals(3)
    >>> RngStream(seed=1, stream_id=0).normals(3).tolist() == a.tolist()
    True
    """

    __slots__ = ("_seed", "_stream_id", "_counter")

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0) -> None:
        if not 0 <= seed < _U64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not 0 <= stream_id < _U64:
            raise ValueError(
                f"stream_id must be a 64-bit unsigned integer, got {stream_id}"
            )
        if counter < 0:
            raise ValueError("counter must be non-negative")
        self._seed = seed
        self._stream_id = stream_id
        self._counter = counter

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def stream_id(self) -> int:
        return self._stream_id

    @property
    def counter(self) -> int:
        return self._counter

    def copy(self) -> RngStream:
        return RngStream(self._seed, self._stream_id, self._counter)

    def generator_at(self, counter: int) -> np.random.Generator:
        """A numpy Generator positioned at the start of block ``counter``."""
        bit_generator = np.random.Philox(
            key=(self._stream_id << 64) | self._seed, counter=counter << 128
        )
        return np.random.Generator(bit_generator)

    def _next(self) -> np.random.Generator:
        generator = self.generator_at(self._counter)
        self._counter += 1
        return generator

    def generator(self) -> np.random.Generator:
        """Consume one block and return a Generator over it."""
        return self._next()

    def uniforms(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        """Uniform variates in the open interval (0, 1) from one block."""
        raw = self._next().bit_generator.random_raw(size)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53  # type: ignore[no-any-return]

    def normals(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
        """Standard normal variates from one block by inverse CDF."""
        return ndtri(self.uniforms(size))  # type: ignore[no-any-return]

    def __repr__(self) -> str:
        return (
            f"RngStream(seed={self._seed}, stream_id={self._stream_id}, "
            f"counter={self._counter})"
        )


@dataclass(frozen=True)
class Perturbation:
    vector: SparseVector
    active: ActiveSet
    effective_dim: int


def sample_sparse_gaussian(active: ActiveSet, rng: RngStream) -> Perturbation:
    """Draw a standard normal value for each active coordinate, in index order.

    Coordinates outside ``active`` are exactly zero. One block of ``rng`` is
    consumed even when ``active`` is empty.
    """
    draws = rng.normals(active.size)
    vector = SparseVector._trusted(active.dim, active.indices, draws)
    return Perturbation(vector, active, l0_norm(vector))


def sample_gaussian_batch(
    active: ActiveSet, num_samples: int, rng: RngStream
) -> npt.NDArray[np.float64]:
    """``num_samples`` perturbations restricted to ``active`` as a dense
    ``(num_samples, |active|)`` block."""
    return rng.normals((num_samples, active.size))


def norm_powers(
    active: ActiveSet, p: int, num_samples: int, rng: RngStream
) -> npt.NDArray[np.float64]:
    """Per-sample ``||u||^p`` for ``num_samples`` sparse perturbations."""
    if p not in (2, 4):
        raise ValueError(f"unsupported moment order p={p}, expected 2 or 4")
    if active.size == 0:
        return np.zeros(num_samples)
    batch = max(1, _BATCH_ELEMENTS // active.size)
    out = np.empty(num_samples)
    for start in range(0, num_samples, batch):
        stop = min(num_samples, start + batch)
        block = sample_gaussian_batch(active, stop - start, rng)
        sq = np.einsum("ij,ij->i", block, block)
        out[start:stop] = sq if p == 2 else sq * sq
    return out


def moment_estimate(
    active: ActiveSet, p: int, num_samples: int, rng: RngStream
) -> float:
    """Monte Carlo estimate of ``E ||u||^p`` over sparse perturbations."""
    if num_samples < MIN_MOMENT_SAMPLES:
        raise ValueError(
            f"num_samples must be at least {MIN_MOMENT_SAMPLES}, got {num_samples}"
        )
    return float(np.mean(norm_powers(active, p, num_samples, rng)))
