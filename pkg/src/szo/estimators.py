"""Update rules turning one bandit interaction into a parameter delta.

Every rule returns a delta that the optimiser applies as ``w <- w - h * delta``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TypeVar

import numpy as np
from scipy.special import softmax

from .objectives import Objective
from .perturbation import Perturbation, RngStream
from .sparse_linalg import SparseVector, axpy
from .structpred import Instance, LinearModel

__all__ = [
    "UpdateRule",
    "BaselineState",
    "Estimate",
    "two_point_estimate",
    "two_point_delta",
    "function_comparison_estimate",
    "function_comparison_delta",
    "baseline_comparison_estimate",
    "baseline_comparison_delta",
    "sfo_estimate",
    "sfo_delta",
]

X = TypeVar("X")


class UpdateRule(enum.Enum):
    TWO_POINT = "two_point"
    FUNCTION_COMPARISON = "function_comparison"
    BASELINE_COMPARISON = "baseline_comparison"
    SFO = "sfo"

    @classmethod
    def parse(cls, name: str) -> UpdateRule:
        """Accept the enum value or the short command-line spelling."""
        key = name.strip().lower().replace("-", "_")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown update rule {name!r}") from None

    @property
    def zeroth_order(self) -> bool:
        return self is not UpdateRule.SFO


_ALIASES = {
    "func_cmp": "function_comparison",
    "baseline": "baseline_comparison",
}


@dataclass(frozen=True)
class BaselineState:
    """Running mean of the perturbed function values seen so far."""

    count: int = 0
    mean: float = 0.0

    def observe(self, value: float) -> BaselineState:
        count = self.count + 1
        return BaselineState(count, self.mean + (value - self.mean) / count)


@dataclass(frozen=True)
class Estimate:
    delta: SparseVector
    observed_loss: float


def _zero(pert: Perturbation) -> SparseVector:
    return SparseVector.zeros(pert.vector.dim)


def _check_mu(mu: float) -> None:
    if not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")


def two_point_estimate(
    F: Objective[X], w: SparseVector, x: X, pert: Perturbation, mu: float
) -> Estimate:
    _check_mu(mu)
    u = pert.vector
    perturbed = F(axpy(mu, u, w), x)
    unperturbed = F(w, x)
    return Estimate(u.scale((perturbed - unperturbed) / mu), perturbed)


def two_point_delta(
    F: Objective[X], w: SparseVector, x: X, pert: Perturbation, mu: float
) -> SparseVector:
    """``s_mu(w) = (F(w + mu u, x) - F(w, x)) / mu * u``."""
    return two_point_estimate(F, w, x, pert, mu).delta


def function_comparison_estimate(
    F: Objective[X], w: SparseVector, x: X, pert: Perturbation, mu: float
) -> Estimate:
    _check_mu(mu)
    u = pert.vector
    perturbed = F(axpy(mu, u, w), x)
    if perturbed < F(w, x):
        return Estimate(u.scale(-1.0 / mu), perturbed)
    return Estimate(_zero(pert), perturbed)


def function_comparison_delta(
    F: Objective[X], w: SparseVector, x: X, pert: Perturbation, mu: float
) -> SparseVector:
    """``-u / mu`` when the perturbed point is strictly better, else zero.

    The optimiser step then moves to ``w + (h / mu) u`` on improvement.
    """
    return function_comparison_estimate(F, w, x, pert, mu).delta


def baseline_comparison_estimate(
    F: Objective[X],
    w: SparseVector,
    x: X,
    pert: Perturbation,
    mu: float,
    state: BaselineState,
) -> tuple[Estimate, BaselineState]:
    _check_mu(mu)
    u = pert.vector
    perturbed = F(axpy(mu, u, w), x)
    state = state.observe(perturbed)
    return Estimate(u.scale((perturbed - state.mean) / mu), perturbed), state


def baseline_comparison_delta(
    F: Objective[X],
    w: SparseVector,
    x: X,
    pert: Perturbation,
    mu: float,
    state: BaselineState,
) -> tuple[SparseVector, BaselineState]:
    """``(F(w + mu u, x) - Y) / mu * u`` where ``Y`` is the running mean of
    perturbed values including the current one."""
    estimate, state = baseline_comparison_estimate(F, w, x, pert, mu, state)
    return estimate.delta, state


def sfo_estimate(model: LinearModel, instance: Instance, rng: RngStream) -> Estimate:
    """Score-function gradient of the expected loss from one sampled output."""
    if not len(instance):
        raise ValueError(f"instance {instance.id!r} has no candidates")
    probs = softmax(model.scores(instance))
    u = float(rng.uniforms(1)[0])
    sampled = min(int(np.searchsorted(np.cumsum(probs), u, side="right")), len(probs) - 1)
    loss = instance.feedback(sampled)
    if loss == 0.0 or len(instance) == 1:
        return Estimate(SparseVector.zeros(instance.dim), loss)
    active = instance.active_set
    phi = np.stack([f.gather(active.indices) for f in instance.features])
    grad = loss * (phi[sampled] - probs @ phi)
    return Estimate(SparseVector._trusted(instance.dim, active.indices, grad), loss)


def sfo_delta(model: LinearModel, instance: Instance, rng: RngStream) -> SparseVector:
    """``Delta(y) (phi(x, y) - E_p[phi])`` for ``y`` sampled from the model."""
    return sfo_estimate(model, instance, rng).delta
