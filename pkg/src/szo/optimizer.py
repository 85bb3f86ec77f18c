"""The sparse zeroth-order training loop.

Each step draws the next example, builds the set of coordinates to perturb
(its active features, or every coordinate), samples a Gaussian perturbation on
that set and applies ``w <- w - h * delta`` with the delta of the configured
update rule. The perturbed loss of every step is accumulated into the average
cumulative loss, and the unperturbed iterate is periodically scored on
development data to pick the returned checkpoint.
"""

from __future__ import annotations

import enum
import functools
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError, NumericalError
from .estimators import (
    BaselineState,
    Estimate,
    UpdateRule,
    baseline_comparison_estimate,
    function_comparison_estimate,
    sfo_estimate,
    two_point_estimate,
)
from .objectives import MapCriterion, Objective, ObjectiveSpec
from .perturbation import RngStream, sample_sparse_gaussian
from .sparse_linalg import ActiveSet, SparseVector, axpy, l2_norm_sq
from .structpred import Instance, LinearModel

__all__ = [
    "PerturbationMode",
    "RunConfig",
    "StepInfo",
    "OptimizerState",
    "LogRow",
    "RunLog",
    "RunTrace",
    "Checkpoint",
    "DevMetric",
    "RunResult",
    "mean_loss_metric",
    "initial_state",
    "step",
    "run",
    "avg_cumulative_loss",
    "PERTURBATION_STREAM",
    "SFO_STREAM",
    "DATA_STREAM",
    "CHECK_STREAM",
]

log = logging.getLogger(__name__)

PERTURBATION_STREAM = 1
SFO_STREAM = 2
DATA_STREAM = 3
CHECK_STREAM = 4


class PerturbationMode(enum.Enum):
    ALL = "all"
    SPARSE = "sparse"


@dataclass(frozen=True)
class RunConfig:
    rule: UpdateRule = UpdateRule.TWO_POINT
    mu: float = 0.01
    h: float = 0.01
    max_iters: int = 1000
    eval_every: int = 1000
    seed: int = 0
    mode: PerturbationMode = PerturbationMode.SPARSE
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec)
    #: keep every trace_every-th iterate for bound checks; 0 keeps none
    trace_every: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.h) and self.h > 0.0):
            raise ConfigError(f"h must be positive, got {self.h}")
        if not (math.isfinite(self.mu) and self.mu > 0.0):
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be at least 1, got {self.eval_every}")
        if self.trace_every < 0:
            raise ConfigError("trace_every must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def learning_rate(self, k: int) -> float:
        """Step size of step ``k``. The schedule is constant."""
        return self.h


@dataclass(frozen=True)
class StepInfo:
    loss: float
    nbar: int
    h: float
    delta_norm_sq: float


@dataclass(frozen=True)
class OptimizerState:
    w: SparseVector
    k: int
    baseline: BaselineState
    cumulative_loss: float
    perturbation_rng: RngStream
    sfo_rng: RngStream
    last: StepInfo | None = None


def initial_state(
    config: RunConfig, dim: int, w0: SparseVector | None = None
) -> OptimizerState:
    if w0 is None:
        w0 = SparseVector.zeros(dim)
    elif w0.dim != dim:
        raise ConfigError(f"warm start has dim {w0.dim}, expected {dim}")
    return OptimizerState(
        w=w0,
        k=0,
        baseline=BaselineState(),
        cumulative_loss=0.0,
        perturbation_rng=RngStream(config.seed, PERTURBATION_STREAM),
        sfo_rng=RngStream(config.seed, SFO_STREAM),
    )


@functools.lru_cache(maxsize=8)
def _full_set(dim: int) -> ActiveSet:
    return ActiveSet.full(dim)


def _check_finite(estimate: Estimate, state: OptimizerState, config: RunConfig) -> None:
    if math.isfinite(estimate.observed_loss) and np.all(
        np.isfinite(estimate.delta.values)
    ):
        return
    raise NumericalError(
        f"non-finite update at step {state.k + 1} "
        f"(rule={config.rule.value}, h={config.h}, mu={config.mu}, "
        f"loss={estimate.observed_loss}, |w|^2={l2_norm_sq(state.w)})"
    )


def step(
    state: OptimizerState,
    x: Any,
    config: RunConfig,
    objective: Objective[Any],
) -> OptimizerState:
    """One update on the example ``x``, already materialised at ``state.w``."""
    if state.k >= config.max_iters:
        raise ValueError(f"run already finished {config.max_iters} iterations")
    h = config.learning_rate(state.k)
    baseline = state.baseline
    perturbation_rng = state.perturbation_rng.copy()
    sfo_rng = state.sfo_rng.copy()
    if config.rule is UpdateRule.SFO:
        if not isinstance(objective, MapCriterion) or not isinstance(x, Instance):
            raise ConfigError("the sfo rule needs a structured prediction task")
        estimate = sfo_estimate(LinearModel(state.w, objective.feature_space), x, sfo_rng)
        nbar = x.active_set.size
    else:
        if config.mode is PerturbationMode.SPARSE:
            active = objective.active_set(x)
        else:
            active = _full_set(objective.dim)
        pert = sample_sparse_gaussian(active, perturbation_rng)
        nbar = pert.effective_dim
        if config.rule is UpdateRule.TWO_POINT:
            estimate = two_point_estimate(objective, state.w, x, pert, config.mu)
        elif config.rule is UpdateRule.FUNCTION_COMPARISON:
            estimate = function_comparison_estimate(
                objective, state.w, x, pert, config.mu
            )
        else:
            estimate, baseline = baseline_comparison_estimate(
                objective, state.w, x, pert, config.mu, baseline
            )
    _check_finite(estimate, state, config)
    info = StepInfo(estimate.observed_loss, nbar, h, l2_norm_sq(estimate.delta))
    log.debug(
        "step %d: loss=%.4g nbar=%d |delta|^2=%.4g",
        state.k + 1,
        info.loss,
        info.nbar,
        info.delta_norm_sq,
    )
    return OptimizerState(
        w=axpy(-h, estimate.delta, state.w),
        k=state.k + 1,
        baseline=baseline,
        cumulative_loss=state.cumulative_loss + estimate.observed_loss,
        perturbation_rng=perturbation_rng,
        sfo_rng=sfo_rng,
        last=info,
    )


@dataclass(frozen=True)
class LogRow:
    iter: int
    loss: float
    avg_cum_loss: float
    nbar: int
    dev_metric: float | None = None


@dataclass
class RunLog:
    rows: list[LogRow] = field(default_factory=list)
    summary: dict[str, float] = field(default_factory=dict, compare=False)

    @property
    def last_iter(self) -> int:
        return self.rows[-1].iter if self.rows else 0

    def losses(self) -> list[float]:
        return [row.loss for row in self.rows]

    def curve(self) -> list[float]:
        return [row.avg_cum_loss for row in self.rows]

    def dev_rows(self) -> list[LogRow]:
        return [row for row in self.rows if row.dev_metric is not None]


@dataclass
class RunTrace:
    """Per-step quantities kept for the convergence bound checks."""

    step_sizes: list[float] = field(default_factory=list)
    delta_norms_sq: list[float] = field(default_factory=list)
    iterates: dict[int, SparseVector] = field(default_factory=dict)


@dataclass(frozen=True)
class Checkpoint:
    iteration: int
    weights: SparseVector
    metric: float


@dataclass(frozen=True)
class DevMetric:
    """A development-set score of unperturbed weights."""

    name: str
    evaluate: Callable[[SparseVector], float]
    higher_is_better: bool = True

    def better(self, a: float, b: float) -> bool:
        return a > b if self.higher_is_better else a < b


@dataclass
class RunResult:
    log: RunLog
    best: Checkpoint | None
    state: OptimizerState
    trace: RunTrace


def _materialize(example: Any, w: SparseVector) -> Any:
    materialize = getattr(example, "materialize", None)
    return example if materialize is None else materialize(w)


def mean_loss_metric(objective: Objective[Any], dev: Sequence[Any]) -> DevMetric:
    """Average objective value over ``dev``; lower is better."""

    def evaluate(w: SparseVector) -> float:
        return float(np.mean([objective(w, _materialize(x, w)) for x in dev]))

    return DevMetric("loss", evaluate, higher_is_better=False)


def run(
    config: RunConfig,
    objective: Objective[Any],
    train: Iterable[Any],
    dev: Sequence[Any] = (),
    metric: DevMetric | None = None,
    w0: SparseVector | None = None,
) -> RunResult:
    """Train for ``config.max_iters`` steps.

    ``train`` yields examples: instances, sample indices, or objects with a
    ``materialize(w)`` method that builds the instance seen at ``w``. The dev
    metric is evaluated every ``eval_every`` steps and after the last step.
    """
    state = initial_state(config, objective.dim, w0)
    if dev and metric is None:
        metric = mean_loss_metric(objective, dev)
    if not dev:
        log.warning("empty development set: no checkpoint will be selected")
        metric = None
    result_log = RunLog()
    trace = RunTrace()
    if config.trace_every:
        trace.iterates[0] = state.w
    best: Checkpoint | None = None
    examples = iter(train)
    for _ in range(config.max_iters):
        try:
            example = next(examples)
        except StopIteration:
            raise ValueError(
                f"training stream ended after {state.k} of {config.max_iters} steps"
            ) from None
        state = step(state, _materialize(example, state.w), config, objective)
        info = state.last
        assert info is not None
        trace.step_sizes.append(info.h)
        trace.delta_norms_sq.append(info.delta_norm_sq)
        if config.trace_every and state.k % config.trace_every == 0:
            trace.iterates[state.k] = state.w
        dev_value = None
        avg = state.cumulative_loss / state.k
        if metric is not None and (
            state.k % config.eval_every == 0 or state.k == config.max_iters
        ):
            dev_value = metric.evaluate(state.w)
            log.info(
                "iter %d: avg_cum_loss=%.4f dev %s=%.4f",
                state.k,
                avg,
                metric.name,
                dev_value,
            )
            if best is None or metric.better(dev_value, best.metric):
                best = Checkpoint(state.k, state.w, dev_value)
        result_log.rows.append(LogRow(state.k, info.loss, avg, info.nbar, dev_value))
    if config.trace_every:
        trace.iterates[state.k] = state.w
    result_log.summary = {
        "iterations": float(state.k),
        "final_avg_cum_loss": state.cumulative_loss / state.k,
    }
    if best is not None:
        result_log.summary["best_iter"] = float(best.iteration)
        result_log.summary["best_dev_metric"] = best.metric
    return RunResult(result_log, best, state, trace)


def avg_cumulative_loss(log: RunLog, t: int) -> float:
    """Mean of the first ``t`` perturbed losses of a run."""
    if not 1 <= t <= log.last_iter:
        raise ValueError(f"t must be in [1, {log.last_iter}], got {t}")
    return math.fsum(row.loss for row in log.rows[:t]) / t
