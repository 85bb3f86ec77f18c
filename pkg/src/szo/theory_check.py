"""Monte Carlo checks of the convergence theory on the synthetic functions.

Each check returns a :class:`BoundReport` comparing a sampled left-hand side
with a bound. A report passes when ``lhs <= rhs + 3 * stderr``.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import numpy.typing as npt

from .harness import synthetic_samples, thread_limit
from .objectives import SyntheticFunction, make_synthetic
from .optimizer import (
    CHECK_STREAM,
    PerturbationMode,
    RunConfig,
    RunResult,
    initial_state,
    run,
    step,
)
from .perturbation import RngStream, norm_powers
from .sparse_linalg import ActiveSet, SparseVector

__all__ = [
    "BoundReport",
    "SweepCell",
    "SweepResult",
    "estimator_bias_check",
    "moment_bound_check",
    "second_moment_check",
    "gap_check",
    "smoothed_gradient_mc",
    "gradient_norm_sq",
    "theorem1_tracker",
    "theorem1_check",
    "optimal_step_size",
    "corollary_bound",
    "smoothing_for_gap",
    "complexity_sweep",
    "thinning",
    "MIN_CHECK_SAMPLES",
    "MIN_SWEEP_SEEDS",
]

log = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MIN_CHECK_SAMPLES = 100_000
MIN_GRADIENT_SAMPLES = 10_000
MIN_SWEEP_SEEDS = 3
_BATCH_ELEMENTS = 1 << 21
_SIGMAS = 3.0


@dataclass(frozen=True)
class BoundReport:
    check: str
    lhs: float
    stderr: float
    rhs: float
    passed: bool
    params: dict[str, float] = field(default_factory=dict)

    @classmethod
    def make(
        cls, check: str, lhs: float, stderr: float, rhs: float, **params: float
    ) -> BoundReport:
        passed = bool(lhs <= rhs + _SIGMAS * stderr)
        return cls(check, float(lhs), float(stderr), float(rhs), passed, params)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> BoundReport:
        return cls(**json.loads(line))


def _check_samples(samples: int, minimum: int) -> None:
    if samples < minimum:
        raise ValueError(f"samples must be at least {minimum}, got {samples}")


def _batches(samples: int, width: int) -> list[tuple[int, int]]:
    size = max(1, _BATCH_ELEMENTS // max(1, width))
    return [(s, min(samples, s + size)) for s in range(0, samples, size)]


def _sample_indices(
    func: SyntheticFunction, count: int, rng: RngStream
) -> npt.NDArray[np.int64]:
    return np.floor(rng.uniforms(count) * func.num_samples).astype(np.int64)


def _two_point_draws(
    func: SyntheticFunction, z: FloatArray, mu: float, count: int, rng: RngStream
) -> FloatArray:
    """``count`` two-point estimates at support values ``z``, as rows over the
    support."""
    u = rng.normals((count, func.n_bar))
    x = _sample_indices(func, count, rng)
    local = func.local(z, x)
    perturbed = func.batch_values(local + mu * u, x)
    base = func.batch_values(local, x)
    return func.scatter(((perturbed - base) / mu)[:, None] * u, x)


class _Moments:
    """Streaming per-column mean and standard error."""

    def __init__(self, width: int) -> None:
        self.count = 0
        self.total = np.zeros(width)
        self.total_sq = np.zeros(width)

    def add(self, rows: FloatArray) -> None:
        self.count += rows.shape[0]
        self.total += rows.sum(axis=0)
        self.total_sq += np.square(rows).sum(axis=0)

    def result(self) -> tuple[FloatArray, FloatArray]:
        mean = self.total / self.count
        if self.count < 2:
            return mean, np.zeros_like(mean)
        var = np.maximum(self.total_sq - self.count * np.square(mean), 0.0)
        var /= self.count - 1
        return mean, np.sqrt(var / self.count)


def smoothed_gradient_mc(
    func: SyntheticFunction,
    w: SparseVector,
    mu: float,
    samples: int,
    rng: RngStream,
) -> tuple[FloatArray, FloatArray]:
    """Mean and standard error of the two-point estimator at ``w``.

    By the expectation identity of the estimator this is an unbiased estimate
    of the gradient of the smoothed mean objective, over the support.
    """
    if not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    _check_samples(samples, 1)
    z = func.restrict(w)
    width = func.support.size
    moments = _Moments(width)
    for start, stop in _batches(samples, width):
        moments.add(_two_point_draws(func, z, mu, stop - start, rng))
    return moments.result()


def gradient_norm_sq(mean: FloatArray, stderr: FloatArray) -> tuple[float, float]:
    """``||g||^2`` from a Monte Carlo mean, corrected for sampling noise,
    with its delta-method standard error."""
    value = float(np.dot(mean, mean) - np.dot(stderr, stderr))
    error = 2.0 * math.sqrt(float(np.dot(np.square(mean), np.square(stderr))))
    return value, error


def estimator_bias_check(
    func: SyntheticFunction,
    w: SparseVector,
    mu: float,
    samples: int,
    rng: RngStream,
    fd_step: float = 1e-3,
    max_z: float = 4.0,
) -> BoundReport:
    """Compare the mean two-point estimate with finite differences of the
    smoothed function on every support coordinate.

    The finite differences use common random numbers: coordinate ``i`` is
    ``(F(z + fd_step e_i + mu u, x) - F(z - fd_step e_i + mu u, x)) / (2 fd_step)``
    averaged over fresh ``(u, x)``. The report's ``lhs`` is the largest
    absolute z-score of the difference.
    """
    _check_samples(samples, MIN_CHECK_SAMPLES)
    if not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    estimate, estimate_err = smoothed_gradient_mc(func, w, mu, samples, rng)
    z = func.restrict(w)
    d = func.n_bar
    eye = np.eye(d) * fd_step
    moments = _Moments(func.support.size)
    for start, stop in _batches(samples, func.support.size * d):
        count = stop - start
        u = rng.normals((count, d))
        x = _sample_indices(func, count, rng)
        points = func.local(z, x) + mu * u
        diffs = np.empty((count, d))
        for i in range(d):
            diffs[:, i] = func.batch_values(points + eye[i], x) - func.batch_values(
                points - eye[i], x
            )
        moments.add(func.scatter(diffs / (2.0 * fd_step), x))
    reference, reference_err = moments.result()
    gap = estimate - reference
    scale = np.sqrt(np.square(estimate_err) + np.square(reference_err))
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(
            scale > 0.0, np.abs(gap) / scale, np.where(gap == 0.0, 0.0, np.inf)
        )
    worst = float(scores.max()) if scores.size else 0.0
    log.debug("estimator bias z-scores: %s", scores)
    return BoundReport.make(
        "lemma1",
        worst,
        0.0,
        max_z,
        n=func.dim,
        n_bar=d,
        mu=mu,
        samples=samples,
        max_abs_gap=float(np.abs(gap).max()) if gap.size else 0.0,
    )


def second_moment_check(
    func: SyntheticFunction,
    w: SparseVector,
    mu: float,
    samples: int,
    rng: RngStream,
) -> BoundReport:
    """``E ||s_mu(w)||^2 <= L0^2 (n_bar + 4)^2`` for the two-point estimator."""
    if not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    _check_samples(samples, MIN_CHECK_SAMPLES)
    z = func.restrict(w)
    moments = _Moments(1)
    for start, stop in _batches(samples, func.support.size):
        draws = _two_point_draws(func, z, mu, stop - start, rng)
        moments.add(np.square(draws).sum(axis=1)[:, None])
    mean, stderr = moments.result()
    return BoundReport.make(
        "second_moment",
        float(mean[0]),
        float(stderr[0]),
        func.lipschitz**2 * (func.n_bar + 4) ** 2,
        n=func.dim,
        n_bar=func.n_bar,
        mu=mu,
        samples=samples,
    )


def moment_bound_check(d: int, p: int, samples: int, rng: RngStream) -> BoundReport:
    """``E ||u||^p <= (p + d)^(p/2)`` for a ``d``-dimensional perturbation.

    ``params`` also records the exact moment (``d`` or ``d^2 + 2d``) and the
    z-score of the estimate against it.
    """
    if d < 0:
        raise ValueError(f"d must be non-negative, got {d}")
    _check_samples(samples, MIN_CHECK_SAMPLES)
    active = ActiveSet(max(d, 1), range(d))
    powers = norm_powers(active, p, samples, rng)
    lhs = float(powers.mean())
    stderr = float(powers.std(ddof=1) / math.sqrt(samples))
    exact = float(d) if p == 2 else float(d * d + 2 * d)
    exact_z = abs(lhs - exact) / stderr if stderr > 0.0 else 0.0
    return BoundReport.make(
        "lemma2",
        lhs,
        stderr,
        (p + d) ** (p / 2),
        d=d,
        p=p,
        samples=samples,
        exact=exact,
        exact_z=exact_z,
    )


def smoothing_for_gap(alpha: float, n_bar: int, L0: float) -> float:
    """The smoothing ``mu`` that keeps ``|f_mu - f| <= alpha``."""
    if alpha <= 0.0 or n_bar <= 0 or L0 <= 0.0:
        raise ValueError("alpha, n_bar and L0 must be positive")
    return alpha / (math.sqrt(n_bar) * L0)


def gap_check(
    func: SyntheticFunction,
    w: SparseVector,
    mu: float,
    samples: int,
    rng: RngStream,
) -> BoundReport:
    """``|f_mu(w) - f(w)| <= mu L0 sqrt(n_bar)``."""
    if not mu > 0.0:
        raise ValueError(f"mu must be positive, got {mu}")
    _check_samples(samples, 1)
    z = func.restrict(w)
    moments = _Moments(1)
    for start, stop in _batches(samples, func.n_bar):
        count = stop - start
        u = rng.normals((count, func.n_bar))
        x = _sample_indices(func, count, rng)
        local = func.local(z, x)
        diff = func.batch_values(local + mu * u, x) - func.batch_values(local, x)
        moments.add(diff[:, None])
    mean, stderr = moments.result()
    return BoundReport.make(
        "gap",
        abs(float(mean[0])),
        float(stderr[0]),
        mu * func.lipschitz * math.sqrt(func.n_bar),
        n=func.dim,
        n_bar=func.n_bar,
        mu=mu,
        samples=samples,
    )


def thinning(iterations: int) -> int:
    """Every how many iterates the gradient norm is checked."""
    return max(1, iterations // 50)


def theorem1_tracker(
    result: RunResult,
    func: SyntheticFunction,
    mu: float,
    grad_mc_samples: int,
    rng: RngStream,
) -> BoundReport:
    """Check the weighted gradient-norm bound on a finished run.

    The run must have been made with ``trace_every`` set so that its trace
    holds the thinned iterates. ``lhs`` is the step-size weighted average of
    ``||grad f_mu(w_k)||^2`` over those iterates; ``rhs`` is
    ``((f_mu(w_0) - f*) + L1 (n_bar + 4)^2 L0^2 sum h_k^2 / 2) / sum h_k``
    with ``L1 = sqrt(n_bar) L0 / mu``.
    """
    trace = result.trace
    if not trace.step_sizes or not trace.iterates:
        raise ValueError("run has no step sizes or iterates; set trace_every")
    h = np.asarray(trace.step_sizes)
    if np.any(h <= 0.0):
        raise ValueError("step sizes must be positive")
    _check_samples(grad_mc_samples, MIN_GRADIENT_SAMPLES)
    if 0 not in trace.iterates:
        raise ValueError("trace is missing the initial iterate")
    n_bar = func.n_bar
    L0 = func.lipschitz
    L1 = math.sqrt(n_bar) / mu * L0

    checked = sorted(k for k in trace.iterates if k < h.size)
    weights = h[checked] / h[checked].sum()
    norms = np.empty(len(checked))
    errors = np.empty(len(checked))
    for j, k in enumerate(checked):
        mean, stderr = smoothed_gradient_mc(
            func, trace.iterates[k], mu, grad_mc_samples, rng
        )
        norms[j], errors[j] = gradient_norm_sq(mean, stderr)
    lhs = float(weights @ norms)
    lhs_err = float(np.sqrt(np.square(weights) @ np.square(errors)))

    z0 = func.restrict(trace.iterates[0])
    u = rng.normals((grad_mc_samples, n_bar))
    x = _sample_indices(func, grad_mc_samples, rng)
    f_mu_w0 = float(func.batch_values(func.local(z0, x) + mu * u, x).mean())
    total_h = float(h.sum())
    rhs = (
        (f_mu_w0 - func.f_star)
        + 0.5 * L1 * (n_bar + 4) ** 2 * L0**2 * float(np.square(h).sum())
    ) / total_h
    return BoundReport.make(
        "theorem1",
        lhs,
        lhs_err,
        rhs,
        n=func.dim,
        n_bar=n_bar,
        mu=mu,
        h=float(h[0]),
        N=h.size,
        L0=L0,
        L1=L1,
        checked=len(checked),
    )


def theorem1_check(
    func: SyntheticFunction,
    config: RunConfig,
    grad_mc_samples: int = MIN_GRADIENT_SAMPLES,
) -> tuple[RunResult, BoundReport]:
    """Train on ``func`` with ``config`` and check the bound on the run."""
    config = replace(config, trace_every=thinning(config.max_iters))
    result = run(config, func, synthetic_samples(func.num_samples, config.seed))
    report = theorem1_tracker(
        result,
        func,
        config.mu,
        grad_mc_samples,
        RngStream(config.seed, CHECK_STREAM),
    )
    return result, report


def optimal_step_size(alpha: float, R: float, n_bar: int, L0: float, N: int) -> float:
    """The constant step size minimising :func:`corollary_bound`."""
    if alpha <= 0.0 or R <= 0.0 or n_bar <= 0 or L0 <= 0.0:
        raise ValueError("alpha, R, n_bar and L0 must be positive")
    if N < 0:
        raise ValueError(f"N must be non-negative, got {N}")
    return math.sqrt(alpha * R / (n_bar * (n_bar + 4) ** 2 * L0**3 * (N + 1)))


def corollary_bound(
    alpha: float, R: float, n_bar: int, L0: float, N: int, h: float
) -> float:
    """``L0 R / ((N + 1) h) + (h / alpha) n_bar (n_bar + 4)^2 L0^4``."""
    if h <= 0.0:
        raise ValueError(f"h must be positive, got {h}")
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return L0 * R / ((N + 1) * h) + h / alpha * n_bar * (n_bar + 4) ** 2 * L0**4


@dataclass(frozen=True)
class SweepCell:
    n_bar: int
    seed: int
    #: ``(iteration, ||grad f_mu||^2)`` at every checked iterate
    history: tuple[tuple[int, float], ...]
    cap: int

    def iterations_to(self, epsilon: float) -> int | None:
        for k, value in self.history:
            if value <= epsilon:
                return k
        return None

    @property
    def final_norm(self) -> float:
        return self.history[-1][1]


@dataclass(frozen=True)
class SweepResult:
    n: int
    epsilon: float
    cells: tuple[SweepCell, ...]

    @property
    def n_bars(self) -> list[int]:
        return sorted({cell.n_bar for cell in self.cells})

    def iterations(self, n_bar: int) -> list[int | None]:
        """Iterations to epsilon per seed; ``None`` marks a censored cell."""
        return [c.iterations_to(self.epsilon) for c in self.cells if c.n_bar == n_bar]

    def _capped(self, n_bar: int) -> list[int]:
        return [
            c.cap if it is None else it
            for c in self.cells
            if c.n_bar == n_bar
            for it in (c.iterations_to(self.epsilon),)
        ]

    def median(self, n_bar: int) -> float:
        """Median iterations to epsilon; censored seeds count as the cap."""
        return float(np.median(self._capped(n_bar)))

    def dispersion(self, n_bar: int) -> float:
        return float(np.std(self._capped(n_bar)))

    def censored(self, n_bar: int) -> int:
        return sum(it is None for it in self.iterations(n_bar))


def _sweep_cell(
    n: int,
    n_bar: int,
    seed: int,
    epsilon: float,
    base: RunConfig,
    grad_mc_samples: int,
) -> SweepCell:
    func = make_synthetic("l1_well", n, n_bar, base.objective.seed)
    config = replace(base, seed=seed, mode=PerturbationMode.SPARSE)
    every = thinning(config.max_iters)
    check_rng = RngStream(seed, CHECK_STREAM)
    samples = synthetic_samples(func.num_samples, seed)
    state = initial_state(config, func.dim)
    history: list[tuple[int, float]] = []
    while True:
        if state.k % every == 0 or state.k == config.max_iters:
            mean, stderr = smoothed_gradient_mc(
                func, state.w, config.mu, grad_mc_samples, check_rng
            )
            value = gradient_norm_sq(mean, stderr)[0]
            history.append((state.k, value))
            if value <= epsilon or state.k == config.max_iters:
                break
        state = step(state, next(samples), config, func)
    if history[-1][1] > epsilon:
        log.info("sweep cell n_bar=%d seed=%d censored at %d", n_bar, seed, state.k)
    return SweepCell(n_bar, seed, tuple(history), config.max_iters)


def complexity_sweep(
    n: int,
    n_bar_list: Sequence[int],
    epsilon: float | None,
    seeds: Sequence[int],
    base: RunConfig,
    grad_mc_samples: int = MIN_GRADIENT_SAMPLES,
) -> SweepResult:
    """Iterations until ``||grad f_mu(w_k)||^2 <= epsilon`` on ``l1_well``.

    Every ``n_bar`` is run for every seed with the settings of ``base``, whose
    ``max_iters`` is the iteration cap. With ``epsilon=None`` the largest
    ``n_bar`` runs to the cap first and epsilon becomes the median gradient
    norm it ends with.
    """
    if not n_bar_list:
        raise ValueError("n_bar_list is empty")
    for n_bar in n_bar_list:
        if not 1 <= n_bar <= n:
            raise ValueError(f"need 1 <= n_bar <= n, got n_bar={n_bar}, n={n}")
    if len(seeds) < MIN_SWEEP_SEEDS:
        raise ValueError(f"a sweep needs at least {MIN_SWEEP_SEEDS} seeds")
    _check_samples(grad_mc_samples, 1)

    def run_cells(pairs: list[tuple[int, int]], eps: float) -> list[SweepCell]:
        with ThreadPoolExecutor(max_workers=min(thread_limit(), len(pairs))) as pool:
            return list(
                pool.map(
                    lambda p: _sweep_cell(n, p[0], p[1], eps, base, grad_mc_samples),
                    pairs,
                )
            )

    n_bars = sorted(set(n_bar_list))
    done: list[SweepCell] = []
    if epsilon is None:
        largest = n_bars.pop()
        done = run_cells([(largest, s) for s in seeds], -math.inf)
        epsilon = float(np.median([cell.final_norm for cell in done]))
        log.info("sweep epsilon set to %.6g from n_bar=%d", epsilon, largest)
    if n_bars:
        done += run_cells([(b, s) for b in n_bars for s in seeds], epsilon)
    cells = sorted(done, key=lambda c: (c.n_bar, list(seeds).index(c.seed)))
    return SweepResult(n, epsilon, tuple(cells))
