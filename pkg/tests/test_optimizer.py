import math
import os
import unittest
from collections.abc import Iterator
from tempfile import TemporaryDirectory

import numpy as np

from szo import ConfigError, NumericalError
from szo.data_io import parse_docs, write_runlog
from szo.estimators import UpdateRule, two_point_delta
from szo.harness import iterations_to_fraction, synthetic_metric, synthetic_samples
from szo.objectives import MapCriterion, SyntheticFunction, make_synthetic
from szo.optimizer import (
    PERTURBATION_STREAM,
    LogRow,
    PerturbationMode,
    RunConfig,
    RunLog,
    avg_cumulative_loss,
    initial_state,
    run,
    step,
)
from szo.perturbation import RngStream, sample_sparse_gaussian
from szo.sparse_linalg import ActiveSet, SparseVector
from szo.structpred import FeatureIndex

DATA = os.path.join(os.path.dirname(__file__), "data")


class ConstantObjective:
    dim = 10

    def __init__(self, value: float) -> None:
        self.value = value

    def __call__(self, w: SparseVector, x: int) -> float:
        return self.value

    def active_set(self, x: int) -> ActiveSet:
        return ActiveSet(self.dim, [x % self.dim, (x + 3) % self.dim])


def zeros() -> Iterator[int]:
    while True:
        yield 0


class RunConfigTestCase(unittest.TestCase):
    def test_validation(self) -> None:
        for kwargs in (
            {"h": 0.0},
            {"h": math.nan},
            {"mu": -1.0},
            {"max_iters": 0},
            {"eval_every": 0},
            {"trace_every": -1},
            {"seed": -1},
        ):
            with self.subTest(**kwargs):
                with self.assertRaises(ConfigError):
                    RunConfig(**kwargs)  # type: ignore[arg-type]

    def test_constant_schedule(self) -> None:
        config = RunConfig(h=0.3)
        self.assertEqual([0.3, 0.3], [config.learning_rate(0), config.learning_rate(99)])


class StepTestCase(unittest.TestCase):
    def test_one_step_l1_well(self) -> None:
        func = make_synthetic("l1_well", 32, 8, seed=0)
        config = RunConfig(h=0.1, mu=0.1, seed=7, max_iters=10)
        state = initial_state(config, func.dim)
        a = step(state, 3, config, func)
        b = step(state, 3, config, func)
        self.assertEqual(a.w, b.w)

        pert = sample_sparse_gaussian(func.active_set(3), RngStream(7, PERTURBATION_STREAM))
        delta = two_point_delta(func, SparseVector(32), 3, pert, 0.1)
        self.assertEqual(delta.scale(-0.1), a.w)
        self.assertEqual(1, a.k)
        self.assertEqual(8, a.last.nbar if a.last else None)

    def test_sparse_support(self) -> None:
        func = make_synthetic("l1_well", 32, 3, seed=1)
        config = RunConfig(h=0.1, mu=0.1, max_iters=10)
        state = initial_state(config, func.dim)
        after = step(state, 0, config, func)
        self.assertLessEqual(len(after.w.indices), 3)
        self.assertTrue(set(after.w.indices.tolist()) <= set(func.active_set(0)))

    def test_all_mode(self) -> None:
        func = make_synthetic("l1_well", 32, 3, seed=1)
        config = RunConfig(h=0.1, mu=0.1, max_iters=10, mode=PerturbationMode.ALL)
        after = step(initial_state(config, func.dim), 0, config, func)
        self.assertEqual(32, after.last.nbar if after.last else None)
        self.assertEqual(32, len(after.w.indices))

    def test_debug_log(self) -> None:
        func = make_synthetic("l1_well", 32, 3, seed=1)
        config = RunConfig(max_iters=2)
        with self.assertLogs("szo.optimizer", "DEBUG") as logs:
            step(initial_state(config, func.dim), 0, config, func)
        self.assertEqual(1, len(logs.output))
        self.assertRegex(logs.output[0], r"step 1: loss=\S+ nbar=3 ")

    def test_finished(self) -> None:
        func = make_synthetic("l1_well", 32, 3, seed=1)
        config = RunConfig(max_iters=1)
        state = step(initial_state(config, func.dim), 0, config, func)
        with self.assertRaises(ValueError):
            step(state, 0, config, func)

    def test_non_finite(self) -> None:
        config = RunConfig(max_iters=5)
        with self.assertRaises(NumericalError):
            run(config, ConstantObjective(math.nan), zeros())

    def test_sfo_needs_instances(self) -> None:
        func = make_synthetic("l1_well", 32, 3, seed=1)
        config = RunConfig(rule=UpdateRule.SFO, max_iters=5)
        with self.assertRaises(ConfigError):
            run(config, func, synthetic_samples(func.num_samples, 0))

    def test_warm_start_dim(self) -> None:
        with self.assertRaises(ConfigError):
            initial_state(RunConfig(), 10, SparseVector(11))


class RunTestCase(unittest.TestCase):
    def test_constant(self) -> None:
        config = RunConfig(max_iters=20)
        with self.assertLogs("szo.optimizer", "WARNING"):
            result = run(config, ConstantObjective(0.25), zeros())
        self.assertEqual(SparseVector(10), result.state.w)
        self.assertEqual([0.25] * 20, result.log.curve())
        self.assertIsNone(result.best)

    def test_single_row(self) -> None:
        func = make_synthetic("l1_well", 32, 8, seed=0)
        result = run(RunConfig(max_iters=1), func, synthetic_samples(func.num_samples, 0))
        self.assertEqual(1, len(result.log.rows))
        self.assertEqual(1, result.log.last_iter)

    def test_deterministic(self) -> None:
        func = make_synthetic("nonconvex_ripple", 64, 8, seed=2)
        config = RunConfig(max_iters=300, eval_every=100, seed=5, h=0.01, mu=0.05)
        logs = [
            run(
                config,
                func,
                synthetic_samples(func.num_samples, 5),
                range(func.num_samples),
                synthetic_metric(func),
            ).log
            for _ in range(2)
        ]
        self.assertEqual(logs[0], logs[1])
        with TemporaryDirectory() as path:
            texts = []
            for i, run_log in enumerate(logs):
                file = os.path.join(path, f"runlog{i}.csv")
                write_runlog(run_log, file)
                with open(file, "rb") as f:
                    texts.append(f.read())
        self.assertEqual(texts[0], texts[1])

    def test_dev_schedule(self) -> None:
        func = make_synthetic("l1_well", 32, 8, seed=0)
        config = RunConfig(max_iters=250, eval_every=100, h=0.01, mu=0.05)
        result = run(
            config,
            func,
            synthetic_samples(func.num_samples, 0),
            range(func.num_samples),
            synthetic_metric(func),
        )
        self.assertEqual([100, 200, 250], [row.iter for row in result.log.dev_rows()])
        best = result.best
        assert best is not None
        self.assertEqual(
            min(row.dev_metric for row in result.log.dev_rows() if row.dev_metric is not None),
            best.metric,
        )
        self.assertEqual(best.metric, func.mean_value(best.weights))

    def test_trace(self) -> None:
        func = make_synthetic("l1_well", 32, 8, seed=0)
        config = RunConfig(max_iters=100, trace_every=25)
        result = run(config, func, synthetic_samples(func.num_samples, 0))
        self.assertEqual([0, 25, 50, 75, 100], sorted(result.trace.iterates))
        self.assertEqual([config.h] * 100, result.trace.step_sizes)
        self.assertEqual(100, len(result.trace.delta_norms_sq))
        self.assertEqual(result.state.w, result.trace.iterates[100])

    def test_stream_too_short(self) -> None:
        func = make_synthetic("l1_well", 32, 8, seed=0)
        with self.assertRaises(ValueError):
            run(RunConfig(max_iters=10), func, [0, 1, 2])

    def test_sparse_support_invariant(self) -> None:
        instances = parse_docs(os.path.join(DATA, "docs.txt"))
        criterion = MapCriterion(FeatureIndex.anonymous(instances[0].dim))
        config = RunConfig(max_iters=60, h=0.5, mu=1.0)
        state = initial_state(config, criterion.dim)
        seen: set[int] = set()
        for k in range(60):
            x = instances[k % len(instances)]
            seen |= set(x.active_set)
            state = step(state, x, config, criterion)
            self.assertTrue(set(state.w.indices.tolist()) <= seen)

    def test_sfo(self) -> None:
        instances = parse_docs(os.path.join(DATA, "docs.txt"))
        criterion = MapCriterion(FeatureIndex.anonymous(instances[0].dim))
        config = RunConfig(rule=UpdateRule.SFO, max_iters=30, h=0.5)
        result = run(config, criterion, (instances[k % 3] for k in range(30)))
        self.assertEqual(30, len(result.log.rows))
        for row in result.log.rows:
            self.assertIn(row.loss, (0.0, 1.0))

    def test_warm_start(self) -> None:
        w0 = SparseVector(10, [2], [1.5])
        result = run(RunConfig(max_iters=3), ConstantObjective(0.1), zeros(), w0=w0)
        self.assertEqual(w0, result.state.w)

    def test_convergence(self) -> None:
        func = make_synthetic("l1_well", 32, 8, seed=0)
        config = RunConfig(h=0.01, mu=0.05, max_iters=20_000, eval_every=20_000, seed=1)
        result = run(config, func, synthetic_samples(func.num_samples, 1))
        curve = result.log.curve()
        self.assertLess(curve[-1], 0.5 * curve[0])


class AvgCumulativeLossTestCase(unittest.TestCase):
    def test_constant(self) -> None:
        run_log = RunLog([LogRow(k, 0.5, 0.5, 1) for k in range(1, 6)])
        for t in range(1, 6):
            self.assertEqual(0.5, avg_cumulative_loss(run_log, t))

    def test_two(self) -> None:
        run_log = RunLog([LogRow(1, 1.0, 1.0, 1), LogRow(2, 0.0, 0.5, 1)])
        self.assertEqual(0.5, avg_cumulative_loss(run_log, 2))

    def test_recompute(self) -> None:
        func = make_synthetic("smooth_bowl", 32, 8, seed=0)
        result = run(RunConfig(max_iters=200), func, synthetic_samples(func.num_samples, 3))
        losses = result.log.losses()
        for t in (1, 17, 200):
            self.assertAlmostEqual(float(np.mean(losses[:t])), avg_cumulative_loss(result.log, t))
            self.assertAlmostEqual(result.log.rows[t - 1].avg_cum_loss, avg_cumulative_loss(result.log, t))

    def test_range(self) -> None:
        run_log = RunLog([LogRow(1, 1.0, 1.0, 1)])
        with self.assertRaises(ValueError):
            avg_cumulative_loss(run_log, 0)
        with self.assertRaises(ValueError):
            avg_cumulative_loss(run_log, 2)


class PerturbationModeTestCase(unittest.TestCase):
    def test_all_reaches_other_samples(self) -> None:
        func = make_synthetic("l1_well", 512, 8, seed=0, support=64)
        zero = SparseVector(512)
        active = set(func.active_set(0))
        disjoint = [x for x in range(func.num_samples) if not active & set(func.active_set(x))]
        others = [x for x in range(func.num_samples) if not set(func.active_set(x)) <= active]
        self.assertTrue(disjoint)
        for mode in PerturbationMode:
            with self.subTest(mode.value):
                config = RunConfig(h=0.1, mu=0.1, max_iters=1, seed=1, mode=mode)
                w = step(initial_state(config, func.dim), 0, config, func).w
                if mode is PerturbationMode.ALL:
                    self.assertTrue(all(func(w, x) != func(zero, x) for x in others))
                else:
                    self.assertFalse(any(func(w, x) != func(zero, x) for x in disjoint))

    def test_curves_differ(self) -> None:
        func = make_synthetic("l1_well", 512, 8, seed=0)
        curves = [
            run(
                RunConfig(h=0.01, mu=0.05, max_iters=200, seed=1, mode=mode),
                func,
                synthetic_samples(func.num_samples, 1),
            ).log.curve()
            for mode in PerturbationMode
        ]
        self.assertNotEqual(curves[0], curves[1])


#: step size, smoothing and run length under which each rule converges
ORDERING_SETTINGS = {
    UpdateRule.TWO_POINT: (0.02, 0.05, 20_000),
    UpdateRule.FUNCTION_COMPARISON: (0.005, 0.05, 20_000),
    UpdateRule.BASELINE_COMPARISON: (0.0005, 0.2, 60_000),
}


@unittest.skipUnless(os.environ.get("SZO_ACCEPTANCE") == "1", "set SZO_ACCEPTANCE=1")
class OrderingTestCase(unittest.TestCase):
    def median_iterations(
        self,
        func: SyntheticFunction,
        rule: UpdateRule,
        mode: PerturbationMode,
        h: float,
        mu: float,
        iters: int,
    ) -> float:
        hits = []
        for seed in (1, 2, 3):
            config = RunConfig(
                rule=rule, h=h, mu=mu, max_iters=iters, eval_every=iters, seed=seed, mode=mode
            )
            result = run(config, func, synthetic_samples(func.num_samples, seed))
            hit = iterations_to_fraction(result.log, 0.5, reference_iter=100)
            hits.append(math.inf if hit is None else float(hit))
        return float(np.median(hits))

    def test_sparse_beats_all(self) -> None:
        func = make_synthetic("l1_well", 512, 8, seed=0)
        for rule, (h, mu, iters) in ORDERING_SETTINGS.items():
            with self.subTest(rule.value):
                sparse = self.median_iterations(func, rule, PerturbationMode.SPARSE, h, mu, iters)
                dense = self.median_iterations(func, rule, PerturbationMode.ALL, h, mu, iters)
                self.assertTrue(math.isfinite(sparse))
                self.assertLess(sparse, dense)


if __name__ == "__main__":
    unittest.main()
