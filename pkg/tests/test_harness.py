import itertools
import os
import unittest
from tempfile import TemporaryDirectory
from unittest import mock

import numpy as np

from szo import ConfigError, DataError
from szo.data_io import parse_conll, parse_doc_records, parse_nbest_records, write_checkpoint
from szo.estimators import UpdateRule
from szo.harness import (
    SequenceExample,
    TaskConfig,
    aggregate,
    build_task,
    epoch_stream,
    iterations_to_fraction,
    run_seeds,
    split_dev,
    synth_chunking,
    synth_docs,
    synth_nbest,
    synthetic_samples,
    thread_limit,
    write_summary,
)
from szo.objectives import ObjectiveSpec
from szo.optimizer import LogRow, RunConfig, RunLog, run
from szo.sparse_linalg import SparseVector
from szo.structpred import Instance, is_valid_bio

DATA = os.path.join(os.path.dirname(__file__), "data")


def write(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def curve_log(values: list[float]) -> RunLog:
    return RunLog([LogRow(k, v, v, 1) for k, v in enumerate(values, 1)])


class SynthDataTestCase(unittest.TestCase):
    def test_chunking(self) -> None:
        text = synth_chunking(30, seed=4)
        self.assertEqual(text, synth_chunking(30, seed=4))
        self.assertNotEqual(text, synth_chunking(30, seed=5))
        with TemporaryDirectory() as path:
            sentences = parse_conll(write(path, "c.txt", text))
        self.assertEqual(30, len(sentences))
        for seq in sentences:
            self.assertTrue(is_valid_bio(seq.gold))
            self.assertIn("B", seq.gold)
            self.assertEqual(".", seq.tokens[-1][0])

    def test_nbest(self) -> None:
        text = synth_nbest(12, seed=1)
        self.assertEqual(text, synth_nbest(12, seed=1))
        with TemporaryDirectory() as path:
            records = parse_nbest_records(write(path, "n.txt", text))
        self.assertEqual(12, len(records))
        for record in records:
            self.assertEqual(10, len(record.hypotheses))
            self.assertEqual(14, record.arity)

    def test_docs(self) -> None:
        text = synth_docs(25, seed=2)
        self.assertEqual(text, synth_docs(25, seed=2))
        with TemporaryDirectory() as path:
            num_classes, records = parse_doc_records(write(path, "d.txt", text))
        self.assertEqual(4, num_classes)
        self.assertEqual(25, len(records))
        self.assertEqual(400, records[0].vector.dim)

    def test_errors(self) -> None:
        with self.assertRaises(ValueError):
            synth_chunking(-1, seed=0)
        with self.assertRaises(ValueError):
            synth_docs(3, seed=0, num_classes=1)


class StreamTestCase(unittest.TestCase):
    def test_split_dev(self) -> None:
        self.assertEqual(([3, 4], [1, 2]), split_dev([1, 2, 3, 4], 2))
        with self.assertRaises(ValueError):
            split_dev([1], 2)

    def test_synthetic_samples(self) -> None:
        a = list(itertools.islice(synthetic_samples(64, 3), 5000))
        b = list(itertools.islice(synthetic_samples(64, 3), 5000))
        self.assertEqual(a, b)
        self.assertEqual(set(range(64)), set(a))

    def test_epochs(self) -> None:
        items = list("abcdefg")
        drawn = list(itertools.islice(epoch_stream(items, 1), 21))
        for epoch in range(3):
            self.assertEqual(sorted(items), sorted(drawn[7 * epoch : 7 * epoch + 7]))
        self.assertEqual(drawn, list(itertools.islice(epoch_stream(items, 1), 21)))
        with self.assertRaises(DataError):
            next(epoch_stream([], 0))


class AggregateTestCase(unittest.TestCase):
    def test_aggregate(self) -> None:
        summary = aggregate([curve_log([1.0, 0.5]), curve_log([3.0, 0.5])])
        self.assertEqual([1, 2], summary.iters.tolist())
        self.assertEqual([2.0, 0.5], summary.mean.tolist())
        self.assertEqual([0.0, 0.5], summary.lower.tolist())
        self.assertEqual([4.0, 0.5], summary.upper.tolist())

    def test_errors(self) -> None:
        with self.assertRaises(ValueError):
            aggregate([])
        with self.assertRaises(ValueError):
            aggregate([curve_log([1.0]), curve_log([1.0, 2.0])])

    def test_write(self) -> None:
        summary = aggregate([curve_log([1.0, 0.5]), curve_log([3.0, 0.5])])
        with TemporaryDirectory() as path:
            file = os.path.join(path, "summary.csv")
            write_summary(summary, file)
            with open(file, encoding="utf-8") as f:
                self.assertEqual(
                    "iter,mean,lower,upper\n1,2.0,0.0,4.0\n2,0.5,0.5,0.5\n", f.read()
                )

    def test_iterations_to_fraction(self) -> None:
        run_log = curve_log([4.0, 3.0, 2.5, 2.0, 1.0])
        self.assertEqual(4, iterations_to_fraction(run_log, 0.5, 1))
        self.assertEqual(5, iterations_to_fraction(run_log, 0.5, 3))
        self.assertIsNone(iterations_to_fraction(run_log, 0.1, 1))
        with self.assertRaises(ValueError):
            iterations_to_fraction(run_log, 0.5, 6)


class TaskConfigTestCase(unittest.TestCase):
    def test_validation(self) -> None:
        with self.assertRaises(ConfigError):
            TaskConfig(task="translation")
        with self.assertRaises(ConfigError):
            TaskConfig(task="chunking", k=0)
        with self.assertRaises(ConfigError):
            TaskConfig(task="synth", n_dev=-1)
        with self.assertRaises(ConfigError):
            TaskConfig(task="chunking")
        with self.assertRaises(ConfigError):
            TaskConfig(task="synth", objective=ObjectiveSpec("map_loss"))

    def test_missing_train(self) -> None:
        for task in ("chunking", "rerank", "multiclass"):
            with self.subTest(task):
                with self.assertRaises(ConfigError):
                    build_task(TaskConfig(task=task, objective=ObjectiveSpec()))

    def test_bad_synthetic(self) -> None:
        spec = ObjectiveSpec("synthetic", n=4, n_bar=8)
        with self.assertRaises(ConfigError):
            build_task(TaskConfig(objective=spec))


class BuildTaskTestCase(unittest.TestCase):
    def test_synth(self) -> None:
        setup = build_task(TaskConfig(objective=ObjectiveSpec("synthetic", n=40, n_bar=5)))
        self.assertEqual(40, setup.objective.dim)
        self.assertEqual(64, len(setup.dev))
        assert setup.metric is not None
        self.assertFalse(setup.metric.higher_is_better)

    def test_chunking(self) -> None:
        with TemporaryDirectory() as path:
            train = write(path, "train.txt", synth_chunking(40, seed=1))
            setup = build_task(
                TaskConfig(task="chunking", objective=ObjectiveSpec(), k=5, n_dev=10), train
            )
        self.assertEqual(30, len(setup.train))
        self.assertEqual(10, len(setup.dev))
        assert setup.feature_space is not None and setup.metric is not None
        self.assertTrue(setup.feature_space.frozen)
        example = setup.train[0]
        self.assertIsInstance(example, SequenceExample)
        instance = example.materialize(SparseVector(setup.feature_space.size))
        self.assertIsInstance(instance, Instance)
        self.assertLessEqual(len(instance), 5)
        f1 = setup.metric.evaluate(SparseVector(setup.feature_space.size))
        self.assertEqual(0.0, f1)

    def test_rerank(self) -> None:
        with TemporaryDirectory() as path:
            train = write(path, "train.txt", synth_nbest(8, seed=1))
            dev = write(path, "dev.txt", synth_nbest(20, seed=2))
            setup = build_task(
                TaskConfig(task="rerank", objective=ObjectiveSpec("annealed_loss", gamma=2.0)),
                train,
                dev,
            )
        self.assertEqual(14, setup.objective.dim)
        self.assertEqual(8, len(setup.train))
        assert setup.metric is not None
        self.assertEqual("bleu", setup.metric.name)
        # the first feature tracks the corruption rate, so favouring it helps
        good = setup.metric.evaluate(SparseVector(14, [0], [1.0]))
        bad = setup.metric.evaluate(SparseVector(14, [0], [-1.0]))
        self.assertGreater(good, bad)

    def test_multiclass(self) -> None:
        setup = build_task(
            TaskConfig(task="multiclass", objective=ObjectiveSpec(), n_dev=1),
            os.path.join(DATA, "docs.txt"),
        )
        self.assertEqual(30, setup.objective.dim)
        self.assertEqual(2, len(setup.train))
        assert setup.metric is not None
        # dev document d0 is class 0 with term 3
        self.assertEqual(1.0, setup.metric.evaluate(SparseVector(30, [3], [1.0])))
        self.assertEqual(0.0, setup.metric.evaluate(SparseVector(30, [13], [1.0])))

    def test_multiclass_dev_header(self) -> None:
        with TemporaryDirectory() as path:
            dev = write(path, "dev.txt", "classes=2 vocab=10\n0\t1:1.0\n")
            with self.assertRaises(DataError):
                build_task(
                    TaskConfig(task="multiclass", objective=ObjectiveSpec()),
                    os.path.join(DATA, "docs.txt"),
                    dev,
                )

    def test_warm_start(self) -> None:
        with TemporaryDirectory() as path:
            good = os.path.join(path, "good.ckpt")
            bad = os.path.join(path, "bad.ckpt")
            write_checkpoint(good, SparseVector(30, [4], [0.5]))
            write_checkpoint(bad, SparseVector(31, [4], [0.5]))
            config = TaskConfig(task="multiclass", objective=ObjectiveSpec(), warm_start=good)
            setup = build_task(config, os.path.join(DATA, "docs.txt"))
            self.assertEqual(SparseVector(30, [4], [0.5]), setup.w0)
            config = TaskConfig(task="multiclass", objective=ObjectiveSpec(), warm_start=bad)
            with self.assertRaises(ConfigError):
                build_task(config, os.path.join(DATA, "docs.txt"))


class RunSeedsTestCase(unittest.TestCase):
    def test_thread_limit(self) -> None:
        with mock.patch.dict(os.environ, {"SZO_THREADS": "3"}):
            self.assertEqual(3, thread_limit())
        with mock.patch.dict(os.environ, {"SZO_THREADS": "0"}):
            with self.assertRaises(ConfigError):
                thread_limit()
        with mock.patch.dict(os.environ, {"SZO_THREADS": "many"}):
            with self.assertRaises(ConfigError):
                thread_limit()

    def test_concurrent_matches_sequential(self) -> None:
        setup = build_task(TaskConfig(objective=ObjectiveSpec("synthetic", n=32, n_bar=8)))
        config = RunConfig(max_iters=200, eval_every=50, h=0.01, mu=0.05)
        with mock.patch.dict(os.environ, {"SZO_THREADS": "3"}):
            results = run_seeds(config, setup, [4, 2, 9])
        for seed, result in zip([4, 2, 9], results):
            alone = run(
                RunConfig(max_iters=200, eval_every=50, h=0.01, mu=0.05, seed=seed),
                setup.objective,
                setup.stream(seed),
                setup.dev,
                setup.metric,
            )
            self.assertEqual(alone.log, result.log)
        self.assertNotEqual(results[0].log, results[1].log)

    def test_tasks_train(self) -> None:
        with TemporaryDirectory() as path:
            chunking = write(path, "c.txt", synth_chunking(20, seed=3))
            rerank = write(path, "n.txt", synth_nbest(10, seed=3))
            docs = write(path, "d.txt", synth_docs(20, seed=3))
            setups = [
                build_task(TaskConfig(task="chunking", objective=ObjectiveSpec(), k=4, n_dev=5), chunking),
                build_task(TaskConfig(task="rerank", objective=ObjectiveSpec(), n_dev=3), rerank),
                build_task(TaskConfig(task="multiclass", objective=ObjectiveSpec(), n_dev=5), docs),
            ]
        for setup in setups:
            for rule in UpdateRule:
                with self.subTest(task=setup.task, rule=rule.value):
                    config = RunConfig(rule=rule, max_iters=40, eval_every=20, h=0.1, mu=0.1)
                    result = run(config, setup.objective, setup.stream(0), setup.dev, setup.metric)
                    self.assertEqual(40, len(result.log.rows))
                    self.assertEqual([20, 40], [r.iter for r in result.log.dev_rows()])
                    for row in result.log.rows:
                        self.assertGreaterEqual(row.loss, 0.0)
                        self.assertLessEqual(row.loss, 1.0)
                    self.assertTrue(np.all(np.isfinite(result.state.w.values)))


@unittest.skipUnless(os.environ.get("SZO_ACCEPTANCE") == "1", "set SZO_ACCEPTANCE=1")
class RuleOrderingTestCase(unittest.TestCase):
    def test_chunking(self) -> None:
        with TemporaryDirectory() as path:
            train = write(path, "train.txt", synth_chunking(500, seed=1))
            setup = build_task(TaskConfig(task="chunking", objective=ObjectiveSpec(), k=20), train)
        order = (
            UpdateRule.SFO,
            UpdateRule.TWO_POINT,
            UpdateRule.BASELINE_COMPARISON,
            UpdateRule.FUNCTION_COMPARISON,
        )
        final = []
        for rule in order:
            config = RunConfig(rule=rule, h=0.01, mu=0.01, max_iters=50_000, eval_every=50_000)
            results = run_seeds(config, setup, [1, 2, 3])
            final.append(float(np.mean([result.log.curve()[-1] for result in results])))
        for rule, better, worse in zip(order[1:], final, final[1:]):
            with self.subTest(rule.value):
                self.assertLessEqual(better, worse + 0.01)


if __name__ == "__main__":
    unittest.main()
