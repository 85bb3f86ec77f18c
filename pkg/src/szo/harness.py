"""Experiment assembly for the four tasks.

A task is turned into a :class:`TaskSetup`: the objective the optimiser sees,
training examples, development examples and the development metric used to
pick the returned checkpoint. Supervised data is converted to bandit feedback
here: gold references stay inside :class:`~szo.structpred.Instance` and the
learner only sees the loss of candidates it asks about.
"""

from __future__ import annotations

import csv
import logging
import os
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, TypeVar

import numpy as np
import numpy.typing as npt

from .data_io import (
    DocRecord,
    NBestRecord,
    format_conll,
    nbest_instance,
    parse_conll,
    parse_doc_records,
    parse_nbest_records,
    read_checkpoint,
)
from .errors import ConfigError, DataError
from .metrics import accuracy, corpus_bleu, corpus_chunk_f1
from .objectives import (
    AnnealedCriterion,
    MapCriterion,
    Objective,
    ObjectiveSpec,
    SyntheticFunction,
)
from .optimizer import DATA_STREAM, DevMetric, RunConfig, RunLog, RunResult, run
from .perturbation import RngStream
from .sparse_linalg import SparseVector
from .structpred import (
    DEFAULT_K,
    ChunkingFeatures,
    FeatureIndex,
    Instance,
    LinearModel,
    SequenceInstance,
    as_candidate_instance,
    build_chunking_features,
    multiclass_instance,
    register_chunking_features,
    viterbi_decode,
)

__all__ = [
    "TASKS",
    "TaskConfig",
    "TaskSetup",
    "SequenceExample",
    "SeedSummary",
    "build_task",
    "split_dev",
    "synthetic_samples",
    "epoch_stream",
    "synthetic_metric",
    "chunking_metric",
    "rerank_metric",
    "multiclass_metric",
    "thread_limit",
    "run_seeds",
    "aggregate",
    "write_summary",
    "iterations_to_fraction",
    "synth_chunking",
    "synth_nbest",
    "synth_docs",
]

log = logging.getLogger(__name__)

T = TypeVar("T")

TASKS = ("synth", "chunking", "rerank", "multiclass")
_SAMPLE_BLOCK = 4096


@dataclass(frozen=True)
class TaskConfig:
    task: str = "synth"
    objective: ObjectiveSpec = field(
        default_factory=lambda: ObjectiveSpec(kind="synthetic")
    )
    #: size of the k-best candidate list for chunking
    k: int = DEFAULT_K
    #: when no dev file is given, hold out this many leading training items
    n_dev: int = 0
    strict: bool = True
    warm_start: str | None = None

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.n_dev < 0:
            raise ConfigError(f"n_dev must be non-negative, got {self.n_dev}")
        if (self.task == "synth") != (self.objective.kind == "synthetic"):
            raise ConfigError(
                f"objective {self.objective.kind!r} does not fit task {self.task!r}"
            )


class SequenceExample:
    """A sentence whose candidate list is re-decoded under the current weights."""

    def __init__(
        self, seq: SequenceInstance, feature_space: FeatureIndex, k: int = DEFAULT_K
    ) -> None:
        self.seq = seq
        self.feature_space = feature_space
        self.k = k

    @cached_property
    def features(self) -> ChunkingFeatures:
        return build_chunking_features(self.seq, self.feature_space)

    def materialize(self, weights: SparseVector) -> Instance:
        model = LinearModel(weights, self.feature_space)
        return as_candidate_instance(self.seq, model, self.k, self.features)

    def __repr__(self) -> str:
        return f"SequenceExample({self.seq.id!r}, k={self.k})"


@dataclass
class TaskSetup:
    task: str
    objective: Objective[Any]
    train: Sequence[Any]
    dev: Sequence[Any]
    metric: DevMetric | None
    feature_space: FeatureIndex | None = None
    w0: SparseVector | None = None

    def stream(self, seed: int) -> Iterator[Any]:
        """The training examples of the run with this seed."""
        if isinstance(self.objective, SyntheticFunction):
            return synthetic_samples(self.objective.num_samples, seed)
        return epoch_stream(self.train, seed)


def split_dev(items: Sequence[T], n_dev: int) -> tuple[list[T], list[T]]:
    """``(train, dev)`` where dev is the first ``n_dev`` items."""
    if not 0 <= n_dev <= len(items):
        raise ValueError(f"n_dev must be in [0, {len(items)}], got {n_dev}")
    return list(items[n_dev:]), list(items[:n_dev])


def synthetic_samples(num_samples: int, seed: int) -> Iterator[int]:
    """An endless stream of sample indices drawn uniformly with replacement."""
    rng = RngStream(seed, DATA_STREAM)
    while True:
        block = np.floor(rng.uniforms(_SAMPLE_BLOCK) * num_samples).astype(np.int64)
        for x in block:
            yield int(x)


def epoch_stream(items: Sequence[T], seed: int) -> Iterator[T]:
    """``items`` in a fresh random order every pass, endlessly."""
    if not items:
        raise DataError("no training examples")
    rng = RngStream(seed, DATA_STREAM)
    while True:
        for i in rng.generator().permutation(len(items)):
            yield items[int(i)]


def synthetic_metric(func: SyntheticFunction) -> DevMetric:
    return DevMetric("f", func.mean_value, higher_is_better=False)


def chunking_metric(
    sentences: Sequence[SequenceInstance], feature_space: FeatureIndex
) -> DevMetric:
    """Corpus chunk F1 of Viterbi decoding."""
    features = [build_chunking_features(seq, feature_space) for seq in sentences]

    def evaluate(w: SparseVector) -> float:
        model = LinearModel(w, feature_space)
        return corpus_chunk_f1(
            (viterbi_decode(model, seq, feats), seq.gold)
            for seq, feats in zip(sentences, features)
        )

    return DevMetric("f1", evaluate)


def rerank_metric(
    records: Sequence[NBestRecord], feature_space: FeatureIndex
) -> DevMetric:
    """Corpus BLEU of the top-scoring hypothesis of every n-best list."""
    instances = [nbest_instance(record) for record in records]

    def evaluate(w: SparseVector) -> float:
        model = LinearModel(w, feature_space)
        return corpus_bleu(
            (record.hypotheses[model.predict(inst)], record.reference)
            for inst, record in zip(instances, records)
        )

    return DevMetric("bleu", evaluate)


def multiclass_metric(
    num_classes: int, records: Sequence[DocRecord], feature_space: FeatureIndex
) -> DevMetric:
    instances = [
        multiclass_instance(record.vector, num_classes, record.gold, record.id)
        for record in records
    ]

    def evaluate(w: SparseVector) -> float:
        model = LinearModel(w, feature_space)
        return accuracy(
            (inst.outputs[model.predict(inst)], record.gold)
            for inst, record in zip(instances, records)
        )

    return DevMetric("accuracy", evaluate)


def _criterion(spec: ObjectiveSpec, feature_space: FeatureIndex) -> MapCriterion:
    if spec.kind == "annealed_loss":
        return AnnealedCriterion(feature_space, spec.gamma)
    return MapCriterion(feature_space)


def _require(path: str | None, name: str, task: str) -> str:
    if path is None:
        raise ConfigError(f"task {task!r} needs --{name}")
    return path


def _split(
    train: list[T], dev_path: str | None, n_dev: int, load: Callable[[str], list[T]]
) -> tuple[list[T], list[T]]:
    if dev_path is not None:
        return train, load(dev_path)
    return split_dev(train, n_dev)


def _build_synth(config: TaskConfig) -> TaskSetup:
    spec = config.objective
    try:
        func = spec.synthetic()
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return TaskSetup(
        "synth", func, (), list(range(func.num_samples)), synthetic_metric(func)
    )


def _build_chunking(
    config: TaskConfig, train_path: str | None, dev_path: str | None
) -> TaskSetup:
    train_path = _require(train_path, "train", config.task)

    def load(path: str) -> list[SequenceInstance]:
        return parse_conll(path, config.strict)

    train, dev = _split(load(train_path), dev_path, config.n_dev, load)
    if not train:
        raise DataError(f"{train_path}: no training sentences")
    registry = FeatureIndex()
    for seq in train:
        register_chunking_features(seq, registry)
    registry.freeze()
    log.info(
        "chunking: %d training sentences, %d dev sentences, %d features",
        len(train),
        len(dev),
        registry.size,
    )
    return TaskSetup(
        "chunking",
        _criterion(config.objective, registry),
        [SequenceExample(seq, registry, config.k) for seq in train],
        dev,
        chunking_metric(dev, registry) if dev else None,
        registry,
    )


def _build_rerank(
    config: TaskConfig, train_path: str | None, dev_path: str | None
) -> TaskSetup:
    train_path = _require(train_path, "train", config.task)
    train, dev = _split(
        parse_nbest_records(train_path), dev_path, config.n_dev, parse_nbest_records
    )
    if not train:
        raise DataError(f"{train_path}: no n-best lists")
    arity = train[0].arity
    if any(record.arity != arity for record in dev):
        raise DataError("dev n-best lists differ in feature arity from training")
    registry = FeatureIndex.anonymous(arity)
    return TaskSetup(
        "rerank",
        _criterion(config.objective, registry),
        [nbest_instance(record) for record in train],
        dev,
        rerank_metric(dev, registry) if dev else None,
        registry,
    )


def _build_multiclass(
    config: TaskConfig, train_path: str | None, dev_path: str | None
) -> TaskSetup:
    train_path = _require(train_path, "train", config.task)
    num_classes, records = parse_doc_records(train_path)
    vocab = records[0].vector.dim if records else 0

    def load(path: str) -> list[DocRecord]:
        dev_classes, dev_records = parse_doc_records(path)
        if dev_classes != num_classes or any(r.vector.dim != vocab for r in dev_records):
            raise DataError(f"{path}: header differs from the training file")
        return dev_records

    train, dev = _split(records, dev_path, config.n_dev, load)
    if not train:
        raise DataError(f"{train_path}: no documents")
    registry = FeatureIndex.anonymous(num_classes * vocab)
    return TaskSetup(
        "multiclass",
        _criterion(config.objective, registry),
        [multiclass_instance(r.vector, num_classes, r.gold, r.id) for r in train],
        dev,
        multiclass_metric(num_classes, dev, registry) if dev else None,
        registry,
    )


def build_task(
    config: TaskConfig, train_path: str | None = None, dev_path: str | None = None
) -> TaskSetup:
    if config.task == "synth":
        setup = _build_synth(config)
    elif config.task == "chunking":
        setup = _build_chunking(config, train_path, dev_path)
    elif config.task == "rerank":
        setup = _build_rerank(config, train_path, dev_path)
    else:
        setup = _build_multiclass(config, train_path, dev_path)
    if config.warm_start is not None:
        w0 = read_checkpoint(config.warm_start)
        if w0.dim != setup.objective.dim:
            raise ConfigError(
                f"warm start {config.warm_start} has dim {w0.dim}, "
                f"the {config.task} task has {setup.objective.dim}"
            )
        setup.w0 = w0
    return setup


def thread_limit() -> int:
    """Worker threads for concurrent runs, capped by ``SZO_THREADS``."""
    value = os.environ.get("SZO_THREADS")
    if value is None:
        return os.cpu_count() or 1
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"SZO_THREADS must be an integer, got {value!r}") from None
    if threads < 1:
        raise ConfigError(f"SZO_THREADS must be positive, got {threads}")
    return threads


def run_seeds(
    config: RunConfig, setup: TaskSetup, seeds: Sequence[int]
) -> list[RunResult]:
    """One run per seed, concurrently; results are in seed order."""

    def run_one(seed: int) -> RunResult:
        seeded = replace(config, seed=seed)
        return run(
            seeded,
            setup.objective,
            setup.stream(seed),
            setup.dev,
            setup.metric,
            setup.w0,
        )

    with ThreadPoolExecutor(max_workers=min(thread_limit(), len(seeds) or 1)) as pool:
        return list(pool.map(run_one, seeds))


@dataclass(frozen=True)
class SeedSummary:
    """Mean and two standard deviations of the average cumulative loss."""

    iters: npt.NDArray[np.int64]
    mean: npt.NDArray[np.float64]
    lower: npt.NDArray[np.float64]
    upper: npt.NDArray[np.float64]


def aggregate(logs: Sequence[RunLog]) -> SeedSummary:
    if not logs:
        raise ValueError("nothing to aggregate")
    lengths = {len(run_log.rows) for run_log in logs}
    if len(lengths) != 1:
        raise ValueError(f"run logs differ in length: {sorted(lengths)}")
    curves = np.array([run_log.curve() for run_log in logs])
    mean = curves.mean(axis=0)
    spread = 2.0 * curves.std(axis=0)
    iters = np.array([row.iter for row in logs[0].rows], dtype=np.int64)
    return SeedSummary(iters, mean, mean - spread, mean + spread)


def write_summary(summary: SeedSummary, path: str | os.PathLike[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("iter", "mean", "lower", "upper"))
        for row in zip(summary.iters, summary.mean, summary.lower, summary.upper):
            writer.writerow((int(row[0]), *(repr(float(v)) for v in row[1:])))


def iterations_to_fraction(
    run_log: RunLog, fraction: float, reference_iter: int
) -> int | None:
    """First iteration after ``reference_iter`` whose average cumulative loss
    is at most ``fraction`` times the value at ``reference_iter``."""
    if not 1 <= reference_iter <= run_log.last_iter:
        raise ValueError(f"reference_iter must be in [1, {run_log.last_iter}]")
    threshold = fraction * run_log.rows[reference_iter - 1].avg_cum_loss
    for row in run_log.rows[reference_iter:]:
        if row.avg_cum_loss <= threshold:
            return row.iter
    return None


_DETERMINERS = ("the", "a", "this", "that", "every", "some", "no")
_ADJECTIVES = (
    "big", "small", "red", "old", "new", "quiet", "quick", "green",
    "happy", "dark", "bright", "cold", "early", "strange", "heavy", "soft",
)
_NOUNS = (
    "dog", "cat", "market", "bank", "price", "report", "company", "river",
    "doctor", "house", "car", "letter", "garden", "city", "plan", "window",
    "music", "share", "child", "road", "song", "table", "storm", "engine",
    "budget", "ticket", "stock", "field", "court", "bridge",
)
_VERBS = (
    "saw", "bought", "sold", "found", "made", "took", "sent", "left",
    "watched", "built", "liked", "moved", "opened", "closed", "raised", "cut",
)
_PREPOSITIONS = ("in", "on", "with", "near", "under", "over", "from", "for")
_PRONOUNS = ("he", "she", "it", "they", "we")
_SYLLABLES = ("ka", "lo", "ri", "ne", "ta", "mo", "su", "vi", "de", "ga", "po", "lu")


def _pick(gen: np.random.Generator, words: Sequence[str]) -> str:
    return words[int(gen.integers(len(words)))]


def _name(gen: np.random.Generator) -> str:
    parts = [_pick(gen, _SYLLABLES) for _ in range(int(gen.integers(2, 4)))]
    return "".join(parts).capitalize()


def _noun_phrase(gen: np.random.Generator) -> list[tuple[str, str]]:
    kind = gen.random()
    if kind < 0.15:
        return [(_pick(gen, _PRONOUNS), "PRP")]
    if kind < 0.35:
        return [(_name(gen), "NNP") for _ in range(int(gen.integers(1, 3)))]
    phrase = [(_pick(gen, _DETERMINERS), "DT")]
    phrase += [(_pick(gen, _ADJECTIVES), "JJ") for _ in range(int(gen.integers(0, 3)))]
    if gen.random() < 0.3:
        phrase.append((_pick(gen, _NOUNS), "NN"))
    if gen.random() < 0.4:
        phrase.append((_pick(gen, _NOUNS) + "s", "NNS"))
    else:
        phrase.append((_pick(gen, _NOUNS), "NN"))
    return phrase


def _chunked(phrase: list[tuple[str, str]]) -> list[str]:
    return ["B"] + ["I"] * (len(phrase) - 1)


def synth_chunking(size: int, seed: int) -> str:
    """A CoNLL corpus of ``size`` sentences built from a toy grammar."""
    if size < 0:
        raise ValueError(f"size must be non-negative, got {size}")
    gen = RngStream(seed, DATA_STREAM).generator()
    sentences = []
    for _ in range(size):
        tokens: list[tuple[str, str]] = []
        tags: list[str] = []
        parts: list[tuple[list[tuple[str, str]], bool]] = [(_noun_phrase(gen), True)]
        parts.append(([(_pick(gen, _VERBS), "VBD")], False))
        parts.append((_noun_phrase(gen), True))
        while gen.random() < 0.4:
            parts.append(([(_pick(gen, _PREPOSITIONS), "IN")], False))
            parts.append((_noun_phrase(gen), True))
        parts.append(([(".", ".")], False))
        for phrase, is_np in parts:
            tokens += phrase
            tags += _chunked(phrase) if is_np else ["O"] * len(phrase)
        sentences.append((tokens, tags))
    return format_conll(sentences)


def synth_nbest(size: int, seed: int, nbest: int = 10, arity: int = 14) -> str:
    """``size`` n-best lists of noisy copies of a random reference.

    The first feature tracks the corruption rate of a hypothesis, the others
    are weakly correlated with it.
    """
    if size < 0:
        raise ValueError(f"size must be non-negative, got {size}")
    gen = RngStream(seed, DATA_STREAM).generator()
    vocab = [a + b for a in _SYLLABLES for b in _SYLLABLES]
    loadings = gen.normal(0.0, 0.5, arity)
    loadings[0] = 1.0
    lines = []
    for i in range(size):
        reference = [_pick(gen, vocab) for _ in range(int(gen.integers(4, 13)))]
        for j in range(nbest):
            rate = float(gen.uniform(0.0, 0.6))
            hyp = []
            for token in reference:
                draw = gen.random()
                if draw < rate / 3:
                    continue
                hyp.append(_pick(gen, vocab) if draw < rate else token)
            if not hyp:
                hyp = [_pick(gen, vocab)]
            features = -rate * loadings + gen.normal(0.0, 0.1, arity)
            fields = [str(i), " ".join(hyp), " ".join(f"{v:.6f}" for v in features)]
            if j == 0:
                fields.append(" ".join(reference))
            lines.append(" ||| ".join(fields) + "\n")
    return "".join(lines)


def synth_docs(size: int, seed: int, num_classes: int = 4, vocab: int = 400) -> str:
    """``size`` tf-idf documents whose terms lean towards a per-class topic."""
    if size < 0:
        raise ValueError(f"size must be non-negative, got {size}")
    if num_classes < 2:
        raise ValueError(f"num_classes must be at least 2, got {num_classes}")
    gen = RngStream(seed, DATA_STREAM).generator()
    topic_size = vocab // (2 * num_classes)
    common = np.arange(num_classes * topic_size, vocab)
    idf = gen.uniform(1.0, 3.0, vocab)
    lines = [f"classes={num_classes} vocab={vocab}\n"]
    for _ in range(size):
        gold = int(gen.integers(num_classes))
        topic = np.arange(gold * topic_size, (gold + 1) * topic_size)
        length = int(gen.integers(8, 21))
        from_topic = gen.random(length) < 0.6
        terms = np.where(
            from_topic,
            gen.choice(topic, length),
            gen.choice(common, length),
        )
        indices, counts = np.unique(terms, return_counts=True)
        weights = (1.0 + np.log(counts)) * idf[indices]
        weights /= np.linalg.norm(weights)
        pairs = " ".join(f"{i}:{w:.6f}" for i, w in zip(indices, weights))
        lines.append(f"{gold}\t{pairs}\n")
    return "".join(lines)
