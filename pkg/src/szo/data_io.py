"""Reading datasets and writing run artefacts.

All formats are line-oriented UTF-8 text:

* CoNLL chunking files: ``word POS chunk`` per line, blank line between sentences.
* n-best files: ``id ||| hypothesis tokens ||| f1 ... fd ||| reference tokens``;
  the reference is required on the first line of each id block.
* document files: a ``classes=<C> vocab=<V>`` header, then
  ``class<TAB>index:value ...`` per document.
* run logs: CSV with header ``iter,loss,avg_cum_loss,nbar,dev_metric``.
* checkpoints: a ``dim=<n>`` header and one ``index:value`` line.
"""

from __future__ import annotations

import configparser
import csv
import logging
import os
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DataError
from .metrics import sentence_bleu_smoothed
from .optimizer import LogRow, RunLog
from .sparse_linalg import SparseVector, format_vectors, parse_vectors
from .structpred import FeatureIndex, Instance, SequenceInstance, multiclass_instance

__all__ = [
    "ConllRecord",
    "NBestRecord",
    "DocRecord",
    "parse_conll",
    "format_conll",
    "parse_nbest_records",
    "parse_nbest",
    "nbest_instance",
    "parse_doc_records",
    "parse_docs",
    "write_runlog",
    "read_runlog",
    "write_checkpoint",
    "read_checkpoint",
    "write_registry",
    "read_registry",
    "load_config",
    "RUNLOG_HEADER",
]

log = logging.getLogger(__name__)

PathLike = str | os.PathLike[str]
RUNLOG_HEADER = ("iter", "loss", "avg_cum_loss", "nbar", "dev_metric")


def _read_lines(path: PathLike) -> list[str]:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read {path}: {e}") from e


@dataclass(frozen=True)
class ConllRecord:
    """One sentence as read from a CoNLL file, with its original tags."""

    line: int
    rows: tuple[tuple[str, str, str], ...]


def _np_tag(tag: str) -> str:
    """Reduce a CoNLL chunk tag to B/I/O of noun phrases."""
    if tag in ("B", "I", "O"):
        return tag
    prefix, _, kind = tag.partition("-")
    if kind == "NP" and prefix in ("B", "I"):
        return prefix
    return "O"


def _to_sequence(record: ConllRecord, index: int) -> SequenceInstance:
    tags = []
    prev = "O"
    for _, _, chunk in record.rows:
        tag = _np_tag(chunk)
        if tag == "I" and prev == "O":
            tag = "B"
        tags.append(tag)
        prev = tag
    tokens = tuple((word, pos) for word, pos, _ in record.rows)
    return SequenceInstance(f"s{index}", tokens, tuple(tags))


def _conll_records(path: PathLike, strict: bool) -> Iterator[ConllRecord]:
    rows: list[tuple[str, str, str]] = []
    start = 0
    bad: str | None = None
    for line_no, line in enumerate([*_read_lines(path), ""], 1):
        if not line.strip():
            if bad is not None:
                log.warning("%s: skipping sentence at line %d: %s", path, start, bad)
            elif rows:
                yield ConllRecord(start, tuple(rows))
            rows = []
            bad = None
            continue
        if not rows and bad is None:
            start = line_no
        columns = line.split()
        if len(columns) != 3:
            message = f"line {line_no}: expected 3 columns, got {len(columns)}"
            if strict:
                raise DataError(f"{path}: {message}")
            if bad is None:
                bad = message
            continue
        rows.append((columns[0], columns[1], columns[2]))


def parse_conll(path: PathLike, strict: bool = True) -> list[SequenceInstance]:
    """Sentences of a CoNLL-2000 file in file order, tagged for NP chunking.

    In strict mode a malformed line raises :class:`DataError`; otherwise the
    sentence containing it is skipped with a warning.
    """
    return [
        _to_sequence(record, i)
        for i, record in enumerate(_conll_records(path, strict))
    ]


def format_conll(
    sentences: Iterable[tuple[Sequence[tuple[str, str]], Sequence[str]]],
) -> str:
    """CoNLL text for ``(tokens, tags)`` sentences with B/I/O noun-phrase tags."""
    blocks = []
    for tokens, tags in sentences:
        lines = [
            f"{word} {pos} {'O' if tag == 'O' else tag + '-NP'}"
            for (word, pos), tag in zip(tokens, tags)
        ]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


@dataclass(frozen=True)
class NBestRecord:
    id: str
    hypotheses: tuple[tuple[str, ...], ...]
    features: tuple[tuple[float, ...], ...]
    reference: tuple[str, ...]

    @property
    def arity(self) -> int:
        return len(self.features[0])


def parse_nbest_records(path: PathLike) -> list[NBestRecord]:
    blocks: dict[str, list[tuple[tuple[str, ...], tuple[float, ...]]]] = {}
    references: dict[str, tuple[str, ...]] = {}
    for line_no, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            continue
        fields = [part.strip() for part in line.split("|||")]
        if len(fields) not in (3, 4):
            raise DataError(f"{path}: line {line_no}: expected 3 or 4 '|||' fields")
        key = fields[0]
        try:
            features = tuple(float(v) for v in fields[2].split())
        except ValueError:
            raise DataError(f"{path}: line {line_no}: bad feature value") from None
        if key not in blocks:
            if len(fields) != 4 or not fields[3]:
                raise DataError(
                    f"{path}: line {line_no}: missing reference for id {key!r}"
                )
            references[key] = tuple(fields[3].split())
            blocks[key] = []
        elif blocks[key] and len(features) != len(blocks[key][0][1]):
            raise DataError(
                f"{path}: line {line_no}: id {key!r} has {len(features)} features, "
                f"expected {len(blocks[key][0][1])}"
            )
        blocks[key].append((tuple(fields[1].split()), features))
    records = [
        NBestRecord(
            key,
            tuple(hyp for hyp, _ in entries),
            tuple(features for _, features in entries),
            references[key],
        )
        for key, entries in blocks.items()
    ]
    arities = {record.arity for record in records}
    if len(arities) > 1:
        raise DataError(f"{path}: feature arity differs across ids: {sorted(arities)}")
    return records


def nbest_instance(record: NBestRecord) -> Instance:
    """Dense features stored sparsely; loss is 1 - smoothed sentence BLEU."""
    arity = record.arity
    return Instance(
        record.id,
        [
            (
                hyp,
                SparseVector(arity, range(arity), features),
                1.0 - sentence_bleu_smoothed(hyp, record.reference),
            )
            for hyp, features in zip(record.hypotheses, record.features)
        ],
    )


def parse_nbest(path: PathLike) -> list[Instance]:
    return [nbest_instance(record) for record in parse_nbest_records(path)]


@dataclass(frozen=True)
class DocRecord:
    id: str
    gold: int
    vector: SparseVector


def _doc_header(line: str, path: PathLike) -> tuple[int, int]:
    try:
        fields = dict(part.split("=", 1) for part in line.split())
        return int(fields["classes"]), int(fields["vocab"])
    except (ValueError, KeyError):
        raise DataError(f"{path}: bad header {line!r}") from None


def parse_doc_records(path: PathLike) -> tuple[int, list[DocRecord]]:
    """The class count and the documents of a document file."""
    lines = _read_lines(path)
    if not lines:
        raise DataError(f"{path}: missing header")
    num_classes, vocab = _doc_header(lines[0], path)
    records = []
    for line_no, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        label, _, body = line.partition("\t")
        try:
            gold = int(label)
        except ValueError:
            raise DataError(f"{path}: line {line_no}: bad class {label!r}") from None
        if not 0 <= gold < num_classes:
            raise DataError(f"{path}: line {line_no}: class {gold} >= {num_classes}")
        entries: dict[int, float] = {}
        for pair in body.split():
            index_str, _, value_str = pair.partition(":")
            try:
                index, value = int(index_str), float(value_str)
            except ValueError:
                raise DataError(f"{path}: line {line_no}: bad pair {pair!r}") from None
            if not 0 <= index < vocab:
                raise DataError(f"{path}: line {line_no}: index {index} >= {vocab}")
            if value != value or value in (float("inf"), float("-inf")):
                raise DataError(f"{path}: line {line_no}: non-finite weight")
            if index in entries:
                log.warning(
                    "%s: line %d: duplicate index %d, keeping the last value",
                    path,
                    line_no,
                    index,
                )
            entries[index] = value
        records.append(
            DocRecord(f"d{len(records)}", gold, SparseVector.from_dict(vocab, entries))
        )
    return num_classes, records


def parse_docs(path: PathLike) -> list[Instance]:
    num_classes, records = parse_doc_records(path)
    return [
        multiclass_instance(record.vector, num_classes, record.gold, record.id)
        for record in records
    ]


def _format_float(value: float) -> str:
    return repr(float(value))


def write_runlog(run_log: RunLog, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RUNLOG_HEADER)
        for row in run_log.rows:
            writer.writerow(
                (
                    row.iter,
                    _format_float(row.loss),
                    _format_float(row.avg_cum_loss),
                    row.nbar,
                    "" if row.dev_metric is None else _format_float(row.dev_metric),
                )
            )


def read_runlog(path: PathLike) -> RunLog:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != RUNLOG_HEADER:
                raise DataError(f"{path}: unexpected run log header {header!r}")
            rows = [
                LogRow(
                    int(it),
                    float(loss),
                    float(avg),
                    int(nbar),
                    float(dev) if dev else None,
                )
                for it, loss, avg, nbar, dev in reader
            ]
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except ValueError as e:
        raise DataError(f"{path}: malformed run log row: {e}") from e
    return RunLog(rows)


def write_checkpoint(path: PathLike, weights: SparseVector) -> None:
    Path(path).write_text(format_vectors([weights], weights.dim), encoding="utf-8")


def read_checkpoint(path: PathLike) -> SparseVector:
    try:
        vectors = parse_vectors(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    if len(vectors) != 1:
        raise DataError(f"{path}: expected one weight vector, found {len(vectors)}")
    return vectors[0]


def write_registry(path: PathLike, registry: FeatureIndex) -> None:
    Path(path).write_text(
        "".join(f"{name}\n" for name in registry.names()), encoding="utf-8"
    )


def read_registry(path: PathLike) -> FeatureIndex:
    return FeatureIndex(_read_lines(path)).freeze()


def load_config(path: PathLike) -> dict[str, str]:
    """``key = value`` lines as a dict; ``#`` starts a comment."""
    parser = configparser.ConfigParser(
        interpolation=None, comment_prefixes=("#",), inline_comment_prefixes=("#",)
    )
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        parser.read_string("[run]\n" + text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    return {key.replace("-", "_"): value for key, value in parser["run"].items()}
