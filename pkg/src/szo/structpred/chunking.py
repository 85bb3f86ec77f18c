"""Noun-phrase chunking as second-order sequence labelling.

A position ``i`` carries the state ``(c[i-1], c[i])``, a pair of chunk tags out
of ``O < B < I``; the tag before the first token is ``O``. States are ordered
lexicographically, which fixes how ties are broken: among equal-scoring paths
the decoder prefers lower state indices.

Each position fires indicator features that join the state with a context:

====================  ===============================
template              context
====================  ===============================
``w[-2]`` .. ``w[2]``  word at ``i-2`` .. ``i+2``
``p[-2]`` .. ``p[2]``  POS tag at ``i-2`` .. ``i+2``
``w[-1,0]``            words at ``i-1, i``
``p[-1,0]``            POS tags at ``i-1, i``
``p[-2,-1,0]``         POS tags at ``i-2, i-1, i``
====================  ===============================

Contexts reaching outside the sentence do not fire. A feature is named
``template|context|prev_cur``, for example ``w[0]|dog|O_B``.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from ..metrics import chunk_f1
from ..sparse_linalg import SparseVector
from .model import FeatureIndex, Instance, LinearModel

__all__ = [
    "TAGS",
    "STATES",
    "SequenceInstance",
    "ChunkingFeatures",
    "is_valid_bio",
    "position_contexts",
    "build_chunking_features",
    "register_chunking_features",
    "viterbi_decode",
    "kbest_decode",
    "valid_tag_sequences",
    "sequence_score",
    "as_candidate_instance",
    "DEFAULT_K",
]

TAGS = ("O", "B", "I")
STATES: tuple[tuple[str, str], ...] = tuple(itertools.product(TAGS, TAGS))
STATE_NAMES = tuple(f"{prev}_{cur}" for prev, cur in STATES)
_STATE_INDEX = {state: s for s, state in enumerate(STATES)}
DEFAULT_K = 20

_NEG_INF = float("-inf")


def _allowed(prev: str, cur: str) -> bool:
    return not (prev == "O" and cur == "I")


def _transition_matrix() -> npt.NDArray[np.float64]:
    trans = np.full((len(STATES), len(STATES)), _NEG_INF)
    for s, (_, b) in enumerate(STATES):
        for t, (c, d) in enumerate(STATES):
            if b == c and _allowed(c, d):
                trans[s, t] = 0.0
    return trans


_TRANSITIONS = _transition_matrix()
_START = np.array(
    [0.0 if a == "O" and _allowed(a, b) else _NEG_INF for a, b in STATES]
)


def is_valid_bio(tags: Sequence[str]) -> bool:
    prev = "O"
    for tag in tags:
        if tag not in TAGS or not _allowed(prev, tag):
            return False
        prev = tag
    return True


@dataclass(frozen=True)
class SequenceInstance:
    """A tokenised sentence of ``(word, POS)`` pairs with hidden gold chunk tags."""

    id: str
    tokens: tuple[tuple[str, str], ...]
    gold: tuple[str, ...] = field(repr=False)

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.gold):
            raise ValueError(f"sentence {self.id!r}: tokens and tags differ in length")
        if not is_valid_bio(self.gold):
            raise ValueError(f"sentence {self.id!r}: gold tags are not valid BIO")

    def __len__(self) -> int:
        return len(self.tokens)


def position_contexts(
    tokens: Sequence[tuple[str, str]], i: int
) -> list[tuple[str, str]]:
    """The ``(template, context)`` pairs that fire at position ``i``."""
    n = len(tokens)
    words = [w for w, _ in tokens]
    tags = [p for _, p in tokens]
    out = []
    for offset in range(-2, 3):
        j = i + offset
        if 0 <= j < n:
            out.append((f"w[{offset}]", words[j]))
            out.append((f"p[{offset}]", tags[j]))
    if i >= 1:
        out.append(("w[-1,0]", f"{words[i - 1]} {words[i]}"))
        out.append(("p[-1,0]", f"{tags[i - 1]} {tags[i]}"))
    if i >= 2:
        out.append(("p[-2,-1,0]", f"{tags[i - 2]} {tags[i - 1]} {tags[i]}"))
    return out


def _position_names(
    tokens: Sequence[tuple[str, str]], i: int
) -> Iterator[tuple[int, str]]:
    contexts = position_contexts(tokens, i)
    for s, state_name in enumerate(STATE_NAMES):
        for template, context in contexts:
            yield s, f"{template}|{context}|{state_name}"


def register_chunking_features(seq: SequenceInstance, registry: FeatureIndex) -> None:
    """Add every feature the sentence can fire, in all states, to ``registry``."""
    for i in range(len(seq)):
        for _, name in _position_names(seq.tokens, i):
            registry.add(name)


class ChunkingFeatures:
    """Feature indices of one sentence for every (position, state) pair."""

    __slots__ = ("dim", "length", "_indices", "_segments")

    def __init__(
        self, dim: int, length: int, table: list[list[list[int]]]
    ) -> None:
        self.dim = dim
        self.length = length
        indices: list[int] = []
        segments: list[int] = []
        for i, row in enumerate(table):
            for s, cell in enumerate(row):
                indices.extend(cell)
                segments.extend([i * len(STATES) + s] * len(cell))
        self._indices = np.asarray(indices, dtype=np.int64)
        self._segments = np.asarray(segments, dtype=np.int64)

    def emissions(self, weights: SparseVector) -> npt.NDArray[np.float64]:
        """The ``(length, 9)`` matrix of position-state scores under ``weights``."""
        size = self.length * len(STATES)
        if not self._indices.size:
            return np.zeros((self.length, len(STATES)))
        unique, inverse = np.unique(self._indices, return_inverse=True)
        values = weights.gather(unique)[inverse]
        flat = np.bincount(self._segments, weights=values, minlength=size)
        return flat.reshape(self.length, len(STATES))

    def feature_vector(self, tags: Sequence[str]) -> SparseVector:
        """phi(x, y) for the tag sequence ``tags``: feature firing counts."""
        if len(tags) != self.length:
            raise ValueError("tag sequence length differs from the sentence")
        prev = "O"
        wanted = []
        for i, tag in enumerate(tags):
            wanted.append(i * len(STATES) + _STATE_INDEX[(prev, tag)])
            prev = tag
        mask = np.isin(self._segments, wanted)
        unique, counts = np.unique(self._indices[mask], return_counts=True)
        return SparseVector._trusted(self.dim, unique, counts.astype(np.float64))

    def names(self, registry: FeatureIndex) -> list[str]:
        return [registry.name(int(i)) for i in self._indices]


def build_chunking_features(
    seq: SequenceInstance, registry: FeatureIndex
) -> ChunkingFeatures:
    """Look up the features of ``seq`` in a frozen registry.

    Features the registry has never seen are dropped.
    """
    if not registry.frozen:
        raise RuntimeError("the feature registry must be frozen before scoring")
    table: list[list[list[int]]] = [
        [[] for _ in STATES] for _ in range(len(seq))
    ]
    for i in range(len(seq)):
        for s, name in _position_names(seq.tokens, i):
            index = registry.get(name)
            if index is not None:
                table[i][s].append(index)
    return ChunkingFeatures(registry.size, len(seq), table)


def _features(
    model: LinearModel, seq: SequenceInstance, features: ChunkingFeatures | None
) -> ChunkingFeatures:
    if features is None:
        return build_chunking_features(seq, model.feature_space)
    return features


def _tags_of(path: Sequence[int]) -> tuple[str, ...]:
    return tuple(STATES[s][1] for s in path)


def viterbi_decode(
    model: LinearModel,
    seq: SequenceInstance,
    features: ChunkingFeatures | None = None,
) -> tuple[str, ...]:
    """The highest scoring valid BIO tagging of ``seq``."""
    if not len(seq):
        return ()
    emissions = _features(model, seq, features).emissions(model.weights)
    score = _START + emissions[0]
    backpointers = []
    for i in range(1, len(seq)):
        candidates = score[:, None] + _TRANSITIONS
        backpointers.append(np.argmax(candidates, axis=0))
        score = candidates.max(axis=0) + emissions[i]
    state = int(np.argmax(score))
    path = [state]
    for back in reversed(backpointers):
        state = int(back[state])
        path.append(state)
    path.reverse()
    return _tags_of(path)


def kbest_decode(
    model: LinearModel,
    seq: SequenceInstance,
    k: int,
    features: ChunkingFeatures | None = None,
) -> list[tuple[tuple[str, ...], float]]:
    """The ``k`` best valid taggings with their scores, best first."""
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if not len(seq):
        return [((), 0.0)]
    emissions = _features(model, seq, features).emissions(model.weights)
    num_states = len(STATES)
    # scores[s, r] is the r-th best prefix ending in state s; -inf pads
    scores = np.full((num_states, k), _NEG_INF)
    scores[:, 0] = _START + emissions[0]
    back_states = []
    back_ranks = []
    for i in range(1, len(seq)):
        # rows ordered by (previous state, rank) so a stable sort breaks ties on them
        flat = (scores[:, :, None] + _TRANSITIONS[:, None, :]).reshape(
            num_states * k, num_states
        )
        order = np.argsort(-flat, axis=0, kind="stable")[:k]
        top = np.take_along_axis(flat, order, axis=0)
        scores = (top + emissions[i][None, :]).T
        back_states.append((order // k).T)
        back_ranks.append((order % k).T)
    flat_final = scores.reshape(-1)
    results = []
    for position in np.argsort(-flat_final, kind="stable")[:k]:
        score = float(flat_final[position])
        if score == _NEG_INF:
            break
        state, rank = divmod(int(position), k)
        path = [state]
        for back_s, back_r in zip(reversed(back_states), reversed(back_ranks)):
            state, rank = int(back_s[state, rank]), int(back_r[state, rank])
            path.append(state)
        path.reverse()
        results.append((_tags_of(path), score))
    return results


def valid_tag_sequences(length: int) -> Iterator[tuple[str, ...]]:
    """All valid BIO taggings of a given length."""
    for tags in itertools.product(TAGS, repeat=length):
        if is_valid_bio(tags):
            yield tags


def sequence_score(emissions: npt.NDArray[np.float64], tags: Sequence[str]) -> float:
    total = 0.0
    prev = "O"
    for i, tag in enumerate(tags):
        total += float(emissions[i, _STATE_INDEX[(prev, tag)]])
        prev = tag
    return total


def as_candidate_instance(
    seq: SequenceInstance,
    model: LinearModel,
    k: int = DEFAULT_K,
    features: ChunkingFeatures | None = None,
) -> Instance:
    """The k-best list of ``seq`` under ``model`` as a bandit Instance.

    The hidden loss of a candidate is ``1 - F1`` against the gold tags.
    """
    features = _features(model, seq, features)
    candidates = [
        (tags, features.feature_vector(tags), 1.0 - chunk_f1(tags, seq.gold))
        for tags, _ in kbest_decode(model, seq, k, features)
    ]
    return Instance(seq.id, candidates)
