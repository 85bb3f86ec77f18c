"""Linear structured prediction over explicit candidate sets."""

from .model import FeatureIndex, LinearModel, Instance
from .chunking import (
    TAGS,
    STATES,
    DEFAULT_K,
    SequenceInstance,
    ChunkingFeatures,
    is_valid_bio,
    build_chunking_features,
    register_chunking_features,
    viterbi_decode,
    kbest_decode,
    valid_tag_sequences,
    sequence_score,
    as_candidate_instance,
)
from .multiclass import multiclass_instance
