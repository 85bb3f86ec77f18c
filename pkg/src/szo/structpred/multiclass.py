from __future__ import annotations

from collections.abc import Hashable

import numpy as np

from ..metrics import zero_one_loss
from ..sparse_linalg import SparseVector
from .model import Instance

__all__ = ["multiclass_instance"]


def multiclass_instance(
    doc_vector: SparseVector, num_classes: int, gold: int, id: Hashable = ""
) -> Instance:
    """Classification of one document as a bandit Instance.

    Candidate ``c`` places the document vector in the ``c``-th block of a
    ``num_classes * dim`` feature space. Its loss is 0 for the gold class and 1
    otherwise.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be at least 2, got {num_classes}")
    if not 0 <= gold < num_classes:
        raise ValueError(f"gold class {gold} out of range for {num_classes} classes")
    dim = doc_vector.dim
    candidates = []
    for c in range(num_classes):
        phi = SparseVector._trusted(
            num_classes * dim,
            doc_vector.indices + np.int64(c * dim),
            doc_vector.values,
        )
        candidates.append((c, phi, zero_one_loss(c, gold)))
    return Instance(id, candidates)
