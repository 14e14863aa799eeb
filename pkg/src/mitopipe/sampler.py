"""Scanner-based fold splitting and balanced per-epoch under-sampling plans.

Randomness comes from NumPy's PCG64 generator seeded with
``SeedSequence([seed, epoch])``, so manifests reproduce bit for bit across
platforms and across calls for the same (seed, epoch).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class FoldSplit:
    fold_id: int
    train_ids: tuple
    val_ids: tuple


@dataclass(frozen=True)
class EpochManifest:
    """Entries are (patch reference, label) pairs covering every positive once
    and an equal number of negatives (all of them when fewer exist)."""

    epoch: int
    entries: tuple[tuple[object, str], ...]


def make_folds(image_ids: Sequence) -> list[FoldSplit]:
    """Split ids into three contiguous equal blocks, one validation block per
    fold; training ids are the complement."""
    ids = list(image_ids)
    if len(ids) == 0 or len(ids) % 3 != 0:
        raise InvalidInputError(
            f"id count must be a positive multiple of 3, got {len(ids)}"
        )
    block = len(ids) // 3
    folds = []
    for k in range(3):
        val = tuple(ids[k * block : (k + 1) * block])
        train = tuple(ids[: k * block] + ids[(k + 1) * block :])
        folds.append(FoldSplit(fold_id=k + 1, train_ids=train, val_ids=val))
    return folds


def sample_epoch(positives: Sequence, negatives: Sequence, epoch: int,
                 seed: int = 0) -> EpochManifest:
    """Balanced under-sampling plan for one epoch.

    Every positive is included; min(len(positives), len(negatives)) negatives
    are drawn uniformly without replacement, and the combined entry order is
    shuffled with the same (seed, epoch) stream.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    n_neg = min(len(positives), len(negatives))
    entries = [(p, POSITIVE) for p in positives]
    if negatives:
        if n_neg < len(negatives):
            chosen = rng.choice(len(negatives), size=n_neg, replace=False)
        else:
            chosen = np.arange(len(negatives))
        entries.extend((negatives[int(i)], NEGATIVE) for i in chosen)
    order = rng.permutation(len(entries))
    return EpochManifest(epoch=epoch, entries=tuple(entries[int(i)] for i in order))
