"""Positive-pair construction for pretraining.

With multi-view data the unordered camera pair (i, j), i <= j, is drawn
uniformly from the v*(v+1)/2 possible pairs of a performance's available
views (i == j allowed), so every viewpoint combination appears; without
multi-view both elements come from the same clip. Both elements are then
augmented independently.
"""

from __future__ import annotations

import numpy as np

from .augment import AugmentationConfig, augment
from .skeleton import SkeletonDataset, SkeletonSequence


def unordered_pair(n: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw (i, j) with i <= j uniformly over the n*(n+1)/2 unordered pairs."""
    pairs = [(i, j) for i in range(n) for j in range(i, n)]
    return pairs[int(rng.integers(0, len(pairs)))]


def sample_positive_pair(
    dataset: SkeletonDataset,
    index: int,
    multiview: bool,
    rng: np.random.Generator,
    aug: AugmentationConfig | None = None,
) -> tuple[SkeletonSequence, SkeletonSequence]:
    """Return two independently augmented positive sequences.

    When multiview is set, `index` addresses the sorted list of performance
    ids and a camera pair is drawn from that performance's views; otherwise
    `index` addresses a single sequence and both elements are its
    augmentations. With aug=None the clips are returned unaugmented.
    """
    if multiview:
        groups = dataset.performances()
        perf_ids = sorted(groups)
        views = groups[perf_ids[index]]
        if not views:
            raise IndexError(f"performance {perf_ids[index]} has no views")
        i, j = unordered_pair(len(views), rng)
        first, second = views[i], views[j]
    else:
        first = second = dataset[index]
    if aug is None:
        return first, second
    return augment(first, aug, rng), augment(second, aug, rng)


def n_units(dataset: SkeletonDataset, multiview: bool) -> int:
    """How many sampling units the dataset offers (performances or clips)."""
    return len(dataset.performances()) if multiview else len(dataset)
