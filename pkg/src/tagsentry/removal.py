"""Removed-tag detection by comparing a tag's upload frequency with its neighbors'."""

from __future__ import annotations

import math

import numpy as np

from .coarse import CoarseFlags, run_coarse
from .datamodel import DetectionConfig, TagTopology
from .errors import NeighborError
from .ingest import Dataset
from .misplacement import ASCENDING_REMOVAL, SuspectRanking


def tag_frequencies(dataset: Dataset, exclude=frozenset()) -> dict[int, int]:
    freq = {lid: 0 for lid in dataset.topology.lids}
    for r in dataset.records:
        if r.rid not in exclude:
            freq[r.lid] += 1
    return freq


def neighbor_sets(topology: TagTopology, config: DetectionConfig | None = None) -> dict[int, set[int]]:
    """
    Tags within phi meters of each tag.  An isolated tag falls back to its
    `neighbor_fallback` nearest tags (ties by lid).
    """
    config = config or DetectionConfig()
    if len(topology) < 2:
        raise NeighborError("removal detection needs at least two tags")
    lids = topology.lids
    xy = topology.coordinates()
    d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    out = {}
    for i, lid in enumerate(lids):
        near = {lids[j] for j in range(len(lids)) if j != i and d[i, j] <= config.phi}
        if not near:
            others = sorted((d[i, j], lids[j]) for j in range(len(lids)) if j != i)
            near = {l for _, l in others[:config.neighbor_fallback]}
        out[lid] = near
    return out


def removal_scores(freq: dict[int, int], neighbors: dict[int, set[int]]) -> dict[int, float]:
    scores = {}
    for lid, nbrs in neighbors.items():
        # one rounding of an integer ratio keeps ties exact under rescaling
        total = sum(freq[n] for n in nbrs)
        scores[lid] = freq[lid] * len(nbrs) / total if total > 0 else math.inf
    return scores


def rank_removed(dataset: Dataset, config: DetectionConfig | None = None,
                 coarse_flags: CoarseFlags | None = None) -> SuspectRanking:
    """
    Ascending freq / mean(neighbor freq).  With removal_source="coarse" the
    coarse-flagged records are left out of the counts first.
    """
    config = config or DetectionConfig()
    exclude = frozenset()
    if config.removal_source == "coarse":
        flags = coarse_flags if coarse_flags is not None else run_coarse(dataset, config)
        exclude = flags.flagged
    scores = removal_scores(tag_frequencies(dataset, exclude), neighbor_sets(dataset.topology, config))
    order = sorted(scores.items(), key=lambda kv: (kv[1], kv[0]))
    return SuspectRanking(tuple(order), ASCENDING_REMOVAL)
