"""Misplaced-tag detection from abnormal length-3 trajectories."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

from .datamodel import DetectionConfig, TagTopology, dist
from .errors import ValidationError
from .ingest import Dataset

DESCENDING_ABNORMAL = "descending-abnormal-count"
ASCENDING_REMOVAL = "ascending-removal-score"


class Leg(NamedTuple):
    lid: int
    ts: float


class Trajectory3(NamedTuple):
    uid: int
    legs: tuple[Leg, Leg, Leg]


@dataclass(frozen=True)
class SuspectRanking:
    entries: tuple[tuple[int, float], ...]  # (lid, score)
    direction: str

    def __post_init__(self):
        if self.direction not in (DESCENDING_ABNORMAL, ASCENDING_REMOVAL):
            raise ValidationError(f"unknown ranking direction {self.direction!r}")

    @property
    def lids(self) -> list[int]:
        return [lid for lid, _ in self.entries]

    def head(self, k: int) -> list[int]:
        return self.lids[:max(k, 0)]

    def scores(self) -> dict[int, float]:
        return dict(self.entries)


def _collapse(legs: list[Leg]) -> list[Leg]:
    out = []
    for leg in legs:
        if out and out[-1].lid == leg.lid:
            continue
        out.append(leg)
    return out


def build_trajectories(dataset: Dataset, config: DetectionConfig | None = None) -> list[Trajectory3]:
    """
    Sliding windows of three consecutive uploads per user, each gap <= TW.
    Repeated scans of the same tag are collapsed to the first one beforehand.
    """
    config = config or DetectionConfig()
    out = []
    for uid, recs in dataset.by_user().items():
        legs = _collapse([Leg(r.lid, r.ts) for r in recs])
        for a, b, c in zip(legs, legs[1:], legs[2:]):
            if b.ts - a.ts <= config.tw and c.ts - b.ts <= config.tw:
                out.append(Trajectory3(uid, (a, b, c)))
    return out


def is_abnormal(traj: Trajectory3, topology: TagTopology) -> bool:
    """Abnormal when the third tag is strictly closer to the first than the second is."""
    a, b, c = (leg.lid for leg in traj.legs)
    return dist(topology, c, a) < dist(topology, b, a)


def classify_trajectory(traj: Trajectory3, topology: TagTopology) -> str:
    return "abnormal" if is_abnormal(traj, topology) else "normal"


def abnormal_counts(dataset: Dataset, config: DetectionConfig | None = None) -> dict[int, int]:
    counts = Counter({lid: 0 for lid in dataset.topology.lids})
    for traj in build_trajectories(dataset, config):
        if is_abnormal(traj, dataset.topology):
            counts[traj.legs[1].lid] += 1
    return dict(counts)


def rank_misplaced(dataset: Dataset, config: DetectionConfig | None = None) -> SuspectRanking:
    counts = abnormal_counts(dataset, config)
    order = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return SuspectRanking(tuple((lid, c) for lid, c in order), DESCENDING_ABNORMAL)


def ranking_json(ranking: SuspectRanking, top: int | None = None) -> dict:
    """CLI payload; counts for misplacement, scores (inf as "inf") for removal."""
    if ranking.direction == DESCENDING_ABNORMAL:
        rows = [{"lid": lid, "count": int(s)} for lid, s in ranking.entries]
    else:
        rows = [{"lid": lid, "score": "inf" if s == float("inf") else float(s)} for lid, s in ranking.entries]
    out = {"ranking": rows}
    if top is not None:
        out["flagged"] = ranking.head(top)
    return out
