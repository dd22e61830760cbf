"""Cheap pre-filters for forged uploads: SSID whitelist and implied walking speed."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .datamodel import DetectionConfig, dist
from .ingest import Dataset

BAD_SSID = "bad_ssid"
SPEED_ANOMALY = "speed_anomaly"


@dataclass(frozen=True)
class CoarseFlags:
    flagged: frozenset[int] = frozenset()
    reason: Mapping[int, str] = field(default_factory=dict)

    def __contains__(self, rid) -> bool:
        return rid in self.flagged

    def to_json(self) -> dict:
        return {"flagged": [{"rid": rid, "reason": self.reason[rid]} for rid in sorted(self.flagged)]}


def ssid_check(dataset: Dataset, whitelist=None) -> set[int]:
    """Rids whose scan contains no whitelisted SSID (empty scans included)."""
    whitelist = frozenset(dataset.topology.ssid_whitelist if whitelist is None else whitelist)
    return {r.rid for r in dataset.records if not (r.fingerprint.ssids & whitelist)}


def speed_check(dataset: Dataset, config: DetectionConfig | None = None) -> set[int]:
    """Rids in consecutive same-user pairs whose implied speed exceeds rho."""
    config = config or DetectionConfig()
    topo = dataset.topology
    flagged = set()
    for recs in dataset.by_user().values():
        for a, b in zip(recs, recs[1:]):
            if a.lid == b.lid:
                continue
            dt = b.ts - a.ts
            # dt == 0 between distinct tags counts as infinite speed
            if dt <= 0 or dist(topo, a.lid, b.lid) / dt > config.rho:
                flagged.add(a.rid)
                flagged.add(b.rid)
    return flagged


def run_coarse(dataset: Dataset, config: DetectionConfig | None = None) -> CoarseFlags:
    config = config or DetectionConfig()
    reason = {}
    for rid in speed_check(dataset, config):
        reason[rid] = SPEED_ANOMALY
    # an SSID failure is the stronger signal and wins when both fire
    if dataset.topology.ssid_whitelist:
        for rid in ssid_check(dataset):
            reason[rid] = BAD_SSID
    return CoarseFlags(frozenset(reason), reason)
