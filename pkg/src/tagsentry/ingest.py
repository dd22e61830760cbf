"""
Reading and writing record datasets (JSONL), topologies and ground-truth
label files.

Wire format for one record line::

    {"rid": 1, "uid": 3, "lid": 12, "ts_ms": 1484000000000,
     "wifi": [{"bssid": "...", "ssid": "...", "rss": -61}, ...],
     "mag": 47.2, "payload": "<base64>"}
"""

from __future__ import annotations

import base64
import binascii
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .datamodel import Fingerprint, Record, TagTopology, WifiReading
from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class Dataset:
    records: tuple[Record, ...]
    topology: TagTopology
    source: str = ""

    def __post_init__(self):
        records = tuple(sorted(self.records, key=lambda r: (r.uid, r.ts, r.rid)))
        object.__setattr__(self, "records", records)
        seen = set()
        for r in records:
            if r.rid in seen:
                raise ValidationError(f"duplicate rid {r.rid}")
            seen.add(r.rid)
            if r.lid not in self.topology:
                raise ValidationError(f"record {r.rid}: unknown lid {r.lid}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def rids(self) -> list[int]:
        return sorted(r.rid for r in self.records)

    @property
    def users(self) -> list[int]:
        return sorted({r.uid for r in self.records})

    def by_user(self) -> dict[int, list[Record]]:
        """Records grouped per user, each list in chronological order."""
        out: dict[int, list[Record]] = {}
        for r in self.records:
            out.setdefault(r.uid, []).append(r)
        return out

    def subset(self, keep_rids) -> "Dataset":
        keep = set(keep_rids)
        return Dataset(tuple(r for r in self.records if r.rid in keep), self.topology, self.source)


@dataclass(frozen=True)
class GroundTruth:
    validity: Mapping[int, int] = field(default_factory=dict)
    attackers: frozenset[int] = frozenset()
    misplaced: frozenset[int] = frozenset()
    removed: frozenset[int] = frozenset()

    @property
    def falsified(self) -> set[int]:
        return {rid for rid, v in self.validity.items() if v == 0}

    def to_json(self) -> dict:
        return {
            "validity": {str(k): int(self.validity[k]) for k in sorted(self.validity)},
            "attackers": sorted(self.attackers),
            "misplaced": sorted(self.misplaced),
            "removed": sorted(self.removed),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")


def record_from_json(obj: Mapping) -> Record:
    wifi = tuple(WifiReading(str(w["bssid"]), str(w["ssid"]), int(w["rss"])) for w in obj.get("wifi", []))
    payload = obj.get("payload") or ""
    return Record(
        rid=int(obj["rid"]),
        uid=int(obj["uid"]),
        lid=int(obj["lid"]),
        ts=int(obj["ts_ms"]) / 1000.0,
        fingerprint=Fingerprint(wifi, float(obj["mag"])),
        payload=base64.b64decode(payload, validate=True),
    )


def record_to_json(r: Record) -> dict:
    obj = {
        "rid": r.rid,
        "uid": r.uid,
        "lid": r.lid,
        "ts_ms": int(round(r.ts * 1000)),
        "wifi": [{"bssid": w.bssid, "ssid": w.ssid, "rss": w.rss} for w in r.fingerprint.wifi],
        "mag": r.fingerprint.magnetic,
    }
    if r.payload:
        obj["payload"] = base64.b64encode(r.payload).decode("ascii")
    return obj


def parse_records(lines: Iterable[str], source="<records>") -> list[Record]:
    out = []
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            out.append(record_from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, binascii.Error) as exc:
            raise ParseError(source, no, str(exc) or type(exc).__name__) from exc
        except ValidationError as exc:
            raise ParseError(source, no, str(exc)) from exc
    return out


def load_dataset(records_path, topology_path) -> Dataset:
    topology = TagTopology.load(topology_path)
    records_path = Path(records_path)
    try:
        with records_path.open() as fh:
            records = parse_records(fh, records_path)
    except FileNotFoundError:
        raise ValidationError(f"records file not found: {records_path}") from None
    if not records:
        raise ValidationError("empty dataset")
    return Dataset(tuple(records), topology, str(records_path))


def write_records(records: Iterable[Record], path) -> None:
    """Write records as JSONL in ascending rid order (byte-stable)."""
    with Path(path).open("w") as fh:
        for r in sorted(records, key=lambda r: r.rid):
            fh.write(json.dumps(record_to_json(r)) + "\n")


def save_dataset(dataset: Dataset, records_path, topology_path) -> None:
    write_records(dataset.records, records_path)
    dataset.topology.save(topology_path)


def ground_truth_from_json(obj: Mapping, dataset: Dataset | None = None) -> GroundTruth:
    try:
        validity = {int(k): int(v) for k, v in obj.get("validity", {}).items()}
        gt = GroundTruth(
            validity=validity,
            attackers=frozenset(int(u) for u in obj.get("attackers", [])),
            misplaced=frozenset(int(l) for l in obj.get("misplaced", [])),
            removed=frozenset(int(l) for l in obj.get("removed", [])),
        )
    except (AttributeError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed ground truth: {exc}") from exc
    if any(v not in (0, 1) for v in validity.values()):
        raise ValidationError("validity labels must be 0 or 1")
    if dataset is not None:
        known = {r.rid for r in dataset.records}
        missing = sorted(set(validity) - known)
        if missing:
            raise ValidationError(f"ground truth references unknown rid {missing[0]}")
    return gt


def load_ground_truth(path, dataset: Dataset | None = None) -> GroundTruth:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"ground truth file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    return ground_truth_from_json(obj, dataset)
