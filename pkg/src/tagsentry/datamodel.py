"""
Core domain types: records, fingerprints, tag topology, detection settings,
and the fingerprint featurizer that turns scans into fixed-width vectors.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, FeaturizationError, TopologyError, ValidationError

RSS_MIN = -100
RSS_MAX = 0
MISSING_RSS = float(RSS_MIN)  # imputed for APs absent from a scan


class WifiReading(NamedTuple):
    bssid: str
    ssid: str
    rss: int


@dataclass(frozen=True)
class Fingerprint:
    """One WiFi scan plus the magnetic-field magnitude (microtesla)."""

    wifi: tuple[WifiReading, ...] = ()
    magnetic: float = 0.0

    def __post_init__(self):
        wifi = tuple(WifiReading(*w) for w in self.wifi)
        object.__setattr__(self, "wifi", wifi)
        seen = set()
        for w in wifi:
            if w.bssid in seen:
                raise ValidationError(f"duplicate bssid {w.bssid!r} in one scan")
            seen.add(w.bssid)
            if not (RSS_MIN <= w.rss <= RSS_MAX):
                raise ValidationError(f"rss {w.rss} outside [{RSS_MIN}, {RSS_MAX}]")
        if not math.isfinite(self.magnetic) or self.magnetic < 0:
            raise ValidationError(f"magnetic magnitude must be finite and >= 0, got {self.magnetic}")

    @property
    def ssids(self) -> set[str]:
        return {w.ssid for w in self.wifi}


@dataclass(frozen=True)
class Record:
    rid: int
    uid: int
    lid: int
    ts: float  # seconds since epoch
    fingerprint: Fingerprint
    payload: bytes = b""

    def __post_init__(self):
        if not math.isfinite(self.ts) or self.ts < 0:
            raise ValidationError(f"record {self.rid}: timestamp must be finite and >= 0")


class Tag(NamedTuple):
    lid: int
    x: float
    y: float
    name: str = ""


@dataclass(frozen=True)
class TagTopology:
    tags: tuple[Tag, ...]
    ssid_whitelist: frozenset[str] = frozenset()
    _index: Mapping[int, Tag] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tags = tuple(sorted((Tag(*t) for t in self.tags), key=lambda t: t.lid))
        object.__setattr__(self, "tags", tags)
        object.__setattr__(self, "ssid_whitelist", frozenset(self.ssid_whitelist))
        index = {}
        for t in tags:
            if t.lid in index:
                raise TopologyError(f"duplicate lid {t.lid} in topology")
            if not (math.isfinite(t.x) and math.isfinite(t.y)):
                raise TopologyError(f"tag {t.lid} has non-finite coordinates")
            index[t.lid] = t
        object.__setattr__(self, "_index", index)

    @property
    def lids(self) -> list[int]:
        return [t.lid for t in self.tags]

    def __contains__(self, lid) -> bool:
        return lid in self._index

    def __len__(self) -> int:
        return len(self.tags)

    def position(self, lid: int) -> tuple[float, float]:
        try:
            t = self._index[lid]
        except KeyError:
            raise TopologyError(f"unknown lid {lid}") from None
        return (t.x, t.y)

    def coordinates(self) -> np.ndarray:
        """(K, 2) array of tag coordinates in ascending-lid order."""
        return np.array([(t.x, t.y) for t in self.tags], dtype=float).reshape(-1, 2)

    def to_json(self) -> dict:
        return {
            "tags": [{"lid": t.lid, "x": t.x, "y": t.y, "name": t.name} for t in self.tags],
            "ssid_whitelist": sorted(self.ssid_whitelist),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TagTopology":
        try:
            tags = [
                Tag(int(t["lid"]), float(t["x"]), float(t["y"]), str(t.get("name", "")))
                for t in obj["tags"]
            ]
            whitelist = [str(s) for s in obj.get("ssid_whitelist", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise TopologyError(f"malformed topology: {exc}") from exc
        return cls(tuple(tags), frozenset(whitelist))

    @classmethod
    def load(cls, path) -> "TagTopology":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except FileNotFoundError:
            raise TopologyError(f"topology file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise TopologyError(f"{path}: invalid JSON: {exc}") from exc
        return cls.from_json(obj)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def dist(topology: TagTopology, a: int, b: int) -> float:
    """Planar Euclidean distance in meters between two tags."""
    xa, ya = topology.position(a)
    xb, yb = topology.position(b)
    return math.hypot(xb - xa, yb - ya)


COVARIANCE_MODES = ("diagonal", "full")
REMOVAL_SOURCES = ("raw", "coarse")


@dataclass(frozen=True)
class DetectionConfig:
    rho: float = 10.0  # max walking speed, m/s
    tw: float = 600.0  # trajectory time window, s
    phi: float = 5.0  # neighbor radius, m
    tau: float = 0.5
    max_iters: int = 200
    ll_tol: float = 1e-6
    var_floor: float = 1.0
    beta_clamp: float = 1e-4
    vocab_size: int = 20
    covariance_mode: str = "diagonal"
    ridge: float = 1e-3  # only used in "full" mode
    use_alpha: bool = True
    include_payload: bool = False
    removal_source: str = "coarse"
    neighbor_fallback: int = 3

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError("rho must be > 0")
        if not self.tw > 0:
            raise ConfigError("tw must be > 0")
        if not self.phi > 0:
            raise ConfigError("phi must be > 0")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if not self.var_floor > 0:
            raise ConfigError("var_floor must be > 0")
        if not 0 < self.beta_clamp < 0.5:
            raise ConfigError("beta_clamp must lie in (0, 0.5)")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if self.covariance_mode not in COVARIANCE_MODES:
            raise ConfigError(f"covariance_mode must be one of {COVARIANCE_MODES}")
        if self.removal_source not in REMOVAL_SOURCES:
            raise ConfigError(f"removal_source must be one of {REMOVAL_SOURCES}")
        if self.ridge < 0:
            raise ConfigError("ridge must be >= 0")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "DetectionConfig":
        """Build from a mapping, ignoring keys that belong to other configs."""
        names = {f.name for f in dataclasses.fields(cls)}
        try:
            return cls(**{k: v for k, v in obj.items() if k in names})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "DetectionConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class FeatureMatrix:
    vocabulary: tuple[str, ...]
    vectors: np.ndarray  # (N, D), D = len(vocabulary) + 1 (+ payload dims)
    row_rid: np.ndarray  # (N,) ascending

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape

    def row_of(self) -> dict[int, int]:
        return {int(r): i for i, r in enumerate(self.row_rid)}


def build_vocabulary(records: Iterable[Record], size: int) -> tuple[str, ...]:
    """The `size` BSSIDs seen in the most records, ties broken by BSSID."""
    counts = Counter()
    for r in records:
        counts.update(w.bssid for w in r.fingerprint.wifi)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return tuple(b for b, _ in ranked[:size])


def _payload_values(rec: Record) -> list[float]:
    try:
        text = rec.payload.decode("utf-8")
        values = [float(v) for v in text.split(",")] if text.strip() else []
    except (UnicodeDecodeError, ValueError) as exc:
        raise FeaturizationError(f"record {rec.rid}: payload is not numeric") from exc
    if not all(math.isfinite(v) for v in values):
        raise FeaturizationError(f"record {rec.rid}: payload has non-finite values")
    return values


def featurize(records: Sequence[Record], config: DetectionConfig | None = None,
              vocabulary: Sequence[str] | None = None) -> FeatureMatrix:
    """
    Map records to fixed-width vectors: one RSS column per vocabulary BSSID
    (absent APs imputed as -100 dBm) followed by the magnetic magnitude.

    Rows come out in ascending rid order whatever the input order.  A fixed
    `vocabulary` may be passed to featurize new data against an old model.
    """
    config = config or DetectionConfig()
    if not records:
        raise FeaturizationError("no records to featurize")
    records = sorted(records, key=lambda r: r.rid)
    if vocabulary is None:
        if not any(r.fingerprint.wifi for r in records):
            raise FeaturizationError("every fingerprint is empty")
        vocabulary = build_vocabulary(records, config.vocab_size)
    vocabulary = tuple(vocabulary)
    col = {b: j for j, b in enumerate(vocabulary)}

    payload = [_payload_values(r) for r in records] if config.include_payload else None
    n_extra = 0
    if payload is not None:
        widths = {len(p) for p in payload}
        if len(widths) != 1:
            raise FeaturizationError("payload vectors differ in length")
        n_extra = widths.pop()

    m = len(vocabulary)
    vectors = np.full((len(records), m + 1 + n_extra), MISSING_RSS)
    for i, r in enumerate(records):
        for w in r.fingerprint.wifi:
            j = col.get(w.bssid)
            if j is not None:
                vectors[i, j] = w.rss
        vectors[i, m] = r.fingerprint.magnetic
        if n_extra:
            vectors[i, m + 1:] = payload[i]
    vectors.setflags(write=False)
    rids = np.array([r.rid for r in records], dtype=np.int64)
    rids.setflags(write=False)
    return FeatureMatrix(vocabulary, vectors, rids)
