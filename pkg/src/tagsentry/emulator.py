"""
Seeded synthetic crowdsensing datasets with ground truth.

Tags sit on a rectangular grid inside a single-floor building.  WiFi APs are
scattered over the floor; the mean RSS at any point follows a log-distance
path-loss law and the magnetic magnitude is a smooth random field, so every
position has its own Gaussian fingerprint distribution.

* Honest users walk local tours over the tags (the next tag is one of the
  nearest not yet visited this tour) and upload a fingerprint at each one.
* Attackers mix some honest sessions with forging sessions: they stand at
  one fixed off-tag spot and upload that spot's fingerprint under a cycling
  sequence of forged tag ids, a few seconds apart.
* A misplaced tag is physically moved to a distant point at some time; every
  later scan of it carries that point's fingerprint and is falsified.
* A removed tag disappears at some time and is never scanned honestly again
  (attackers keep forging it).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .datamodel import DetectionConfig, Fingerprint, Record, Tag, TagTopology, WifiReading, featurize
from .errors import ConfigError
from .ingest import Dataset, GroundTruth

EPOCH = 1_484_000_000  # 2017-01-09
WHITELIST = ("campus-wifi", "campus-secure")
SENSITIVITY = -95.0  # weakest RSS a phone reports


@dataclass(frozen=True)
class EmulatorConfig:
    n_tags: int = 50
    n_users: int = 20
    n_attackers: int = 5
    n_misplaced: int = 5
    n_removed: int = 5
    records_target: int = 17487
    layout: float = 5.0  # grid pitch, m
    grid_cols: int = 0  # 0: ceil(sqrt(2 * n_tags))
    ap_count: int = 12
    rss_sigma: float = 3.0  # dB
    mag_sigma: float = 1.0  # uT
    walk_speed: float = 1.2  # m/s
    dwell: float = 30.0  # mean seconds spent at a tag
    seed: int = 0
    days: float = 14.0
    session_length: int = 40  # mean uploads per session
    session_gap: float = 3600.0  # minimum idle time between sessions, s
    forge_fraction: float = 0.6  # share of an attacker's uploads that are forged
    forge_interval: tuple[float, float] = (1.0, 20.0)  # s between forged uploads
    forge_ssid_fraction: float = 0.05  # forged scans carrying only a hotspot SSID
    misplace_min_pitches: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "forge_interval", tuple(float(v) for v in self.forge_interval))
        counts = (self.n_tags, self.n_users, self.n_attackers, self.n_misplaced, self.n_removed)
        if any(c < 0 for c in counts):
            raise ConfigError("counts must be non-negative")
        if self.n_tags < 1 or self.n_users < 1:
            raise ConfigError("need at least one tag and one user")
        if self.n_attackers > self.n_users:
            raise ConfigError("n_attackers exceeds n_users")
        if self.n_misplaced + self.n_removed > self.n_tags:
            raise ConfigError("n_misplaced + n_removed exceeds n_tags")
        if self.records_target < self.n_users * self.n_tags:
            raise ConfigError(
                f"records_target={self.records_target} cannot cover {self.n_tags} tags "
                f"for each of {self.n_users} users")
        lo, hi = self.forge_interval
        if not 0 < lo <= hi:
            raise ConfigError("forge_interval must satisfy 0 < lo <= hi")
        if not 0 <= self.forge_fraction < 1:
            raise ConfigError("forge_fraction must lie in [0, 1)")
        if not 0 <= self.forge_ssid_fraction <= 1:
            raise ConfigError("forge_ssid_fraction must lie in [0, 1]")
        positive = ("layout", "walk_speed", "dwell", "days", "rss_sigma", "mag_sigma")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.ap_count < 1 or self.session_length < 1:
            raise ConfigError("ap_count and session_length must be >= 1")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "EmulatorConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        try:
            return cls(**{k: v for k, v in obj.items() if k in names})
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "EmulatorConfig":
        return dataclasses.replace(self, **changes)


def load_config(path) -> tuple[EmulatorConfig, DetectionConfig]:
    """Read a JSON file holding EmulatorConfig and DetectionConfig keys side by side."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(EmulatorConfig)} | {
        f.name for f in dataclasses.fields(DetectionConfig)}
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown config key {unknown[0]!r}")
    return EmulatorConfig.from_dict(obj), DetectionConfig.from_dict(obj)


@dataclass(frozen=True)
class World:
    """Static ground-truth parameters of one emulated building."""

    topology: TagTopology
    bbox: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    ap_xy: np.ndarray  # (A, 2)
    ap_power: np.ndarray  # (A,) RSS at 1 m
    ap_bssid: tuple[str, ...]
    ap_ssid: tuple[str, ...]
    mag_params: np.ndarray  # (3, 5): amplitude, kx, ky, phase_x, phase_y
    path_loss_exp: float = 3.0

    def mean_rss(self, xy) -> np.ndarray:
        d = np.hypot(self.ap_xy[:, 0] - xy[0], self.ap_xy[:, 1] - xy[1])
        return self.ap_power - 10.0 * self.path_loss_exp * np.log10(np.maximum(d, 1.0))

    def mean_magnetic(self, xy) -> float:
        a, kx, ky, px, py = self.mag_params.T
        return float(45.0 + np.sum(a * np.sin(kx * xy[0] + px) * np.cos(ky * xy[1] + py)))

    def tag_xy(self, lid: int) -> np.ndarray:
        return np.array(self.topology.position(lid))


def _grid_topology(cfg: EmulatorConfig) -> TagTopology:
    cols = cfg.grid_cols or math.ceil(math.sqrt(2 * cfg.n_tags))
    tags = []
    for i in range(cfg.n_tags):
        r, c = divmod(i, cols)
        tags.append(Tag(i + 1, c * cfg.layout, r * cfg.layout, f"tag-{i + 1}"))
    return TagTopology(tuple(tags), frozenset(WHITELIST))


def build_world(cfg: EmulatorConfig, rng: np.random.Generator) -> World:
    topo = _grid_topology(cfg)
    xy = topo.coordinates()
    half = cfg.layout / 2
    bbox = (xy[:, 0].min() - half, xy[:, 1].min() - half, xy[:, 0].max() + half, xy[:, 1].max() + half)
    ap_xy = np.column_stack([rng.uniform(bbox[0], bbox[2], cfg.ap_count),
                             rng.uniform(bbox[1], bbox[3], cfg.ap_count)])
    ap_power = rng.uniform(-38.0, -30.0, cfg.ap_count)
    bssids = tuple(f"a4:5e:60:00:{i // 256:02x}:{i % 256:02x}" for i in range(cfg.ap_count))
    ssids = tuple(WHITELIST[i % len(WHITELIST)] for i in range(cfg.ap_count))
    mag = np.column_stack([
        rng.uniform(3.0, 8.0, 3),
        2 * np.pi / rng.uniform(8.0, 25.0, 3),
        2 * np.pi / rng.uniform(8.0, 25.0, 3),
        rng.uniform(0, 2 * np.pi, 3),
        rng.uniform(0, 2 * np.pi, 3),
    ])
    return World(topo, bbox, ap_xy, ap_power, bssids, ssids, mag)


@dataclass(frozen=True)
class Scenario:
    """Attack plan drawn for one run."""

    attackers: tuple[int, ...]
    attacker_xy: Mapping[int, np.ndarray]
    misplaced_to: Mapping[int, np.ndarray]  # lid -> destination
    move_time: Mapping[int, float]  # lid -> seconds from start
    removal_time: Mapping[int, float]


class Emulator:
    def __init__(self, config: EmulatorConfig | None = None):
        self.config = config or EmulatorConfig()
        self.rng = np.random.default_rng(self.config.seed)
        self.world = build_world(self.config, self.rng)
        self.scenario = self._draw_scenario()
        self._lids = np.array(self.world.topology.lids)
        self._lid_pos = {int(l): i for i, l in enumerate(self._lids)}
        self._home_xy = self.world.topology.coordinates()
        self._records: list[tuple] = []

    # -- scenario -------------------------------------------------------------

    def _random_point(self):
        x0, y0, x1, y1 = self.world.bbox
        return np.array([self.rng.uniform(x0, x1), self.rng.uniform(y0, y1)])

    def _off_tag_point(self, min_gap: float):
        xy = self.world.topology.coordinates()
        for _ in range(1000):
            p = self._random_point()
            if np.min(np.hypot(*(xy - p).T)) >= min_gap:
                return p
        return p

    def _far_point(self, home):
        need = self.config.misplace_min_pitches * self.config.layout
        best, best_d = None, -1.0
        for _ in range(1000):
            p = self._random_point()
            d = float(np.hypot(*(p - home)))
            if d >= need:
                return p
            if d > best_d:
                best, best_d = p, d
        # layout too small for the requested distance: use the farthest corner
        x0, y0, x1, y1 = self.world.bbox
        corners = np.array([(x0, y0), (x0, y1), (x1, y0), (x1, y1)])
        return corners[np.argmax(np.hypot(*(corners - home).T))]

    def _draw_scenario(self) -> Scenario:
        cfg, rng = self.config, self.rng
        T = cfg.days * 86400.0
        uids = np.arange(1, cfg.n_users + 1)
        attackers = tuple(sorted(int(u) for u in rng.choice(uids, cfg.n_attackers, replace=False)))
        attacker_xy = {u: self._off_tag_point(0.3 * cfg.layout) for u in attackers}
        lids = np.array(self.world.topology.lids)
        picked = rng.choice(lids, cfg.n_misplaced + cfg.n_removed, replace=False)
        misplaced = sorted(int(l) for l in picked[:cfg.n_misplaced])
        removed = sorted(int(l) for l in picked[cfg.n_misplaced:])
        misplaced_to = {l: self._far_point(self.world.tag_xy(l)) for l in misplaced}
        move_time = {l: float(rng.uniform(0.3, 0.7) * T) for l in misplaced}
        removal_time = {l: float(rng.uniform(0.25, 0.65) * T) for l in removed}
        return Scenario(attackers, attacker_xy, misplaced_to, move_time, removal_time)

    def physical_xy(self, lid: int, t: float) -> np.ndarray:
        moved_at = self.scenario.move_time.get(lid)
        if moved_at is not None and t >= moved_at:
            return self.scenario.misplaced_to[lid]
        return self.world.tag_xy(lid)

    def available(self, lid: int, t: float) -> bool:
        gone = self.scenario.removal_time.get(lid)
        return gone is None or t < gone

    def _state_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Physical tag positions and availability mask (ascending lid) at time t."""
        xy = self._home_xy.copy()
        for lid, moved_at in self.scenario.move_time.items():
            if t >= moved_at:
                xy[self._lid_pos[lid]] = self.scenario.misplaced_to[lid]
        ok = np.ones(len(xy), dtype=bool)
        for lid, gone in self.scenario.removal_time.items():
            if t >= gone:
                ok[self._lid_pos[lid]] = False
        return xy, ok

    # -- sampling -------------------------------------------------------------

    def sample_fingerprint(self, xy) -> Fingerprint:
        w, cfg = self.world, self.config
        rss = w.mean_rss(xy) + self.rng.normal(0.0, cfg.rss_sigma, len(w.ap_power))
        seen = rss >= SENSITIVITY
        if not seen.any():
            seen[np.argmax(rss)] = True
        values = np.clip(np.rint(rss), -100, 0).astype(int).tolist()
        readings = tuple(
            WifiReading(w.ap_bssid[i], w.ap_ssid[i], values[i]) for i in np.flatnonzero(seen).tolist())
        mag = max(0.0, w.mean_magnetic(xy) + float(self.rng.normal(0.0, cfg.mag_sigma)))
        return Fingerprint(readings, round(mag, 3))

    def _hotspot_fingerprint(self, uid: int, xy) -> Fingerprint:
        rss = int(np.clip(round(self.rng.normal(-35.0, self.config.rss_sigma)), -100, 0))
        reading = WifiReading(f"da:a1:19:00:00:{uid % 256:02x}", f"AndroidAP-{uid}", rss)
        mag = max(0.0, self.world.mean_magnetic(xy) + float(self.rng.normal(0.0, self.config.mag_sigma)))
        return Fingerprint((reading,), round(mag, 3))

    def _payload(self, xy) -> bytes:
        temp = 21.0 + 0.04 * xy[0] - 0.03 * xy[1] + self.rng.normal(0.0, 0.2)
        return f"{temp:.1f}".encode()

    def _emit(self, uid, lid, t, fp, xy, valid):
        self._records.append((int(round((EPOCH + t) * 1000)), uid, lid, fp, self._payload(xy), valid))

    # -- behaviour --------------------------------------------------------------

    def _session_sizes(self, total: int) -> list[int]:
        sizes = []
        while total > 0:
            n = int(min(total, max(3, self.rng.poisson(self.config.session_length))))
            sizes.append(n)
            total -= n
        return sizes

    def _next_tag(self, cur: int, t: float, unvisited: np.ndarray) -> int:
        """One of the three nearest tags not yet visited in this tour."""
        xy, ok = self._state_at(t)
        i = self._lid_pos[cur]
        ok[i] = False
        if not ok.any():
            return cur
        cand = ok & unvisited
        if not cand.any():
            unvisited |= ok
            cand = ok
        idx = np.flatnonzero(cand)
        d = np.hypot(*(xy[idx] - xy[i]).T)
        order = idx[np.argsort(d, kind="stable")[:3]]
        p = np.array([0.6, 0.25, 0.15])[:len(order)]
        return int(self._lids[order[self.rng.choice(len(order), p=p / p.sum())]])

    def _honest_session(self, uid: int, start: float, n: int, unvisited: np.ndarray) -> float:
        cfg = self.config
        _, ok = self._state_at(start)
        pool = np.flatnonzero(ok & unvisited)
        if not pool.size:
            pool = np.flatnonzero(ok)
        cur = int(self._lids[pool[self.rng.integers(pool.size)]])
        t = start
        for k in range(n):
            if k:
                nxt = self._next_tag(cur, t, unvisited)
                travel = np.hypot(*(self.physical_xy(nxt, t) - self.physical_xy(cur, t))) / cfg.walk_speed
                t += travel + cfg.dwell * self.rng.uniform(0.5, 1.5)
                cur = nxt
            unvisited[self._lid_pos[cur]] = False
            xy = self.physical_xy(cur, t)
            moved = cur in self.scenario.move_time and t >= self.scenario.move_time[cur]
            self._emit(uid, cur, t, self.sample_fingerprint(xy), xy, 0 if moved else 1)
        return t

    def _forged_session(self, uid: int, start: float, n: int, queue: list[int]) -> float:
        cfg = self.config
        xy = self.scenario.attacker_xy[uid]
        lo, hi = cfg.forge_interval
        t = start
        for k in range(n):
            if k:
                t += self.rng.uniform(lo, hi)
            if not queue:
                queue.extend(int(l) for l in self.rng.permutation(self.world.topology.lids))
            lid = queue.pop()
            if self.rng.random() < cfg.forge_ssid_fraction:
                fp = self._hotspot_fingerprint(uid, xy)
            else:
                fp = self.sample_fingerprint(xy)
            self._emit(uid, lid, t, fp, xy, 0)
        return t

    def _user(self, uid: int, budget: int):
        cfg = self.config
        T = cfg.days * 86400.0
        if uid in self.scenario.attackers:
            forged = int(round(budget * cfg.forge_fraction))
            kinds = [("h", n) for n in self._session_sizes(budget - forged)]
            kinds += [("f", n) for n in self._session_sizes(forged)]
            kinds = [kinds[i] for i in self.rng.permutation(len(kinds))]
        else:
            kinds = [("h", n) for n in self._session_sizes(budget)]
        starts = np.sort(self.rng.uniform(0.0, T, len(kinds)))
        unvisited = np.ones(len(self._lids), dtype=bool)
        queue: list[int] = []
        end = -math.inf
        for (kind, n), s in zip(kinds, starts):
            s = max(float(s), end + cfg.session_gap)
            if kind == "h":
                end = self._honest_session(uid, s, n, unvisited)
            else:
                end = self._forged_session(uid, s, n, queue)

    def run(self) -> tuple[Dataset, GroundTruth]:
        cfg = self.config
        self._records = []
        base, extra = divmod(cfg.records_target, cfg.n_users)
        for uid in range(1, cfg.n_users + 1):
            self._user(uid, base + (uid <= extra))
        self._records.sort(key=lambda r: (r[0], r[1]))
        records, validity = [], {}
        for rid, (ts_ms, uid, lid, fp, payload, valid) in enumerate(self._records, start=1):
            records.append(Record(rid, uid, lid, ts_ms / 1000.0, fp, payload))
            validity[rid] = valid
        truth = GroundTruth(
            validity=validity,
            attackers=frozenset(self.scenario.attackers),
            misplaced=frozenset(self.scenario.misplaced_to),
            removed=frozenset(self.scenario.removal_time),
        )
        return Dataset(tuple(records), self.world.topology, f"emulator(seed={cfg.seed})"), truth


def generate(config: EmulatorConfig | None = None) -> tuple[Dataset, GroundTruth]:
    return Emulator(config).run()


def export_location_stats(dataset: Dataset, config: DetectionConfig | None = None) -> dict:
    """
    Per-tag fingerprint summaries (count, mean vector, per-dimension std),
    over the same feature columns the detector uses.
    """
    locations = {}
    vocabulary: tuple[str, ...] = ()
    if len(dataset):
        fm = featurize(list(dataset.records), config)
        vocabulary = fm.vocabulary
        lid_of = {r.rid: r.lid for r in dataset.records}
        row_lid = np.array([lid_of[int(r)] for r in fm.row_rid])
    for lid in dataset.topology.lids:
        rows = fm.vectors[row_lid == lid] if len(dataset) else np.empty((0, 0))
        if len(rows) == 0:
            locations[str(lid)] = {"count": 0, "mean": None, "std": None}
        else:
            locations[str(lid)] = {
                "count": int(len(rows)),
                "mean": rows.mean(axis=0).tolist(),
                "std": rows.std(axis=0).tolist(),
            }
    return {"columns": list(vocabulary) + ["magnetic"], "locations": locations}
