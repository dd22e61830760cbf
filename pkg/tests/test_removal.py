import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import line_topology, make_dataset, rec
from tagsentry.coarse import run_coarse
from tagsentry.datamodel import DetectionConfig, Tag, TagTopology
from tagsentry.emulator import EmulatorConfig, generate
from tagsentry.errors import NeighborError
from tagsentry.ingest import Dataset
from tagsentry.misplacement import ranking_json
from tagsentry.removal import neighbor_sets, rank_removed, removal_scores, tag_frequencies


class TestFrequencies:
    def test_empty(self):
        assert tag_frequencies(Dataset((), line_topology(0, 5))) == {1: 0, 2: 0}

    def test_counting(self):
        topo = TagTopology(tuple(Tag(l, l, 0) for l in (3, 7)))
        ds = make_dataset([rec(i, 1, 7, i) for i in range(1, 4)], topo)
        assert tag_frequencies(ds) == {3: 0, 7: 3}

    def test_partition(self):
        ds, _ = generate(EmulatorConfig(records_target=2000, seed=1))
        assert sum(tag_frequencies(ds).values()) == len(ds)


class TestNeighbors:
    def test_within_radius(self):
        assert neighbor_sets(line_topology(0, 3)) == {1: {2}, 2: {1}}

    def test_fallback(self):
        assert neighbor_sets(line_topology(0, 8)) == {1: {2}, 2: {1}}

    def test_fallback_takes_three_nearest(self):
        nb = neighbor_sets(line_topology(0, 10, 20, 30, 40))
        assert nb[1] == {2, 3, 4}

    def test_grid(self, grid_topology):
        # enumerate distances: only the 4-connected grid neighbors lie within 5 m
        xy = {t.lid: (t.x, t.y) for t in grid_topology.tags}
        expected = {a: {b for b in xy if b != a and math.dist(xy[a], xy[b]) <= 5.0} for a in xy}
        nb = neighbor_sets(grid_topology, DetectionConfig(phi=5.0))
        assert nb == expected
        assert len(nb[7]) == 4 and len(nb[1]) == 2

    def test_single_tag(self):
        with pytest.raises(NeighborError):
            neighbor_sets(line_topology(0))


class TestRanking:
    def test_removed_signature_first(self):
        scores = removal_scores({1: 0, 2: 10, 3: 10}, {1: {2, 3}, 2: {1, 3}, 3: {1, 2}})
        assert scores[1] == 0.0

    def test_uniform(self):
        topo = line_topology(0, 4, 8)
        ds = make_dataset([rec(i, 1, 1 + i % 3, 100 * i) for i in range(1, 10)], topo)
        r = rank_removed(ds, DetectionConfig(removal_source="raw"))
        assert r.entries == ((1, 1.0), (2, 1.0), (3, 1.0))

    def test_inconclusive_last(self):
        topo = line_topology(0, 4, 30, 34)
        ds = make_dataset([rec(i, 1, 3 + i % 2, 100 * i) for i in range(1, 9)] + [rec(20, 2, 2, 5)], topo)
        r = rank_removed(ds, DetectionConfig(removal_source="raw"))
        assert r.entries[-1] == (2, math.inf)
        assert r.entries[0] == (1, 0.0)
        assert ranking_json(r)["ranking"][-1] == {"lid": 2, "score": "inf"}

    def test_coarse_filtered_counts(self):
        topo = line_topology(0, 4, 100)
        recs = [rec(1, 1, 1, 0), rec(2, 1, 3, 1), rec(3, 2, 2, 0), rec(4, 2, 1, 500)]
        ds = make_dataset(recs, topo)
        assert run_coarse(ds).flagged == {1, 2}
        raw = rank_removed(ds, DetectionConfig(removal_source="raw")).scores()
        filtered = rank_removed(ds, DetectionConfig(removal_source="coarse")).scores()
        assert raw[1] == 2.0 and filtered[1] == 1.0


def random_counts(seed):
    rng = random.Random(seed)
    topo = TagTopology(tuple(Tag(i, rng.uniform(0, 20), rng.uniform(0, 20)) for i in range(1, 9)))
    return topo, {l: rng.randint(0, 30) for l in topo.lids}


class TestProperties:
    @settings(max_examples=100)
    @given(st.integers(0, 10**9), st.integers(1, 50))
    def test_scale_invariant(self, seed, c):
        topo, freq = random_counts(seed)
        nb = neighbor_sets(topo)
        order = lambda f: sorted(removal_scores(f, nb).items(), key=lambda kv: (kv[1], kv[0]))
        assert [l for l, _ in order(freq)] == [l for l, _ in order({l: c * v for l, v in freq.items()})]

    @settings(max_examples=100)
    @given(st.integers(0, 10**9))
    def test_zero_beats_positive(self, seed):
        topo, freq = random_counts(seed)
        scores = removal_scores(freq, neighbor_sets(topo))
        zeros = [s for l, s in scores.items() if freq[l] == 0 and s != math.inf]
        positives = [s for l, s in scores.items() if freq[l] > 0]
        assert all(z < p for z in zeros for p in positives)

    @settings(max_examples=50)
    @given(st.integers(0, 10**9))
    def test_order_independent(self, seed):
        rng = random.Random(seed)
        topo = line_topology(*range(0, 40, 4))
        recs = [rec(i, rng.randint(1, 3), rng.randint(1, 10), rng.randint(0, 10**6)) for i in range(1, 60)]
        shuffled = recs[:]
        rng.shuffle(shuffled)
        assert rank_removed(make_dataset(recs, topo)) == rank_removed(make_dataset(shuffled, topo))
