import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fp, rec
from tagsentry.datamodel import (
    DetectionConfig,
    Fingerprint,
    Record,
    Tag,
    TagTopology,
    WifiReading,
    build_vocabulary,
    dist,
    featurize,
)
from tagsentry.errors import ConfigError, FeaturizationError, TopologyError, ValidationError


def topo(*pts):
    return TagTopology(tuple(Tag(i + 1, x, y) for i, (x, y) in enumerate(pts)), frozenset({"s"}))


class TestDist:
    def test_three_four_five(self):
        assert dist(topo((0, 0), (3, 4)), 1, 2) == 5.0

    def test_identity(self):
        t = topo((2.5, -1.0))
        assert dist(t, 1, 1) == 0.0

    def test_offset_triangle(self):
        # sqrt(3^2 + 4^2)
        assert dist(topo((1, 1), (4, 5)), 1, 2) == pytest.approx(5.0)

    def test_unknown_lid(self):
        with pytest.raises(TopologyError):
            dist(topo((0, 0)), 1, 9)

    @settings(max_examples=200)
    @given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=3, max_size=3))
    def test_metric_axioms(self, pts):
        t = topo(*pts)
        ab, bc, ac = dist(t, 1, 2), dist(t, 2, 3), dist(t, 1, 3)
        assert ab >= 0 and ab == dist(t, 2, 1)
        assert ac <= ab + bc + 1e-9 * (1 + ab + bc)


class TestTopology:
    def test_json_round_trip(self, tmp_path):
        t = TagTopology((Tag(2, 1.0, 2.0, "b"), Tag(1, 0.0, 0.0, "a")), frozenset({"x", "y"}))
        t.save(tmp_path / "t.json")
        obj = json.loads((tmp_path / "t.json").read_text())
        assert [tag["lid"] for tag in obj["tags"]] == [1, 2]
        assert TagTopology.load(tmp_path / "t.json") == t

    def test_duplicate_lid(self):
        with pytest.raises(TopologyError):
            TagTopology((Tag(1, 0, 0), Tag(1, 1, 1)))

    def test_non_finite(self):
        with pytest.raises(TopologyError):
            TagTopology((Tag(1, math.nan, 0),))

    def test_missing_file(self, tmp_path):
        with pytest.raises(TopologyError, match="not found"):
            TagTopology.load(tmp_path / "nope.json")


class TestTypes:
    def test_rss_range(self):
        with pytest.raises(ValidationError):
            Fingerprint((WifiReading("a", "s", 5),), 1.0)
        with pytest.raises(ValidationError):
            Fingerprint((WifiReading("a", "s", -101),), 1.0)

    def test_duplicate_bssid(self):
        with pytest.raises(ValidationError):
            fp(("a", "s", -50), ("a", "t", -60))

    def test_negative_magnetic(self):
        with pytest.raises(ValidationError):
            Fingerprint((), -0.5)

    def test_negative_timestamp(self):
        with pytest.raises(ValidationError):
            Record(1, 1, 1, -1.0, Fingerprint())

    @pytest.mark.parametrize("field,value", [
        ("rho", 0), ("tw", -1), ("phi", 0), ("tau", 1.0), ("tau", 0.0),
        ("var_floor", 0), ("beta_clamp", 0.5), ("covariance_mode", "spherical"),
    ])
    def test_config_invariants(self, field, value):
        with pytest.raises(ConfigError):
            DetectionConfig(**{field: value})

    def test_config_defaults(self):
        c = DetectionConfig()
        assert (c.rho, c.phi, c.tw, c.tau, c.vocab_size, c.var_floor) == (10.0, 5.0, 600.0, 0.5, 20, 1.0)
        assert (c.max_iters, c.ll_tol, c.beta_clamp) == (200, 1e-6, 1e-4)


class TestFeaturize:
    def test_single_scan(self):
        fm = featurize([rec(1, 1, 1, 0, ("b1", "s1", -40), mag=48.0)], DetectionConfig(vocab_size=5))
        assert fm.vocabulary == ("b1",)
        assert fm.vectors.tolist() == [[-40.0, 48.0]]

    def test_missing_ap_imputed(self):
        recs = [rec(1, 1, 1, 0, ("b1", "s", -40), ("b2", "s", -70)), rec(2, 1, 1, 5, ("b1", "s", -45))]
        fm = featurize(recs)
        assert fm.vocabulary == ("b1", "b2")
        assert fm.vectors[1, 1] == -100.0

    def test_vocabulary_by_frequency(self):
        recs = [
            rec(1, 1, 1, 0, ("b1", "s", -40), ("b2", "s", -50), ("b3", "s", -60)),
            rec(2, 1, 1, 1, ("b1", "s", -40), ("b2", "s", -50)),
            rec(3, 1, 1, 2, ("b1", "s", -40)),
        ]
        assert featurize(recs, DetectionConfig(vocab_size=2)).vocabulary == ("b1", "b2")

    def test_ties_broken_by_bssid(self):
        recs = [rec(1, 1, 1, 0, ("zz", "s", -40), ("aa", "s", -50), ("mm", "s", -60))]
        assert build_vocabulary(recs, 2) == ("aa", "mm")

    def test_all_empty(self):
        with pytest.raises(FeaturizationError):
            featurize([Record(1, 1, 1, 0.0, Fingerprint((), 3.0))])

    def test_no_records(self):
        with pytest.raises(FeaturizationError):
            featurize([])

    def test_rows_by_rid(self):
        recs = [rec(5, 1, 1, 0, ("b", "s", -41)), rec(2, 1, 1, 1, ("b", "s", -42))]
        fm = featurize(recs)
        assert fm.row_rid.tolist() == [2, 5]
        assert fm.vectors[:, 0].tolist() == [-42.0, -41.0]

    def test_payload_switch(self):
        r = Record(1, 1, 1, 0.0, fp(("b", "s", -40), mag=2.0), b"21.5")
        assert featurize([r]).shape == (1, 2)
        fm = featurize([r], DetectionConfig(include_payload=True))
        assert fm.vectors.tolist() == [[-40.0, 2.0, 21.5]]

    def test_payload_not_numeric(self):
        r = Record(1, 1, 1, 0.0, fp(("b", "s", -40)), b"\x00\xff")
        with pytest.raises(FeaturizationError):
            featurize([r], DetectionConfig(include_payload=True))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_permutation_stable(self, seed):
        rng = random.Random(seed)
        bssids = [f"b{i}" for i in range(6)]
        recs = []
        for rid in range(1, 12):
            aps = [(b, "s", rng.randint(-100, 0)) for b in bssids if rng.random() < 0.6]
            recs.append(rec(rid, 1, 1, rid, *aps, mag=rng.uniform(0, 80)) if aps else
                        Record(rid, 1, 1, float(rid), Fingerprint((), 1.0)))
        if not any(r.fingerprint.wifi for r in recs):
            return
        cfg = DetectionConfig(vocab_size=4)
        a = featurize(recs, cfg)
        shuffled = recs[:]
        rng.shuffle(shuffled)
        b = featurize(shuffled, cfg)
        assert a.vocabulary == b.vocabulary
        assert np.array_equal(a.vectors, b.vectors) and np.array_equal(a.row_rid, b.row_rid)
        assert np.isfinite(a.vectors).all()
        rss = a.vectors[:, :-1]
        assert ((rss >= -100) & (rss <= 0)).all()
