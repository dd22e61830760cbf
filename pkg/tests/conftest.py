import pytest

from tagsentry.datamodel import Fingerprint, Record, Tag, TagTopology, WifiReading
from tagsentry.ingest import Dataset

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def fp(*aps, mag=45.0):
    """Fingerprint from (bssid, ssid, rss) triples."""
    return Fingerprint(tuple(WifiReading(*a) for a in aps), mag)


def rec(rid, uid, lid, ts, *aps, mag=45.0):
    aps = aps or (("ap1", "campus", -50),)
    return Record(rid, uid, lid, float(ts), fp(*aps, mag=mag))


def line_topology(*xs, whitelist=("campus",)):
    """Tags 1..n on the x axis at the given coordinates."""
    return TagTopology(tuple(Tag(i + 1, float(x), 0.0) for i, x in enumerate(xs)), frozenset(whitelist))


@pytest.fixture
def grid_topology():
    """5 x 4 grid, 5 m pitch, lids 1..20 row-major."""
    tags = tuple(Tag(r * 5 + c + 1, 5.0 * c, 5.0 * r) for r in range(4) for c in range(5))
    return TagTopology(tags, frozenset({"campus"}))


def make_dataset(records, topology):
    return Dataset(tuple(records), topology)
