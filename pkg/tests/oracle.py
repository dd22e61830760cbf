"""
Independent reference computations used by the test-suite.

Nothing here imports the EM implementation; parameters and densities are
recomputed from scratch with scipy so the oracle cannot share a bug with the
code under test.
"""

import itertools

import numpy as np
from scipy.stats import multivariate_normal

from tagsentry.datamodel import FeatureMatrix, Fingerprint, Record, Tag, TagTopology, WifiReading
from tagsentry.ingest import Dataset


def make_instance(X, uids, lids, tag_xy=None, ts=None):
    """Dataset + FeatureMatrix whose rows are exactly X (rid = row + 1)."""
    X = np.asarray(X, dtype=float).reshape(len(uids), -1)
    all_lids = sorted(set(lids)) if tag_xy is None else sorted(tag_xy)
    tag_xy = tag_xy or {l: (5.0 * i, 0.0) for i, l in enumerate(all_lids)}
    topo = TagTopology(tuple(Tag(l, *tag_xy[l]) for l in all_lids), frozenset({"ok"}))
    fp = Fingerprint((WifiReading("b", "ok", -50),), 1.0)
    ts = ts if ts is not None else [1000.0 * (i + 1) for i in range(len(uids))]
    records = tuple(Record(i + 1, int(u), int(l), float(t), fp) for i, (u, l, t) in enumerate(zip(uids, lids, ts)))
    ds = Dataset(records, topo)
    fm = FeatureMatrix(tuple(f"f{j}" for j in range(X.shape[1] - 1)), X, np.arange(1, len(uids) + 1))
    return ds, fm


def _hard_params(X, groups, mask, var_floor):
    out = {}
    for g in np.unique(groups[mask]):
        rows = X[mask & (groups == g)]
        mu = rows.mean(axis=0)
        var = np.maximum(rows.var(axis=0), var_floor)
        out[int(g)] = (mu, var, len(rows))
    return out


def complete_loglik(X, uids, lids, t, var_floor=1.0, eps=1e-4, use_alpha=True):
    """
    Maximized complete-data log-likelihood for one hard label vector: the
    diagonal-Gaussian / mixing-weight / reliability MLEs given t, plugged back in.
    """
    X = np.asarray(X, dtype=float)
    uids, lids, t = np.asarray(uids), np.asarray(lids), np.asarray(t)
    truthful = _hard_params(X, lids, t == 1, var_floor)
    forged = _hard_params(X, uids, t == 0, var_floor)
    n1, n0 = int((t == 1).sum()), int((t == 0).sum())
    total = 0.0
    for i in range(len(X)):
        u = uids[i]
        mine = uids == u
        beta = min(max(t[mine].mean(), eps), 1 - eps)
        if t[i] == 1:
            mu, var, n = truthful[int(lids[i])]
            prior, alpha = beta, n / n1
        else:
            mu, var, n = forged[int(u)]
            prior, alpha = 1 - beta, n / n0
        dens = multivariate_normal(mean=mu, cov=np.diag(var)).logpdf(X[i])
        total += np.log(prior) + dens + (np.log(alpha) if use_alpha else 0.0)
    return total


def brute_force_labels(X, uids, lids, **kw):
    """Best label vector over all 2^N assignments, and its margin over the runner-up."""
    scored = []
    for bits in itertools.product((0, 1), repeat=len(X)):
        scored.append((complete_loglik(X, uids, lids, bits, **kw), bits))
    scored.sort(key=lambda s: -s[0])
    best, second = scored[0], scored[1]
    return np.array(best[1]), best[0] - second[0]


def random_instance(rng, n_max=8):
    """
    Two tags, two honest users and one attacker.  Honest uploads scatter
    around their tag's fingerprint; the attacker's forged uploads come from
    one spot elsewhere.  Returns X, uids, lids, the forged mask and the
    coarse-flag rids (a random non-empty subset of forged records).
    """
    locs = rng.uniform(0, 40, size=(2, 2))
    while np.linalg.norm(locs[0] - locs[1]) < 10:
        locs = rng.uniform(0, 40, size=(2, 2))
    spot = rng.uniform(0, 40, size=2)
    while min(np.linalg.norm(spot - l) for l in locs) < 10:
        spot = rng.uniform(0, 40, size=2)
    n_forged = int(rng.integers(2, 4))
    n_honest = n_max - n_forged
    X, uids, lids, forged = [], [], [], []
    for j in range(n_honest):
        lid = 1 + j % 2
        X.append(locs[lid - 1] + rng.normal(0, 0.5, 2))
        uids.append(1 + (j // 2) % 2)
        lids.append(lid)
        forged.append(False)
    for j in range(n_forged):
        X.append(spot + rng.normal(0, 0.5, 2))
        uids.append(3)
        lids.append(int(rng.integers(1, 3)))
        forged.append(True)
    forged = np.array(forged)
    idx = np.flatnonzero(forged)
    k = int(rng.integers(1, idx.size + 1))
    flagged = {int(i) + 1 for i in rng.choice(idx, k, replace=False)}
    return np.array(X), np.array(uids), np.array(lids), forged, flagged
