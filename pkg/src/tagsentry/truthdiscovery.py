"""
EM truth discovery over location fingerprints.

Two Gaussian mixtures explain the fingerprints: a truthful model with one
component per tag and a falsified model with one component per user (an
attacker is assumed to forge everything from a single spot).  The hidden
label t_i says which model generated record i, with prior
p(t_i = 1) = beta[u_i], the reliability of the uploading user.

    p(x_i, t_i=1) = beta_u * alpha_t[z_i] * N(x_i; mu_t[z_i], cov_t[z_i])
    p(x_i, t_i=0) = (1 - beta_u) * alpha_f[u_i] * N(x_i; mu_f[u_i], cov_f[u_i])

The E-step is the two-point posterior q_i = p(t_i = 1 | x_i); the M-step is
closed form (weighted moments, weight-share mixing weights, per-user mean of
q for beta).  Variance floors and the beta clamp are box constraints whose
constrained maximizers are plain clips, so the log-likelihood stays monotone.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .coarse import CoarseFlags
from .datamodel import DetectionConfig, FeatureMatrix
from .errors import NumericError, ValidationError
from .ingest import Dataset

log = logging.getLogger(__name__)

Q_FLAGGED = 0.01
Q_UNFLAGGED = 0.99
MIN_MASS = 1e-8
LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class TruthModel:
    lids: np.ndarray  # (K,) component order of the truthful model
    uids: np.ndarray  # (U,) component order of the falsified model
    alpha_t: np.ndarray  # (K,)
    mu_t: np.ndarray  # (K, D)
    cov_t: np.ndarray  # (K, D, D)
    alpha_f: np.ndarray  # (U,)
    mu_f: np.ndarray  # (U, D)
    cov_f: np.ndarray  # (U, D, D)
    beta: np.ndarray  # (U,) clamped reliabilities
    beta_raw: np.ndarray  # (U,) per-user mean of q before clamping
    q: np.ndarray  # (N,) posterior p(t_i = 1), rows in ascending rid order
    row_rid: np.ndarray  # (N,)
    covariance_mode: str = "diagonal"
    use_alpha: bool = True
    ll_trace: tuple[float, ...] = ()
    iters: int = 0
    n_fallback: int = 0

    def beta_by_user(self) -> dict[int, float]:
        return {int(u): float(b) for u, b in zip(self.uids, self.beta)}

    def q_by_rid(self) -> dict[int, float]:
        return {int(r): float(v) for r, v in zip(self.row_rid, self.q)}

    def replace(self, **changes) -> "TruthModel":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ValidityLabels:
    t: Mapping[int, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {str(rid): int(self.t[rid]) for rid in sorted(self.t)}


@dataclass(frozen=True)
class _Design:
    """Features plus per-row component indices, rows in ascending rid order."""

    X: np.ndarray
    z: np.ndarray  # index into lids
    u: np.ndarray  # index into uids
    lids: np.ndarray
    uids: np.ndarray
    row_rid: np.ndarray

    @classmethod
    def build(cls, dataset: Dataset, features: FeatureMatrix, lids=None, uids=None) -> "_Design":
        by_rid = {r.rid: r for r in dataset.records}
        row_rid = np.asarray(features.row_rid, dtype=np.int64)
        if len(row_rid) != len(by_rid) or any(int(r) not in by_rid for r in row_rid):
            raise ValidationError("feature rows are not aligned with the dataset records")
        lids = np.asarray(dataset.topology.lids if lids is None else lids, dtype=np.int64)
        uids = np.asarray(dataset.users if uids is None else uids, dtype=np.int64)
        lid_pos = {int(l): i for i, l in enumerate(lids)}
        uid_pos = {int(u): i for i, u in enumerate(uids)}
        try:
            z = np.array([lid_pos[by_rid[int(r)].lid] for r in row_rid], dtype=np.int64)
            u = np.array([uid_pos[by_rid[int(r)].uid] for r in row_rid], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"record refers to a component the model lacks: {exc}") from None
        X = np.asarray(features.vectors, dtype=float)
        if X.ndim != 2:
            raise ValidationError("feature vectors must form a 2-D matrix")
        return cls(X, z, u, lids, uids, row_rid)


def _design_for(model: TruthModel, dataset: Dataset, features: FeatureMatrix) -> _Design:
    return _Design.build(dataset, features, model.lids, model.uids)


# ----------------------------------------------------------------------------
# Gaussian densities
# ----------------------------------------------------------------------------

def _log_gauss(X: np.ndarray, comp: np.ndarray, mu: np.ndarray, cov: np.ndarray, mode: str) -> np.ndarray:
    """log N(X[i]; mu[comp[i]], cov[comp[i]]) for every row i."""
    n, d = X.shape
    out = np.empty(n)
    if mode == "diagonal":
        var = np.diagonal(cov, axis1=1, axis2=2)
        logdet = np.log(var).sum(axis=1)
        diff = X - mu[comp]
        maha = np.sum(diff * diff / var[comp], axis=1)
        return -0.5 * (d * LOG_2PI + logdet[comp] + maha)
    for c in np.unique(comp):
        rows = comp == c
        chol = np.linalg.cholesky(cov[c])
        sol = np.linalg.solve(chol, (X[rows] - mu[c]).T)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        out[rows] = -0.5 * (d * LOG_2PI + logdet + np.sum(sol * sol, axis=0))
    return out


def _log_joint(model: TruthModel, design: _Design) -> tuple[np.ndarray, np.ndarray]:
    """Per-row log p(x_i, t_i = 1) and log p(x_i, t_i = 0)."""
    X, z, u = design.X, design.z, design.u
    with np.errstate(divide="ignore"):
        lt = np.log(model.beta[u]) + _log_gauss(X, z, model.mu_t, model.cov_t, model.covariance_mode)
        lf = np.log1p(-model.beta[u]) + _log_gauss(X, u, model.mu_f, model.cov_f, model.covariance_mode)
        if model.use_alpha:
            lt = lt + np.log(model.alpha_t[z])
            lf = lf + np.log(model.alpha_f[u])
    return lt, lf


def _posterior(model: TruthModel, design: _Design) -> tuple[np.ndarray, int]:
    lt, lf = _log_joint(model, design)
    lse = np.logaddexp(lt, lf)
    dead = ~np.isfinite(lse)
    with np.errstate(invalid="ignore"):
        q = np.exp(lt - lse)
    # no likelihood evidence either way: fall back to the prior
    q[dead] = model.beta[design.u[dead]]
    return np.clip(q, 0.0, 1.0), int(dead.sum())


def _loglik(model: TruthModel, design: _Design) -> float:
    if design.X.shape[0] == 0:
        return 0.0
    lt, lf = _log_joint(model, design)
    per_row = np.logaddexp(lt, lf)
    bad = np.flatnonzero(~np.isfinite(per_row))
    if bad.size:
        i = int(bad[0])
        raise NumericError(f"non-finite log-likelihood for rid {int(design.row_rid[i])}", row=i)
    return float(np.sum(per_row))


def _lower_bound(model: TruthModel, design: _Design, q: np.ndarray) -> float:
    lt, lf = _log_joint(model, design)
    q = np.asarray(q, dtype=float)
    p = 1.0 - q
    with np.errstate(divide="ignore", invalid="ignore"):
        term_t = np.where(q > 0, q * (lt - np.log(q)), 0.0)
        term_f = np.where(p > 0, p * (lf - np.log(p)), 0.0)
    return float(np.sum(term_t + term_f))


# ----------------------------------------------------------------------------
# Parameter updates
# ----------------------------------------------------------------------------

def _regularize(cov: np.ndarray, config: DetectionConfig) -> np.ndarray:
    d = cov.shape[0]
    if config.covariance_mode == "diagonal":
        return np.diag(np.maximum(np.diag(cov), config.var_floor))
    cov = cov + config.ridge * np.eye(d)
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    vals = np.maximum(vals, config.var_floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def _weighted_moments(X: np.ndarray, w: np.ndarray, mode: str) -> tuple[float, np.ndarray, np.ndarray]:
    mass = float(np.sum(w))
    mean = (w @ X) / mass
    diff = X - mean
    if mode == "diagonal":
        cov = np.diag((w @ (diff * diff)) / mass)
    else:
        cov = (diff * w[:, None]).T @ diff / mass
    return mass, mean, cov


def _component_params(X, comp, n_comp, weights, config, prev_mu=None, prev_cov=None, glob=None):
    """
    Weighted mean/covariance per component.  A component whose mass is below
    MIN_MASS keeps its previous parameters, or takes the global fallback when
    there are none yet.
    """
    d = X.shape[1]
    mu = np.empty((n_comp, d))
    cov = np.empty((n_comp, d, d))
    mass = np.zeros(n_comp)
    for c in range(n_comp):
        rows = comp == c
        w = weights[rows]
        m = float(np.sum(w)) if w.size else 0.0
        mass[c] = m
        if m < MIN_MASS:
            if prev_mu is not None:
                mu[c], cov[c] = prev_mu[c], prev_cov[c]
            else:
                mu[c], cov[c] = glob
            continue
        _, mu[c], raw = _weighted_moments(X[rows], w, config.covariance_mode)
        cov[c] = _regularize(raw, config)
    return mass, mu, cov


def _mixing(mass: np.ndarray, prev=None) -> np.ndarray:
    total = float(np.sum(mass))
    if total < MIN_MASS:
        return prev.copy() if prev is not None else np.full(mass.shape, 1.0 / mass.size)
    return mass / total


def _user_means(q: np.ndarray, u: np.ndarray, n_users: int) -> np.ndarray:
    counts = np.bincount(u, minlength=n_users).astype(float)
    if np.any(counts == 0):
        raise ValidationError("every user in the model needs at least one record")
    sums = np.zeros(n_users)
    for k in range(n_users):
        sums[k] = np.sum(q[u == k])
    return sums / counts


def _update(design: _Design, q: np.ndarray, config: DetectionConfig, prev: TruthModel | None) -> TruthModel:
    X, z, u = design.X, design.z, design.u
    K, U = len(design.lids), len(design.uids)
    q = np.asarray(q, dtype=float)
    glob = None
    if prev is None:
        glob = (X.mean(axis=0), config.var_floor * np.eye(X.shape[1]))
        for k in np.flatnonzero(np.bincount(z, minlength=K) == 0):
            log.warning("tag %d has no records; its component starts from global stats", design.lids[k])
    mass_t, mu_t, cov_t = _component_params(
        X, z, K, q, config,
        None if prev is None else prev.mu_t, None if prev is None else prev.cov_t, glob)
    mass_f, mu_f, cov_f = _component_params(
        X, u, U, 1.0 - q, config,
        None if prev is None else prev.mu_f, None if prev is None else prev.cov_f, glob)
    beta_raw = _user_means(q, u, U)
    eps = config.beta_clamp
    return TruthModel(
        lids=design.lids,
        uids=design.uids,
        alpha_t=_mixing(mass_t, None if prev is None else prev.alpha_t),
        mu_t=mu_t,
        cov_t=cov_t,
        alpha_f=_mixing(mass_f, None if prev is None else prev.alpha_f),
        mu_f=mu_f,
        cov_f=cov_f,
        beta=np.clip(beta_raw, eps, 1.0 - eps),
        beta_raw=beta_raw,
        q=q.copy(),
        row_rid=design.row_rid,
        covariance_mode=config.covariance_mode,
        use_alpha=config.use_alpha,
        ll_trace=() if prev is None else prev.ll_trace,
        iters=0 if prev is None else prev.iters,
    )


# ----------------------------------------------------------------------------
# Public operations
# ----------------------------------------------------------------------------

def initial_q(features: FeatureMatrix, coarse_flags: CoarseFlags | None) -> np.ndarray:
    flagged = coarse_flags.flagged if coarse_flags is not None else frozenset()
    return np.array([Q_FLAGGED if int(r) in flagged else Q_UNFLAGGED for r in features.row_rid])


def init_model(dataset: Dataset, features: FeatureMatrix, coarse_flags: CoarseFlags | None = None,
               config: DetectionConfig | None = None) -> TruthModel:
    """Seed EM with q = 0.01 on coarse-flagged records and 0.99 elsewhere."""
    config = config or DetectionConfig()
    design = _Design.build(dataset, features)
    return _update(design, initial_q(features, coarse_flags), config, None)


def e_step(model: TruthModel, features: FeatureMatrix, dataset: Dataset) -> np.ndarray:
    q, _ = _posterior(model, _design_for(model, dataset, features))
    return q


def m_step(model: TruthModel, features: FeatureMatrix, dataset: Dataset, q: np.ndarray,
           config: DetectionConfig | None = None) -> TruthModel:
    config = config or DetectionConfig()
    return _update(_design_for(model, dataset, features), q, config, model)


def log_likelihood(model: TruthModel, features: FeatureMatrix, dataset: Dataset) -> float:
    return _loglik(model, _design_for(model, dataset, features))


def lower_bound(model: TruthModel, features: FeatureMatrix, dataset: Dataset, q: np.ndarray) -> float:
    """J(q, theta) = sum_i sum_t q_i(t) log p(x_i, t) / q_i(t), with 0 log 0 = 0."""
    return _lower_bound(model, _design_for(model, dataset, features), q)


def complete_log_likelihood(model: TruthModel, features: FeatureMatrix, dataset: Dataset,
                            t: np.ndarray) -> float:
    """sum_i log p(x_i, t_i) for a hard label vector (rows in ascending rid order)."""
    lt, lf = _log_joint(model, _design_for(model, dataset, features))
    t = np.asarray(t)
    return float(np.sum(np.where(t == 1, lt, lf)))


def fit(dataset: Dataset, features: FeatureMatrix, coarse_flags: CoarseFlags | None = None,
        config: DetectionConfig | None = None,
        callback: Callable[[int, TruthModel, np.ndarray], None] | None = None) -> TruthModel:
    """
    Run EM from the coarse-filter initialization until the relative change in
    log-likelihood drops to ll_tol or max_iters is reached.

    ll_trace[0] is the likelihood of the initial parameters; one entry is
    appended per iteration.  `callback(iteration, model, q)` sees each new
    model together with the posterior that produced it.  The returned model's
    q is the posterior under the final parameters.
    """
    config = config or DetectionConfig()
    if len(dataset) == 0:
        raise ValidationError("cannot fit an empty dataset")
    design = _Design.build(dataset, features)
    model = _update(design, initial_q(features, coarse_flags), config, None)
    ll = _loglik(model, design)
    trace = [ll]
    it = 0
    for it in range(1, config.max_iters + 1):
        q, _ = _posterior(model, design)
        model = _update(design, q, config, model)
        ll_new = _loglik(model, design)
        trace.append(ll_new)
        if callback is not None:
            callback(it, model, q)
        done = abs(ll_new - ll) <= config.ll_tol * abs(ll_new)
        ll = ll_new
        if done:
            break
    q, n_fallback = _posterior(model, design)
    if n_fallback:
        log.info("%d records had no likelihood under either model; used the prior", n_fallback)
    return model.replace(q=q, ll_trace=tuple(trace), iters=it, n_fallback=n_fallback)


def classify(model: TruthModel, config: DetectionConfig | None = None,
             coarse_flags: CoarseFlags | None = None) -> ValidityLabels:
    """t_i = 1 iff q_i >= tau; coarse-flagged records are always 0."""
    config = config or DetectionConfig()
    flagged = coarse_flags.flagged if coarse_flags is not None else frozenset()
    t = {}
    for rid, q in zip(model.row_rid, model.q):
        rid = int(rid)
        t[rid] = 0 if rid in flagged else int(q >= config.tau)
    return ValidityLabels(t)


def coarse_labels(dataset: Dataset, coarse_flags: CoarseFlags) -> ValidityLabels:
    return ValidityLabels({r.rid: int(r.rid not in coarse_flags.flagged) for r in dataset.records})


def model_summary(model: TruthModel, labels: ValidityLabels) -> dict:
    return {
        "beta": {str(u): b for u, b in model.beta_by_user().items()},
        "q": {str(r): v for r, v in model.q_by_rid().items()},
        "labels": labels.to_json(),
        "ll_trace": list(model.ll_trace),
        "iters": model.iters,
    }
