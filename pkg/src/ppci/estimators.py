"""ATE estimators over (possibly prediction-powered) samples.

Nuisances are exact stratified fits: with a handful of binary
covariates, per-stratum frequencies and means are the nonparametric
maximum-likelihood estimates, so no learned model is needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import DataError

PROPENSITY_CLIP = 0.01


def _stratum_keys(strata) -> list:
    keys = []
    for z in strata:
        if isinstance(z, (tuple, list, np.ndarray)):
            keys.append(tuple(int(v) for v in z))
        else:
            keys.append(int(z))
    return keys


@dataclass
class NuisanceModels:
    propensity: dict          # stratum -> e(w), clipped
    outcome: dict             # (stratum, t) -> mu(w, t)
    fallback_outcome: dict    # t -> global mean
    constant_propensity: float | None = None

    def propensity_for(self, keys) -> np.ndarray:
        if self.constant_propensity is not None:
            return np.full(len(keys), self.constant_propensity)
        return np.array([self.propensity[k] for k in keys])

    def outcome_for(self, keys, t: int) -> np.ndarray:
        fb = self.fallback_outcome[t]
        return np.array([self.outcome.get((k, t), fb) for k in keys])


def fit_nuisances(outcome, t, strata, randomized: bool) -> NuisanceModels:
    """Stratified propensity and outcome means over the adjustment strata."""
    o = np.asarray(outcome, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    if np.isnan(o).any():
        raise DataError("NaN outcomes passed to nuisance fitting")
    n1 = int(t.sum())
    if n1 == 0 or n1 == len(t):
        raise DataError("a treatment arm is entirely absent: overlap violated")
    keys = _stratum_keys(strata)
    fallback = {1: float(o[t == 1].mean()), 0: float(o[t == 0].mean())}
    propensity: dict = {}
    outcome_model: dict = {}
    const_e = None
    if randomized:
        const_e = float(np.clip(t.mean(), PROPENSITY_CLIP, 1 - PROPENSITY_CLIP))
    groups: dict = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)
    for k, idx in groups.items():
        idx = np.array(idx)
        tk = t[idx]
        if not randomized:
            propensity[k] = float(np.clip(tk.mean(), PROPENSITY_CLIP,
                                          1 - PROPENSITY_CLIP))
        for arm in (0, 1):
            sel = idx[tk == arm]
            if len(sel):
                outcome_model[(k, arm)] = float(o[sel].mean())
    return NuisanceModels(propensity=propensity, outcome=outcome_model,
                          fallback_outcome=fallback,
                          constant_propensity=const_e)


@dataclass
class AipwEstimate:
    tau_hat: float
    influence: np.ndarray
    variance_hat: float
    ci_low: float
    ci_high: float
    n: int
    alpha: float
    se: float

    def to_record(self, method="aipw", dgp=None, seed=None) -> dict:
        return {"method": method, "dgp": dgp, "n": self.n,
                "tau_hat": self.tau_hat, "se": self.se,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "alpha": self.alpha, "seed": seed}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_record(**kw))


def aipw(outcome, t, strata, nuisances: NuisanceModels,
         alpha: float = 0.05) -> AipwEstimate:
    """Doubly-robust point estimate with influence-function normal CI."""
    o = np.asarray(outcome, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    n = len(o)
    if len(t) != n:
        raise DataError("outcome and treatment lengths differ")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    if np.isnan(o).any():
        raise DataError("NaN outcomes passed to the estimator")
    keys = _stratum_keys(strata)
    e = nuisances.propensity_for(keys)
    mu1 = nuisances.outcome_for(keys, 1)
    mu0 = nuisances.outcome_for(keys, 0)
    psi = (mu1 - mu0
           + t / e * (o - mu1)
           - (1 - t) / (1 - e) * (o - mu0))
    tau = float(psi.mean())
    var = float(psi.var(ddof=1)) if n > 1 else 0.0
    se = float(np.sqrt(var / n))
    z = float(norm.ppf(1 - alpha / 2))
    return AipwEstimate(tau_hat=tau, influence=psi, variance_hat=var,
                        ci_low=tau - z * se, ci_high=tau + z * se,
                        n=n, alpha=alpha, se=se)


@dataclass
class DiffMeansEstimate:
    tau_hat: float
    se: float
    ci_low: float
    ci_high: float
    n: int
    alpha: float

    def to_record(self, method="diff_means", dgp=None, seed=None) -> dict:
        return {"method": method, "dgp": dgp, "n": self.n,
                "tau_hat": self.tau_hat, "se": self.se,
                "ci_low": self.ci_low, "ci_high": self.ci_high,
                "alpha": self.alpha, "seed": seed}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_record(**kw))


def difference_in_means(outcome, t, alpha: float = 0.05) -> DiffMeansEstimate:
    """Associational difference with a Welch-variance normal CI."""
    o = np.asarray(outcome, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    o1, o0 = o[t == 1], o[t == 0]
    if len(o1) == 0 or len(o0) == 0:
        raise DataError("both treatment arms must be non-empty")
    tau = float(o1.mean() - o0.mean())
    v1 = o1.var(ddof=1) / len(o1) if len(o1) > 1 else 0.0
    v0 = o0.var(ddof=1) / len(o0) if len(o0) > 1 else 0.0
    se = float(np.sqrt(v1 + v0))
    z = float(norm.ppf(1 - alpha / 2))
    return DiffMeansEstimate(tau_hat=tau, se=se, ci_low=tau - z * se,
                             ci_high=tau + z * se, n=len(o), alpha=alpha)
