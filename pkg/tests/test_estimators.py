import numpy as np
import pytest

from ppci import dgp, estimators
from ppci.errors import DataError
from ppci.estimators import NuisanceModels


def hand_aipw(outcome, t, e_by_stratum, mu1, mu0, keys):
    """Brute-force influence sum used as an oracle for the vectorized path."""
    psis = []
    for o, ti, k in zip(outcome, t, keys):
        e = e_by_stratum[k]
        psi = mu1.get(k, 0.0) - mu0.get(k, 0.0)
        if ti:
            psi += (o - mu1.get(k, 0.0)) / e
        else:
            psi -= (o - mu0.get(k, 0.0)) / (1 - e)
        psis.append(psi)
    return float(np.mean(psis))


class TestFitNuisances:
    def test_rct_constant_propensity(self):
        t = np.array([1] * 5000 + [0] * 5000)
        o = np.zeros(10000)
        keys = [(0,)] * 10000
        nuis = estimators.fit_nuisances(o, t, keys, randomized=True)
        assert nuis.constant_propensity == 0.5
        assert (nuis.propensity_for(keys) == 0.5).all()

    def test_stratum_frequency_without_clipping(self):
        t = np.array([1] * 9 + [0])
        o = np.arange(10.0)
        keys = [(0,)] * 10
        nuis = estimators.fit_nuisances(o, t, keys, randomized=False)
        assert nuis.propensity[(0,)] == pytest.approx(0.9)

    def test_one_sided_stratum_clipped_with_fallback(self):
        t = np.array([1] * 100 + [0] * 10)
        o = np.concatenate([np.full(100, 5.0), np.full(10, 2.0)])
        keys = [(0,)] * 100 + [(1,)] * 10
        nuis = estimators.fit_nuisances(o, t, keys, randomized=False)
        assert nuis.propensity[(0,)] == pytest.approx(0.99)
        assert ((0,), 0) not in nuis.outcome
        # empty control cell falls back to the global control mean
        assert nuis.outcome_for([(0,)], 0)[0] == pytest.approx(2.0)

    def test_missing_arm_rejected(self):
        with pytest.raises(DataError, match="overlap"):
            estimators.fit_nuisances(np.zeros(4), np.ones(4, int),
                                     [(0,)] * 4, randomized=True)


class TestAipw:
    def test_constant_outcome_gives_zero(self):
        t = np.array([1, 0, 1, 0, 1, 0])
        o = np.full(6, 3.7)
        keys = [(0,)] * 6
        nuis = estimators.fit_nuisances(o, t, keys, randomized=True)
        est = estimators.aipw(o, t, keys, nuis)
        assert est.tau_hat == pytest.approx(0.0, abs=1e-12)
        assert est.variance_hat == pytest.approx(0.0, abs=1e-12)

    def test_indicator_outcome_exact_unit_effect(self):
        t = np.array([1, 0, 1, 0])
        o = t.astype(float)
        keys = [(0,)] * 4
        nuis = NuisanceModels(propensity={}, outcome={((0,), 1): 1.0, ((0,), 0): 0.0},
                              fallback_outcome={0: 0.0, 1: 1.0},
                              constant_propensity=0.5)
        est = estimators.aipw(o, t, keys, nuis)
        assert est.tau_hat == pytest.approx(1.0, abs=1e-12)
        assert (est.influence == 1.0).all()

    def test_matches_hand_enumerated_horvitz_thompson(self):
        # deliberately wrong outcome model (zero), true stratum propensities
        t = np.array([1, 1, 0, 1, 0, 0, 1, 0])
        o = np.array([4.0, 2.0, 1.0, 3.0, 0.0, 2.0, 5.0, 1.0])
        keys = [(0,), (0,), (0,), (0,), (1,), (1,), (1,), (1,)]
        e = {(0,): 0.75, (1,): 0.25}
        nuis = NuisanceModels(propensity=e, outcome={},
                              fallback_outcome={0: 0.0, 1: 0.0})
        est = estimators.aipw(o, t, keys, nuis)
        expected = hand_aipw(o, t, e, {}, {}, keys)
        assert est.tau_hat == pytest.approx(expected, abs=1e-12)

    def test_nan_outcomes_rejected(self):
        t = np.array([1, 0])
        o = np.array([np.nan, 1.0])
        with pytest.raises(DataError):
            estimators.fit_nuisances(o, t, [(0,), (0,)], randomized=True)

    def test_ci_matches_invariant(self):
        ds = dgp.sample(dgp.DgpSpec.named("A"), 2000, 0, with_images=False)
        keys = list(zip(ds.w))
        nuis = estimators.fit_nuisances(ds.y, ds.t, keys, randomized=True)
        est = estimators.aipw(ds.y, ds.t, keys, nuis, alpha=0.05)
        halfwidth = 1.959963984540054 * np.sqrt(est.variance_hat / est.n)
        assert est.ci_low == pytest.approx(est.tau_hat - halfwidth)
        assert est.ci_high == pytest.approx(est.tau_hat + halfwidth)
        assert est.variance_hat >= 0

    def test_reduces_to_difference_in_means(self):
        rng = np.random.default_rng(1)
        t = rng.integers(0, 2, 100)
        t[:2] = [0, 1]
        o = rng.normal(size=100)
        keys = [(0,)] * 100
        nuis = NuisanceModels(propensity={}, outcome={},
                              fallback_outcome={0: 0.0, 1: 0.0},
                              constant_propensity=float(t.mean()))
        est = estimators.aipw(o, t, keys, nuis)
        dm = estimators.difference_in_means(o, t)
        assert est.tau_hat == pytest.approx(dm.tau_hat, abs=1e-10)


class TestDifferenceInMeans:
    def test_simple_difference(self):
        est = estimators.difference_in_means([2.0, 2.0, 1.0, 1.0],
                                             [1, 1, 0, 0])
        assert est.tau_hat == 1.0

    def test_identical_arms_zero(self):
        est = estimators.difference_in_means([3.0, 3.0, 3.0, 3.0],
                                             [1, 0, 1, 0])
        assert est.tau_hat == 0.0

    def test_empty_arm_rejected(self):
        with pytest.raises(DataError):
            estimators.difference_in_means([1.0, 2.0], [1, 1])

    def test_rct_recovers_training_effect(self):
        ds = dgp.sample(dgp.DgpSpec.named("A"), 10000, 13, with_images=False)
        est = estimators.difference_in_means(ds.y, ds.t)
        assert abs(est.tau_hat - 1.5) <= 3 * est.se


class TestMonteCarloProperties:
    def test_double_robustness_smoke(self):
        # full 200-rep version lives in the acceptance suite
        spec = dgp.DgpSpec.named("B")
        bias_a, bias_b = [], []
        for r in range(40):
            ds = dgp.sample(spec, 4000, 9000 + r, with_images=False)
            keys = list(zip(ds.w))
            nuis = estimators.fit_nuisances(ds.y, ds.t, keys, randomized=False)
            zero_mu = NuisanceModels(propensity=nuis.propensity, outcome={},
                                     fallback_outcome={0: 0.0, 1: 0.0})
            const_e = NuisanceModels(propensity={}, outcome=nuis.outcome,
                                     fallback_outcome=nuis.fallback_outcome,
                                     constant_propensity=0.5)
            bias_a.append(estimators.aipw(ds.y, ds.t, keys, zero_mu).tau_hat)
            bias_b.append(estimators.aipw(ds.y, ds.t, keys, const_e).tau_hat)
        assert abs(np.mean(bias_a)) <= 0.05
        assert abs(np.mean(bias_b)) <= 0.05

    def test_calibrated_imputation_tracks_truth(self):
        # permuting labels within (t, w, u) strata preserves per-stratum
        # means exactly, so the prediction-powered estimate stays close
        spec = dgp.DgpSpec.named("B")
        rng = np.random.default_rng(17)
        for r in range(5):
            ds = dgp.sample(spec, 4000, 300 + r, with_images=False)
            imputed = ds.y.copy()
            for idx in ds.stratum_index.values():
                imputed[idx] = ds.y[rng.permutation(idx)]
            keys = list(zip(ds.w))
            nuis = estimators.fit_nuisances(ds.y, ds.t, keys, randomized=False)
            true_est = estimators.aipw(ds.y, ds.t, keys, nuis)
            nuis_i = estimators.fit_nuisances(imputed, ds.t, keys,
                                              randomized=False)
            imp_est = estimators.aipw(imputed, ds.t, keys, nuis_i)
            assert abs(imp_est.tau_hat - true_est.tau_hat) <= 2 * true_est.se
