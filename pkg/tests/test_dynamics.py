import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dwpom import dynamics
from dwpom.errors import AllDrawsDegenerate, BrantFailure, DegenerateOutcome
from dwpom.dynamics import dwpom_fit, optimal_configs, pseudo_utility_probs, sample_pseudo_utilities
from dwpom.estimator import wpom_fit
from dwpom.model_core import BrantResult, PomDesign, PomFit
from dwpom.simulation import STUDY2_PHI, STUDY2_PSI, STUDY2_XI, STUDY2_ZETA, gen_study2, study2_specs


@pytest.fixture(scope="module")
def panel():
    return gen_study2(600, 0, seed=21)[0]


def zero_fit(k_beta=1):
    return PomFit(0.619, 2.197, np.zeros(k_beta), np.zeros(2), np.zeros(2), np.zeros(2))


def test_reference_probabilities_at_zero_blip():
    n = 5
    x = np.c_[np.ones(n), np.zeros(n)]
    design = PomDesign(np.zeros((n, 1)), x, x, x, np.zeros(n), np.zeros(n))
    probs = pseudo_utility_probs(zero_fit(), design)
    np.testing.assert_allclose(probs, np.tile([0.65, 0.25, 0.10], (n, 1)), atol=1e-4)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_probabilities_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    n = 20
    fit = PomFit(rng.normal(), 0.0, rng.normal(size=2), *rng.normal(scale=2, size=(3, 2)))
    fit.zeta2 = fit.zeta1 + rng.exponential(1.5)
    x = lambda: np.c_[np.ones(n), rng.normal(size=n)]
    design = PomDesign(rng.normal(size=(n, 2)), x(), x(), x(), np.zeros(n), np.zeros(n))
    probs = pseudo_utility_probs(fit, design)
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_true_parameter_draw_frequencies(panel):
    spec = study2_specs(1)[1]
    design = spec.design(panel)
    k = design.block_sizes[0]
    fit = PomFit(*STUDY2_ZETA, np.zeros(k), np.array(STUDY2_XI), np.array(STUDY2_PSI), np.array(STUDY2_PHI))
    probs = pseudo_utility_probs(fit, design)
    draws = sample_pseudo_utilities(probs, 200, np.random.default_rng(0))  # 1.2e5 draws
    freqs = np.array([np.mean(draws == c) for c in (1, 2, 3)])
    np.testing.assert_allclose(freqs, probs.mean(axis=0), atol=0.01)


def test_sampler_degenerate_and_frequencies():
    rng = np.random.default_rng(1)
    assert np.all(sample_pseudo_utilities(np.tile([1.0, 0.0, 0.0], (10, 1)), 7, rng) == 1)
    draws = sample_pseudo_utilities(np.tile([0.65, 0.25, 0.10], (1000, 1)), 1000, rng)
    assert draws.shape == (1000, 1000)
    np.testing.assert_allclose([np.mean(draws == c) for c in (1, 2, 3)], [0.65, 0.25, 0.10], atol=0.005)


def test_sampler_seeded():
    probs = np.tile([0.2, 0.5, 0.3], (50, 1))
    a = sample_pseudo_utilities(probs, 4, np.random.default_rng(9))
    b = sample_pseudo_utilities(probs, 4, np.random.default_rng(9))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        sample_pseudo_utilities(probs, 0, np.random.default_rng(9))


def test_single_stage_reduces_to_wpom(panel):
    spec = study2_specs(1)[1]
    res = dwpom_fit(panel, [spec], "m4")
    assert np.array_equal(res.fits[0].params, wpom_fit(panel, spec, "m4").final_fit.params)


def _manual_stage1(panel, scheme, R, seed):
    specs = study2_specs(1)
    later = wpom_fit(panel, specs[1], scheme).final_fit
    probs = pseudo_utility_probs(later, specs[1].design(panel))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1])))
    draws = sample_pseudo_utilities(probs, R, rng)
    joint = None if scheme == "m0" else dynamics.fit_propensity(panel, specs[0]).table(panel)
    return [wpom_fit(panel, specs[0], scheme, u=u, table=joint).final_fit for u in draws]


def test_single_draw_equals_one_pseudo_fit(panel):
    res = dwpom_fit(panel, study2_specs(1), "m3", R=1, seed=5)
    (manual,) = _manual_stage1(panel, "m3", 1, 5)
    np.testing.assert_array_equal(res.fits[0].params, manual.params)


def test_average_over_draws(panel):
    res = dwpom_fit(panel, study2_specs(1), "m4", R=4, seed=6)
    manual = _manual_stage1(panel, "m4", 4, 6)
    np.testing.assert_allclose(res.fits[0].params, np.mean([f.params for f in manual], axis=0), atol=1e-12)
    assert res.stages[0].draws_used == 4
    assert len(res.stages[0].brant_pvalues) + res.stages[0].brant_not_applicable == 4


def test_stage_one_ignores_observed_outcome_beyond_later_fit(panel, monkeypatch):
    # With the stage-2 fit held fixed, changing U leaves stage 1 untouched.
    specs = study2_specs(1)
    base = dwpom_fit(panel, specs, "m0", R=2, seed=3)
    fixed = base.fits[1]
    real = dynamics.wpom_fit

    def patched(data, spec, scheme, **kw):
        if kw.get("u") is None:
            res = real(data, spec, scheme, **kw)
            res.final_fit = fixed
            return res
        return real(data, spec, scheme, **kw)

    monkeypatch.setattr(dynamics, "wpom_fit", patched)
    shuffled = panel.copy()
    shuffled["u"] = np.random.default_rng(0).permutation(shuffled["u"].to_numpy())
    other = dwpom_fit(shuffled, specs, "m0", R=2, seed=3)
    np.testing.assert_array_equal(base.fits[0].params, other.fits[0].params)


def test_brant_warning_and_strict_mode(panel, monkeypatch):
    monkeypatch.setattr(dynamics, "brant_wald", lambda X, u: BrantResult(9.0, 2, 0.011))
    res = dwpom_fit(panel, study2_specs(1), "m0", R=2)
    assert res.brant_failure_rate == 1.0
    assert sum("proportional odds" in w for w in res.warnings) == 2
    with pytest.raises(BrantFailure):
        dwpom_fit(panel, study2_specs(1), "m0", R=2, strict=True)


def test_all_draws_failing(panel, monkeypatch):
    real = dynamics.wpom_fit

    def failing(data, spec, scheme, **kw):
        if kw.get("u") is not None:
            raise DegenerateOutcome("forced")
        return real(data, spec, scheme, **kw)

    monkeypatch.setattr(dynamics, "wpom_fit", failing)
    with pytest.raises(AllDrawsDegenerate):
        dwpom_fit(panel, study2_specs(1), "m0", R=3)


def test_recommendations_and_predictions(panel):
    specs = study2_specs(1)
    res = dwpom_fit(panel, specs, "m3", R=2)
    recs = res.recommend(panel, specs)
    assert len(recs) == 2 and recs[0].shape == (len(panel), 2)
    np.testing.assert_array_equal(recs[1], optimal_configs(res.fits[1], specs[1].design(panel)))
    probs = res.predict_outcomes(panel, specs, expected=True)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    draws = res.predict_outcomes(panel, specs, seed=1)
    assert np.array_equal(draws, res.predict_outcomes(panel, specs, seed=1))
    assert set(np.unique(draws)) <= {1, 2, 3}


def test_r_must_be_positive(panel):
    with pytest.raises(ValueError):
        dwpom_fit(panel, study2_specs(1), R=0)
