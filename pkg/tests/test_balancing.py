import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dwpom.balancing import (
    AdjustmentFactors,
    WeightScheme,
    check_balancing_criterion,
    household_weights,
    kappa,
    kappa_from_probs,
    weights_for,
)
from dwpom.errors import MissingKappas
from dwpom.model_core import LinearPredictors
from dwpom.propensity import propensity_table


def random_tables(rng, n):
    p, q = rng.uniform(0.02, 0.98, (2, n))
    return propensity_table(p, q, np.exp(rng.uniform(-3, 3, n)))


def random_kappas(rng, n):
    eta1 = rng.normal(scale=2, size=(n, 4))
    return AdjustmentFactors.from_array(kappa(eta1, eta1 + rng.uniform(0.1, 4, (n, 4))))


# ---------------------------------------------------------------- kappa

def test_kappa_at_zero():
    assert kappa(0.0, 0.0) == pytest.approx(0.25, abs=1e-15)
    assert kappa(LinearPredictors(0.0, 0.0)) == pytest.approx(0.25, abs=1e-15)


def test_kappa_vanishes_in_the_limit():
    assert kappa(-50.0, 50.0) <= 1e-20


def test_kappa_dual_formula():
    rng = np.random.default_rng(4)
    n = 10_000
    eta1 = rng.normal(scale=3, size=n)
    eta2 = eta1 + rng.exponential(2.0, n)
    np.testing.assert_allclose(kappa(eta1, eta2), kappa_from_probs(eta1, eta2), rtol=0, atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(eta1=st.floats(-30, 30), gap=st.floats(0, 30))
def test_kappa_in_unit_interval(eta1, gap):
    k = kappa(eta1, eta1 + gap)
    assert 0 <= k < 1
    assert k == pytest.approx(kappa_from_probs(eta1, eta1 + gap), abs=1e-12)


# ---------------------------------------------------------------- weights

def test_scheme_parsing():
    assert WeightScheme.parse("M4") is WeightScheme.M4
    with pytest.raises(ValueError):
        WeightScheme.parse("m9")


def test_m0_weights_are_one():
    np.testing.assert_array_equal(weights_for("m0", propensity_table(0.3, 0.6, 2.0)), 1.0)


def test_m2_symmetric_table():
    w = weights_for("m2", propensity_table(0.5, 0.5, 1.0))
    np.testing.assert_allclose(w, 0.25, atol=1e-15)


def test_m1_independence_product():
    w = weights_for("m1", propensity_table(0.3, 0.6, 1.0))[0]
    np.testing.assert_allclose(w, [0.3 * 0.6, 0.7 * 0.6, 0.3 * 0.4, 0.7 * 0.4], atol=1e-6)


def test_m4_requires_kappas():
    with pytest.raises(MissingKappas):
        weights_for("m4", propensity_table(0.5, 0.5, 1.0))


def test_overlap_identities_on_random_tables():
    rng = np.random.default_rng(12)
    n = 10_000
    tab = random_tables(rng, n)
    k = random_kappas(rng, n)
    pi = tab.as_array()
    m3 = pi * weights_for("m3", tab)
    m4 = pi * weights_for("m4", tab, k) * k.as_array()
    # relative spread of the four products in each household
    assert np.max(np.ptp(m3, axis=1) / m3.max(axis=1)) <= 1e-12
    assert np.max(np.ptp(m4, axis=1) / m4.max(axis=1)) <= 1e-12
    np.testing.assert_allclose(m3[:, 0], np.prod(pi, axis=1), rtol=1e-12)
    np.testing.assert_allclose(m4[:, 0], np.prod(pi, axis=1) * np.prod(k.as_array(), axis=1), rtol=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_weights_positive_and_m2_normalised(seed):
    rng = np.random.default_rng(seed)
    tab = random_tables(rng, 20)
    k = random_kappas(rng, 20)
    for scheme in WeightScheme:
        assert np.all(weights_for(scheme, tab, k) > 0)
    np.testing.assert_allclose(weights_for("m2", tab).sum(axis=1), 1.0, atol=1e-12)


def test_balancing_criterion_examples():
    tab = propensity_table(0.5, 0.5, 2.0)
    rng = np.random.default_rng(0)
    k = random_kappas(rng, 1)
    assert check_balancing_criterion(tab, weights_for("m3", tab)) <= 1e-12
    assert check_balancing_criterion(tab, weights_for("m4", tab, k), k) <= 1e-12
    assert check_balancing_criterion(tab, weights_for("m1", tab)) > 0.01


def test_household_weights_pick_observed_config():
    tab = propensity_table(np.array([0.3, 0.4]), np.array([0.6, 0.2]), np.array([2.0, 0.5]))
    w = household_weights("m3", tab, [1, 0], [1, 1])
    full = weights_for("m3", tab)
    np.testing.assert_array_equal(w, [full[0, 3], full[1, 2]])
