import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dwpom.errors import DimensionMismatch, LengthMismatch
from dwpom.policy import (
    CONFIGS,
    BlipParams,
    TreatmentConfig,
    blip_table,
    blip_value,
    optimal_config,
    regime_metrics,
    regret,
    rules_config,
    sample_categories,
    value_odds_ratio,
)

# Stage-3 estimates from the smoking-cessation application (fourth method column).
PATH = BlipParams(xi=[0.785, 0.304], psi=[0.690, 0.987], phi=[-1.151, -0.091])


def path_blocks(age_s, age_r, pq):
    return np.array([1.0, age_s]), np.array([1.0, age_r]), np.array([1.0, pq])


def unit_blocks(g_xi, g_psi, g_phi):
    params = BlipParams([g_xi], [g_psi], [g_phi])
    return (np.ones(1), np.ones(1), np.ones(1)), params


# ---------------------------------------------------------------- blips

def test_null_config_blip_is_zero():
    assert blip_value((0, 0), *path_blocks(1, 0, 0), PATH) == 0.0


def test_path_example_one_blips():
    blocks = path_blocks(1, 0, 0)
    assert blip_value((1, 0), *blocks, PATH) == pytest.approx(1.089, abs=1e-12)
    assert blip_value((0, 1), *blocks, PATH) == pytest.approx(0.690, abs=1e-12)
    assert blip_value((1, 1), *blocks, PATH) == pytest.approx(0.628, abs=1e-12)


def test_path_example_two_blips():
    # Recomputed from the tabulated estimates.
    blocks = path_blocks(0, 1, 2)
    np.testing.assert_allclose(blip_table(*blocks, PATH)[0], [0.0, 0.785, 1.677, 1.129], atol=1e-12)


def test_additivity_identity():
    rng = np.random.default_rng(1)
    for _ in range(100):
        params = BlipParams(*rng.normal(size=(3, 2)))
        blocks = rng.normal(size=(3, 2))
        both = blip_value((1, 1), *blocks, params)
        assert both == pytest.approx(
            blip_value((1, 0), *blocks, params) + blip_value((0, 1), *blocks, params) + blocks[2] @ params.phi,
            abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        blip_value((1, 0), np.ones(3), np.ones(2), np.ones(2), PATH)


# ---------------------------------------------------------------- decisions

def test_path_examples_decisions():
    assert optimal_config(*path_blocks(1, 0, 0), PATH) == TreatmentConfig(1, 0)
    assert optimal_config(*path_blocks(0, 1, 2), PATH) == TreatmentConfig(0, 1)


def test_all_negative_blips_mean_no_treatment():
    blocks, params = unit_blocks(-1, -1, 0)
    assert optimal_config(*blocks, params) == TreatmentConfig(0, 0)


def test_tie_break_prefers_fewest_then_s():
    blocks, params = unit_blocks(1, 1, -2)
    np.testing.assert_allclose(blip_table(*blocks, params)[0], [0, 1, 1, 0])
    assert optimal_config(*blocks, params) == TreatmentConfig(1, 0)
    blocks, params = unit_blocks(0, 0, 0)
    assert optimal_config(*blocks, params) == TreatmentConfig(0, 0)


def test_argmax_matches_decision_rules():
    rng = np.random.default_rng(99)
    g = rng.normal(size=(100_000, 3))
    tab = np.column_stack([np.zeros(len(g)), g[:, 0], g[:, 1], g.sum(axis=1)])
    srt = np.sort(tab, axis=1)
    assert np.all(srt[:, -1] - srt[:, -2] > 0)  # continuous draws: no ties
    est = optimal_config(g[:, :1], g[:, 1:2], g[:, 2:], BlipParams([1.0], [1.0], [1.0]))
    rules = np.array([tuple(rules_config(*row)) for row in g])
    np.testing.assert_array_equal(est, rules)


@settings(max_examples=300, deadline=None)
@given(g=st.lists(st.floats(-10, 10), min_size=3, max_size=3), c=st.floats(1e-3, 1e3))
def test_positive_scaling_keeps_choice(g, c):
    blocks, params = unit_blocks(*g)
    _, scaled = unit_blocks(*(c * np.array(g)))
    tab = blip_table(*blocks, params)[0]
    # rescaling can merge near-ties in floating point; only compare clear winners
    srt = np.sort(tab)
    if srt[-1] - srt[-2] > 1e-9 * max(1.0, abs(srt[-1])):
        assert optimal_config(*blocks, params) == optimal_config(*blocks, scaled)


# ---------------------------------------------------------------- regret and metrics

def test_regret_examples():
    blocks = path_blocks(1, 0, 0)
    assert regret((1, 0), *blocks, PATH) == 0.0
    assert regret((0, 0), *blocks, PATH) == pytest.approx(1.089, abs=1e-12)
    assert regret((0, 1), *blocks, PATH) == pytest.approx(0.399, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_regret_nonnegative_and_zero_at_optimum(seed):
    rng = np.random.default_rng(seed)
    params = BlipParams(*rng.normal(size=(3, 2)))
    x = rng.normal(size=(3, 50, 2))
    opt = optimal_config(*x, params)
    for cfg in CONFIGS:
        assert np.all(regret(cfg, *x, params) >= 0)
    np.testing.assert_array_equal(regret(opt, *x, params), 0.0)


def _study_blocks(rng, n):
    one = np.ones(n)
    return np.c_[one, rng.uniform(size=n)], np.c_[one, rng.uniform(size=n)], np.c_[one, rng.integers(0, 3, n)]


def test_metrics_perfect_and_s_wrong():
    rng = np.random.default_rng(5)
    params = BlipParams([-0.5, 1.0], [-0.5, 1.0], [-1.0, 0.5])
    blocks = _study_blocks(rng, 200)
    truth = optimal_config(*blocks, params)
    m = regime_metrics(truth, truth, params, *blocks)
    assert (m.otr_household, m.otr_individual, m.mean_regret) == (1.0, 1.0, 0.0)
    wrong = truth.copy()
    wrong[:, 0] = 1 - wrong[:, 0]
    m = regime_metrics(wrong, truth, params, *blocks)
    assert m.otr_household == 0.0 and m.otr_individual == 0.5 and m.mean_regret > 0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_otr_individual_at_least_household(seed):
    rng = np.random.default_rng(seed)
    params = BlipParams(*rng.normal(size=(3, 2)))
    blocks = _study_blocks(rng, 40)
    m = regime_metrics(CONFIGS[rng.integers(0, 4, 40)], CONFIGS[rng.integers(0, 4, 40)], params, *blocks)
    assert m.otr_individual >= m.otr_household
    assert m.otr_any >= m.otr_individual


def test_metrics_length_mismatch():
    rng = np.random.default_rng(0)
    blocks = _study_blocks(rng, 10)
    with pytest.raises(LengthMismatch):
        regime_metrics(CONFIGS[:3], CONFIGS[:2], BlipParams([0, 1], [0, 1], [0, 1]), *blocks)


# ---------------------------------------------------------------- value odds

def test_value_odds_identity():
    u = np.array([1, 2, 3, 3, 2, 1, 3])
    v = value_odds_ratio(u, u)
    assert v.or_u3 == 1.0 and v.or_u_ge2 == 1.0


def test_value_odds_zero_cells_corrected():
    u = np.full(20, 3)
    v = value_odds_ratio(u, u)
    assert np.isfinite(v.or_u3) and v.or_u3 == 1.0


def test_value_odds_known_counts():
    pred = np.array([3] * 6 + [1] * 4)
    obs = np.array([3] * 4 + [2] * 2 + [1] * 4)
    v = value_odds_ratio(pred, obs)
    assert v.or_u3 == pytest.approx((6 / 4) / (4 / 6))
    assert v.or_u_ge2 == pytest.approx(1.0)


def test_value_odds_from_probabilities_uses_expected_counts():
    probs = np.tile([0.2, 0.3, 0.5], (10, 1))
    obs = np.array([3] * 5 + [1] * 5)
    assert value_odds_ratio(probs, obs).or_u3 == pytest.approx(1.0)


def test_sample_categories_degenerate_rows():
    rng = np.random.default_rng(0)
    probs = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] * 100)
    np.testing.assert_array_equal(sample_categories(probs, rng), np.tile([1, 2, 3], 100))
