import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from semgraph.errors import InputError
from semgraph.integrator import (ScoreModel, ScoreStream, detect, empirical_sigma_ratio,
                                 integrate, tune_window, tuning_report, window_sigma_scale)


def stream(values, pattern="p0"):
    values = np.asarray(values, dtype=float)
    return ScoreStream(pattern, np.arange(len(values)), values)


# -- independent oracle: AR(1) window-mean standard deviation ----------------

def ar1_mean_std_oracle(rho, window):
    """Covariance-sum formula evaluated entry by entry, no shared code."""
    total = 0.0
    for a in range(window):
        for b in range(window):
            total += rho ** abs(a - b)
    return np.sqrt(total) / window


# -- types -------------------------------------------------------------------

def test_stream_requires_increasing_times():
    with pytest.raises(InputError):
        ScoreStream("x", np.array([0, 0]), np.array([0.1, 0.2]))


def test_score_model_validation():
    with pytest.raises(InputError):
        ScoreModel(0.5, 0.1, 0.4, 0.1)
    with pytest.raises(InputError):
        ScoreModel(0.3, 0.0, 0.7, 0.1)
    with pytest.raises(InputError):
        ScoreModel(0.3, 0.1, 0.7, 0.1, rho=1.5)


# -- integrate -----------------------------------------------------------------

def test_window_one_is_identity():
    s = stream([0.2, 0.9, 0.4])
    out = integrate(s, 1)
    assert np.array_equal(out.scores, s.scores)


def test_constant_stream_stays_constant():
    s = stream([0.7] * 10)
    for t in (1, 3, 7):
        assert np.allclose(integrate(s, t).scores, 0.7)


def test_hand_computed_running_mean():
    out = integrate(stream([0.0, 1.0, 1.0, 1.0]), 2)
    assert out.scores.tolist() == [0.0, 0.5, 1.0, 1.0]


def test_integrate_empty_is_input_error():
    with pytest.raises(InputError):
        integrate(ScoreStream("x", np.array([], dtype=int), np.array([])), 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.integers(1, 12))
def test_integrate_preserves_range(values, window):
    out = integrate(stream(values), window).scores
    assert out.min() >= min(values) - 1e-12
    assert out.max() <= max(values) + 1e-12


def test_detect_threshold_is_inclusive():
    s = stream([0.0, 0.5, 0.8])
    assert detect(s, 0.5).tolist() == [False, True, True]
    assert not detect(stream([0.0] * 4), 0.5).any()


# -- tune_window ----------------------------------------------------------------

def test_tune_fully_correlated_returns_shortest_window():
    model = ScoreModel(0.3, 0.1, 0.7, 0.1, rho=1.0)
    t, tau, tpr = tune_window(model, 0.1, 6)
    assert t == 1
    rows = tuning_report(model, 0.1, 6)
    assert all(r[2] == pytest.approx(tpr) for r in rows)  # all windows equal


def test_tune_iid_window4_matches_closed_form():
    # independent samples: averaged sigma = sigma / 2 at T = 4
    model = ScoreModel(0.3, 0.1, 0.8, 0.1, rho=0.0)
    rows = {t: (tau, tpr) for t, tau, tpr in tuning_report(model, 0.1, 4)}
    sigma_hat = 0.1 / 2.0
    tau_expected = 0.3 + sigma_hat * norm.ppf(0.9)
    tpr_expected = norm.cdf((0.8 - tau_expected) / sigma_hat)
    assert rows[4][0] == pytest.approx(tau_expected, abs=1e-12)
    assert rows[4][1] == pytest.approx(tpr_expected, abs=1e-12)


def test_tune_tpr_monotone_in_window_for_iid():
    model = ScoreModel(0.3, 0.5, 1.3, 0.5, rho=0.0)
    rows = tuning_report(model, 0.1, 5)
    tprs = [r[2] for r in rows]
    assert tprs == sorted(tprs)
    t, _, _ = tune_window(model, 0.1, 5)
    assert t == 5


def test_tuned_threshold_achieves_target_fpr_empirically():
    model = ScoreModel(0.3, 0.1, 0.7, 0.1, rho=0.0)
    t, tau, _ = tune_window(model, 0.2, 3)
    rng = np.random.default_rng(0)
    n = 200_000
    means = rng.normal(model.mu0, model.sigma0 / np.sqrt(t), size=n)
    fpr = float((means >= tau).mean())
    assert fpr == pytest.approx(0.2, abs=3 * np.sqrt(0.2 * 0.8 / n))


def test_tune_rejects_degenerate_inputs():
    model = ScoreModel(0.3, 0.1, 0.7, 0.1)
    with pytest.raises(InputError):
        tune_window(model, 0.0, 3)
    with pytest.raises(InputError):
        tune_window(model, 0.1, 0)


# -- sigma ratio ------------------------------------------------------------------

def test_sigma_scale_against_covariance_oracle():
    for rho in (0.0, 0.3, 0.7, 1.0):
        for t in (1, 2, 4, 9):
            expected = ar1_mean_std_oracle(rho, t)
            assert window_sigma_scale(rho, t) == pytest.approx(expected, abs=1e-12)


def test_empirical_ratio_fully_correlated():
    model = ScoreModel(0.3, 0.1, 0.7, 0.1, rho=1.0)
    ratio = empirical_sigma_ratio(model, 5, 20_000, seed=1)
    assert ratio == pytest.approx(1.0, abs=0.02)


def test_empirical_ratio_iid_window4():
    model = ScoreModel(0.3, 0.1, 0.7, 0.1, rho=0.0)
    ratio = empirical_sigma_ratio(model, 4, 40_000, seed=2)
    assert ratio == pytest.approx(0.5, abs=0.02)


def test_empirical_ratio_between_bounds_for_partial_correlation():
    model = ScoreModel(0.3, 0.1, 0.7, 0.1, rho=0.5)
    ratio = empirical_sigma_ratio(model, 4, 40_000, seed=3)
    assert 0.5 < ratio < 1.0
    assert ratio == pytest.approx(ar1_mean_std_oracle(0.5, 4), abs=0.02)


def test_empirical_ratio_requires_enough_trials():
    model = ScoreModel(0.3, 0.1, 0.7, 0.1)
    with pytest.raises(InputError):
        empirical_sigma_ratio(model, 4, 100, seed=0)
