"""Stabilized IPW contrasts and their percentile-bootstrap intervals."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

import gpscheck.effects as effects_mod
from gpscheck import (
    DataError,
    Dataset,
    EmptyGroupError,
    TooManyFailedResamplesError,
    fit_mle,
    ipw_ate,
    percentile_bootstrap,
    percentile_bootstrap_pairs,
)
from gpscheck.effects import PROB_FLOOR, AteResult

from conftest import make_rng, random_dataset, simulate_treatment


def _with_outcome(family, seed, n=120, d_x=3, J=1, outcome=None):
    rng = make_rng(seed)
    data, model = random_dataset(family, n, d_x, J, rng)
    y = outcome(data, rng) if outcome else rng.standard_normal(data.n)
    return Dataset(data.X, data.T, y, J=data.J), model


def test_ipw_ate_antisymmetric():
    data, model = _with_outcome("multinomial_logit", 451, J=2)
    fit = fit_mle("multinomial_logit", data)
    forward = ipw_ate(data, "multinomial_logit", fit.theta_hat, 2, 0)
    assert ipw_ate(data, "multinomial_logit", fit.theta_hat, 0, 2) == -forward
    assert ipw_ate(data, "multinomial_logit", fit.theta_hat, 1, 1) == 0.0


def test_ipw_ate_invariant_to_outcome_shift():
    # Hajek weights sum to one within each arm, so adding a constant to Y
    # cancels exactly in the contrast
    data, _ = _with_outcome("binary_logit", 452)
    fit = fit_mle("binary_logit", data)
    base = ipw_ate(data, "binary_logit", fit.theta_hat, 1, 0)
    shifted = Dataset(data.X, data.T, data.Y + 17.5, J=data.J)
    assert_allclose(
        ipw_ate(shifted, "binary_logit", fit.theta_hat, 1, 0), base, atol=1e-12
    )


def test_ipw_ate_constant_outcome_per_arm():
    # Y = a on the treated and b on the controls: each Hajek arm averages
    # a constant, so the contrast is a - b no matter the weights
    rng = make_rng(453)
    data, _ = random_dataset("binary_logit", 100, 3, 1, rng)
    y = np.where(data.T == 1, 2.5, -1.0)
    data = Dataset(data.X, data.T, y, J=1)
    fit = fit_mle("binary_logit", data)
    assert_allclose(ipw_ate(data, "binary_logit", fit.theta_hat, 1, 0), 3.5, atol=1e-12)


def test_ipw_ate_zero_theta_is_group_mean_contrast():
    # constant fitted probabilities drop out of the normalized weights,
    # leaving the difference of raw group means
    rng = make_rng(454)
    data, _ = random_dataset("binary_logit", 80, 3, 1, rng)
    y = rng.standard_normal(data.n)
    data = Dataset(data.X, data.T, y, J=1)
    theta = np.zeros(3)
    naive = y[data.T == 1].mean() - y[data.T == 0].mean()
    assert_allclose(ipw_ate(data, "binary_logit", theta, 1, 0), naive, atol=1e-12)


def test_ipw_ate_matches_hand_weights():
    data, _ = _with_outcome("binary_logit", 455, n=60)
    fit = fit_mle("binary_logit", data)
    probs = fit.model().prob(data.X)
    w1 = (data.T == 1) / probs[:, 1]
    w0 = (data.T == 0) / probs[:, 0]
    expected = (w1 @ data.Y) / w1.sum() - (w0 @ data.Y) / w0.sum()
    assert_allclose(
        ipw_ate(data, "binary_logit", fit.theta_hat, 1, 0), expected, rtol=1e-12
    )


def test_ipw_ate_validation():
    data, model = _with_outcome("binary_logit", 456)
    with pytest.raises(DataError, match="outside"):
        ipw_ate(data, "binary_logit", model.theta, 2, 0)
    bare = Dataset(data.X, data.T, J=1)
    with pytest.raises(DataError, match="outcome"):
        ipw_ate(bare, "binary_logit", model.theta, 1, 0)


def test_empty_arm_raises():
    rng = make_rng(457)
    X = np.column_stack([np.ones(40), rng.standard_normal(40)])
    data = Dataset(X, np.ones(40, dtype=int), rng.standard_normal(40), J=1)
    with pytest.raises(EmptyGroupError, match="level 0"):
        ipw_ate(data, "binary_logit", np.array([2.0, 0.0]), 1, 0)


def test_probability_floor_applies(caplog):
    # an extreme slope pushes fitted probabilities below the floor; the
    # weights must stay finite and the clip must be logged
    rng = make_rng(458)
    x = rng.standard_normal(50) * 3.0
    X = np.column_stack([np.ones(50), x])
    T = (x > 0).astype(int)
    T[:4] = 1 - T[:4]  # keep both arms occupied
    data = Dataset(X, T, rng.standard_normal(50), J=1)
    theta = np.array([0.0, 30.0])
    with caplog.at_level("WARNING", logger="gpscheck.effects"):
        value = ipw_ate(data, "binary_logit", theta, 1, 0)
    assert np.isfinite(value)
    assert any("floored" in rec.message for rec in caplog.records)
    probs = effects_mod._floored_probs(
        effects_mod.PropensityModel("binary_logit", theta, 1), data.X
    )
    assert probs.min() >= PROB_FLOOR


def test_percentile_bootstrap_basic_properties():
    data, _ = _with_outcome("binary_logit", 459, n=150)
    result = percentile_bootstrap(data, "binary_logit", (1, 0), B=60, seed=21)
    assert result.pair == (1, 0)
    assert result.B == 60
    assert result.seed == 21
    assert result.ci[0] <= result.ci[1]
    assert result.se > 0.0
    assert result.dropped <= 6
    # the point estimate is the full-sample contrast, not a bootstrap mean
    fit = fit_mle("binary_logit", data)
    assert result.estimate == ipw_ate(data, "binary_logit", fit.theta_hat, 1, 0)


def test_percentile_bootstrap_deterministic():
    data, _ = _with_outcome("binary_logit", 460, n=120)
    r1 = percentile_bootstrap(data, "binary_logit", (1, 0), B=40, seed=5)
    r2 = percentile_bootstrap(data, "binary_logit", (1, 0), B=40, seed=5)
    assert (r1.estimate, r1.se, r1.ci) == (r2.estimate, r2.se, r2.ci)


def test_pairs_share_resamples():
    # running the pairs jointly must agree with running them one at a time
    # on the same seed, since replicate b's rows come from (seed, 2, b)
    rng = make_rng(461)
    data, _ = random_dataset("multinomial_logit", 180, 3, 2, rng)
    data = Dataset(data.X, data.T, rng.standard_normal(data.n), J=2)
    joint = percentile_bootstrap_pairs(
        data, "multinomial_logit", [(1, 0), (2, 0)], B=30, seed=9
    )
    single = percentile_bootstrap(data, "multinomial_logit", (2, 0), B=30, seed=9)
    assert joint[1].ci == single.ci
    assert joint[1].estimate == single.estimate
    assert joint[0].pair == (1, 0)


def test_bootstrap_interval_covers_obvious_signal():
    # strong constant effect: the interval must sit tight around it
    def outcome(data, rng):
        return 4.0 * (data.T == 1) + 0.1 * rng.standard_normal(data.n)

    data, _ = _with_outcome("binary_logit", 462, n=300, outcome=outcome)
    result = percentile_bootstrap(data, "binary_logit", (1, 0), B=80, seed=3)
    assert result.ci[0] > 3.0 and result.ci[1] < 5.0


def test_too_many_failed_resamples(monkeypatch):
    data, _ = _with_outcome("binary_logit", 463, n=100)
    calls = {"count": 0}
    true_fit = effects_mod.fit_mle

    def flaky(family, d, init=None, **kw):
        calls["count"] += 1
        if init is not None and calls["count"] % 2 == 0:
            raise EmptyGroupError("synthetic failure")
        return true_fit(family, d, init=init, **kw)

    monkeypatch.setattr(effects_mod, "fit_mle", flaky)
    with pytest.raises(TooManyFailedResamplesError, match="failed"):
        percentile_bootstrap(data, "binary_logit", (1, 0), B=40, seed=11)


def test_dropped_resamples_counted(monkeypatch):
    data, _ = _with_outcome("binary_logit", 464, n=100)
    true_fit = effects_mod.fit_mle
    calls = {"count": 0}

    def sometimes(family, d, init=None, **kw):
        if init is not None:
            calls["count"] += 1
            if calls["count"] == 1:
                raise EmptyGroupError("synthetic failure")
        return true_fit(family, d, init=init, **kw)

    monkeypatch.setattr(effects_mod, "fit_mle", sometimes)
    result = percentile_bootstrap(data, "binary_logit", (1, 0), B=30, seed=13)
    assert result.dropped == 1


def test_bootstrap_validation():
    data, _ = _with_outcome("binary_logit", 465)
    with pytest.raises(DataError, match="B >= 1"):
        percentile_bootstrap(data, "binary_logit", (1, 0), B=0, seed=1)
    with pytest.raises(DataError, match="alpha"):
        percentile_bootstrap(data, "binary_logit", (1, 0), B=9, alpha=1.5, seed=1)
    with pytest.raises(DataError, match="pair"):
        percentile_bootstrap_pairs(data, "binary_logit", [], B=9, seed=1)
    bare = Dataset(data.X, data.T, J=1)
    with pytest.raises(DataError, match="outcome"):
        percentile_bootstrap(bare, "binary_logit", (1, 0), B=9, seed=1)


def test_ate_result_rejects_inverted_interval():
    with pytest.raises(DataError, match="lower > upper"):
        AteResult(pair=(1, 0), estimate=0.0, se=1.0, ci=(1.0, -1.0), B=9, seed=0)


def test_warm_start_used(monkeypatch):
    # refits must start from the full-sample estimate; a cold refit would
    # pass init=None
    data, _ = _with_outcome("binary_logit", 466, n=90)
    seen = []
    true_fit = effects_mod.fit_mle

    def spy(family, d, init=None, **kw):
        seen.append(init is not None)
        return true_fit(family, d, init=init, **kw)

    monkeypatch.setattr(effects_mod, "fit_mle", spy)
    percentile_bootstrap(data, "binary_logit", (1, 0), B=12, seed=2)
    assert seen[0] is False  # the one full-sample fit
    assert all(seen[1:]) and len(seen) == 13
