"""Probability, score and residual identities for the four families."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from gpscheck import Dataset, DataError, LevelSet, PropensityModel
from gpscheck.models import FAMILIES, INDEX_CLAMP

from conftest import FAMILY_CASES, make_rng, random_dataset, random_model


def finite_difference_score(model, x, t, h=1e-6):
    """Central differences of the level (or cumulative) probability."""
    theta = model.theta
    grad = np.empty((np.atleast_2d(x).shape[0], theta.size))
    for k in range(theta.size):
        step = np.zeros_like(theta)
        step[k] = h
        hi = PropensityModel(model.family, theta + step, model.J)
        lo = PropensityModel(model.family, theta - step, model.J)
        if model.family == "ordered_logit":
            up, dn = hi.cumulative(x)[:, t], lo.cumulative(x)[:, t]
        else:
            up, dn = hi.prob(x)[:, t], lo.prob(x)[:, t]
        grad[:, k] = (up - dn) / (2.0 * h)
    return grad


# ---------------------------------------------------------------------------
# probabilities
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("family,d_x,J", FAMILY_CASES)
def test_probabilities_sum_to_one(family, d_x, J):
    rng = make_rng(101, FAMILIES.index(family))
    for draw in range(50):
        model = random_model(family, d_x, J, rng, scale=1.5)
        X = rng.standard_normal((20, d_x))
        P = model.prob(X)
        assert P.shape == (20, J + 1)
        assert np.all(P > 0.0)
        assert_allclose(P.sum(axis=1), 1.0, rtol=0, atol=1e-12)


def test_binary_links_match_scipy():
    from scipy.special import expit, ndtr

    X = np.array([[1.0, 0.5], [1.0, -2.0], [1.0, 0.0]])
    theta = np.array([0.3, -1.1])
    eta = X @ theta
    logit = PropensityModel("binary_logit", theta, 1)
    probit = PropensityModel("binary_probit", theta, 1)
    assert_allclose(logit.prob(X)[:, 1], expit(eta), rtol=1e-15)
    assert_allclose(probit.prob(X)[:, 1], ndtr(eta), rtol=1e-15)


def test_multinomial_reference_level_is_zero_block():
    # with all coefficients zero every level is equally likely
    model = PropensityModel("multinomial_logit", np.zeros(6), 2)
    P = model.prob(np.array([[1.0, 2.0, -1.0]]))
    assert_allclose(P, np.full((1, 3), 1.0 / 3.0), rtol=1e-15)


def test_ordered_level_probabilities_positive_in_far_tails():
    # adjacent cutpoints with the index pushed far out: the expm1 form
    # keeps the middle level strictly positive where naive CDF
    # differencing would cancel to zero
    model = PropensityModel("ordered_logit", np.array([-1.0, 1.0, 2.0]), 2)
    X = np.array([[-30.0], [30.0], [0.0]])
    P = model.prob(X)
    assert np.all(P > 0.0)
    assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_ordered_cumulative_monotone_and_consistent():
    rng = make_rng(102)
    model = random_model("ordered_logit", 3, 2, rng)
    X = rng.standard_normal((40, 3))
    C = model.cumulative(X)
    assert np.all(np.diff(C, axis=1) > 0.0)
    P = model.prob(X)
    assert_allclose(np.cumsum(P, axis=1)[:, :-1], C, atol=1e-12)


def test_cumulative_rejected_for_level_families():
    model = PropensityModel("binary_logit", np.array([0.0]), 1)
    with pytest.raises(DataError):
        model.cumulative(np.array([[1.0]]))


def test_index_clamp_keeps_probabilities_positive():
    theta = np.array([50.0])
    for family in ("binary_logit", "binary_probit"):
        model = PropensityModel(family, theta, 1)
        P = model.prob(np.array([[5.0], [-5.0]]))  # eta = +-250, clamped
        # strictly positive on both sides; only the logistic link also
        # stays below one in doubles (ndtr(35) rounds to 1.0)
        assert np.all(P > 0.0)
        if family == "binary_logit":
            assert np.all(P < 1.0)
        # beyond the clamp the output is flat
        assert_allclose(
            model.prob(np.array([[100.0]])), model.prob(np.array([[5.0]])), rtol=0
        )
    assert INDEX_CLAMP == 35.0


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("family,d_x,J", FAMILY_CASES)
def test_score_matches_finite_differences(family, d_x, J):
    rng = make_rng(103, FAMILIES.index(family))
    for draw in range(10):
        model = random_model(family, d_x, J, rng)
        X = rng.standard_normal((8, d_x))
        t_max = J - 1 if family == "ordered_logit" else J
        for t in range(t_max + 1):
            G = model.score(X, t)
            fd = finite_difference_score(model, X, t)
            assert_allclose(G, fd, rtol=1e-5, atol=1e-7)


def test_score_single_row_squeezes():
    model = PropensityModel("binary_logit", np.array([0.5, -0.5]), 1)
    g = model.score(np.array([1.0, 2.0]), 1)
    assert g.shape == (2,)


def test_level_scores_sum_to_zero():
    # sum_t q_t = 1 identically, so the level scores sum to the zero vector
    rng = make_rng(104)
    model = random_model("multinomial_logit", 3, 2, rng)
    X = rng.standard_normal((15, 3))
    total = sum(model.score(X, t) for t in range(3))
    assert_allclose(total, 0.0, atol=1e-14)


def test_score_rejects_bad_level():
    model = PropensityModel("ordered_logit", np.array([-1.0, 1.0, 0.3]), 2)
    with pytest.raises(DataError):
        model.score(np.array([[1.0]]), 2)  # cumulative levels stop at J - 1


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("family,d_x,J", FAMILY_CASES)
def test_level_residuals_sum_to_zero_over_levels(family, d_x, J):
    if family == "ordered_logit":
        pytest.skip("cumulative residuals do not telescope over levels")
    rng = make_rng(105, FAMILIES.index(family))
    data, model = random_dataset(family, 60, d_x, J, rng)
    total = sum(model.residual(data.T, data.X, t) for t in range(J + 1))
    assert_allclose(total, 0.0, atol=1e-12)


def test_cumulative_residual_definition():
    rng = make_rng(106)
    data, model = random_dataset("ordered_logit", 50, 3, 2, rng)
    e0 = model.residual(data.T, data.X, 0)
    expected = (data.T <= 0).astype(float) - model.cumulative(data.X)[:, 0]
    assert_allclose(e0, expected, rtol=0)


def test_residual_bounded_by_one():
    rng = make_rng(107)
    data, model = random_dataset("multinomial_logit", 50, 3, 2, rng)
    for t in range(3):
        e = model.residual(data.T, data.X, t)
        assert np.all(np.abs(e) < 1.0)


# ---------------------------------------------------------------------------
# Dataset and LevelSet validation
# ---------------------------------------------------------------------------


def test_dataset_validation_errors():
    X = np.ones((10, 2))
    X[:, 1] = np.arange(10.0)
    T = np.array([0, 1] * 5)
    with pytest.raises(DataError, match="non-finite"):
        Dataset(X=np.array([[np.nan, 1.0]] * 10), T=T)
    with pytest.raises(DataError, match="2-d"):
        Dataset(X=np.ones(10), T=T)
    with pytest.raises(DataError, match="integer"):
        Dataset(X=X, T=np.linspace(0.0, 1.0, 10))
    with pytest.raises(DataError, match="non-negative"):
        Dataset(X=X, T=np.array([-1, 1] * 5))
    with pytest.raises(DataError, match="exceeds J"):
        Dataset(X=X, T=np.array([0, 3] * 5), J=2)
    with pytest.raises(DataError, match="one entry per row"):
        Dataset(X=X, T=T, Y=np.ones(9))
    with pytest.raises(DataError, match="n >= d_x"):
        Dataset(X=np.ones((3, 4)), T=np.array([0, 1, 0]))


def test_dataset_infers_j_and_counts():
    data = Dataset(X=np.column_stack([np.ones(6), np.arange(6.0)]), T=[0, 1, 2, 0, 1, 2])
    assert data.J == 2
    assert data.n == 6
    assert data.d_x == 2
    assert data.levels_present()
    gap = Dataset(X=np.ones((4, 1)), T=[0, 2, 0, 2], J=2)
    assert not gap.levels_present()


def test_levelset_validation():
    with pytest.raises(DataError):
        LevelSet(())
    with pytest.raises(DataError):
        LevelSet((1, 1))
    with pytest.raises(DataError):
        LevelSet((0, 1), (0.5,))
    with pytest.raises(DataError):
        LevelSet((0, 1), (-1.0, 2.0))
    ls = LevelSet((1, 2))
    assert ls.weights == (1.0, 1.0)


def test_levelset_defaults_per_family():
    assert LevelSet.default_for("binary_probit", 1).levels == (1,)
    assert LevelSet.default_for("multinomial_logit", 2).levels == (1, 2)
    assert LevelSet.default_for("multinomial_logit", 2, include_reference=True).levels == (0, 1, 2)
    assert LevelSet.default_for("ordered_logit", 2).levels == (0, 1)


def test_model_validation():
    with pytest.raises(DataError, match="strictly increasing"):
        PropensityModel("ordered_logit", np.array([1.0, 0.5, 0.3]), 2)
    with pytest.raises(DataError, match="divisible"):
        PropensityModel("multinomial_logit", np.ones(5), 2)
    with pytest.raises(DataError, match="unknown family"):
        PropensityModel("tobit", np.ones(2), 1)
    with pytest.raises(DataError, match="J = 1"):
        PropensityModel("binary_logit", np.ones(2), 2)


@settings(max_examples=40, deadline=None)
@given(
    theta=st.lists(st.floats(-3.0, 3.0), min_size=2, max_size=2),
    x=st.lists(st.floats(-50.0, 50.0), min_size=2, max_size=2),
)
def test_binary_probabilities_always_interior(theta, x):
    model = PropensityModel("binary_logit", np.asarray(theta), 1)
    p = model.prob(np.asarray(x))
    assert 0.0 < p[1] < 1.0
    assert abs(p.sum() - 1.0) <= 1e-12
