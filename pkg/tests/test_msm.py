import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from iptwsize.data import Dataset
from iptwsize.errors import NonEstimableError
from iptwsize.msm import IDENTITY, LOG, LOGIT, fit_msm, get_link, score_beta

from conftest import make_dataset


def _two_arm(y0, y1, kind="continuous"):
    y = np.array(list(y0) + list(y1), dtype=float)
    t = np.array([0.0] * len(y0) + [1.0] * len(y1))
    return Dataset(np.zeros((y.size, 1)), t, y, kind)


@pytest.mark.parametrize("link", [LOGIT, LOG, IDENTITY])
def test_link_round_trip(link):
    mu = np.array([1e-6, 0.03, 0.5, 0.97]) if link is LOGIT else np.array([1e-6, 0.5, 3.0, 1e4])
    assert np.max(np.abs(link.inverse(link.link(mu)) - mu) / np.maximum(mu, 1)) < 1e-12
    assert np.all(link.mu_eta(mu) > 0)


def test_identity_unit_weights():
    d = _two_arm([2, 4], [4, 6])
    fit = fit_msm(d, np.ones(4), IDENTITY)
    assert fit.beta_hat.tolist() == [3.0, 2.0]


def test_logit_log_odds_ratio():
    # p1 solves logit(p1) = logit(0.03) + log 2
    p1 = expit(logit(0.03) + math.log(2))
    assert p1 == pytest.approx(0.05825, abs=1e-5)
    n = 100_000
    y0 = np.zeros(n)
    y0[:3000] = 1
    y1 = np.zeros(n)
    y1[:5825] = 1
    fit = fit_msm(_two_arm(y0, y1, "binary"), np.ones(2 * n), LOGIT)
    assert fit.beta_hat[1] == pytest.approx(math.log(2), abs=1e-3)
    assert logit(fit.mu1) == pytest.approx(fit.beta_hat.sum(), abs=1e-10)


def test_no_events_is_non_estimable():
    d = _two_arm([0, 0, 0], [0, 1], "binary")
    with pytest.raises(NonEstimableError, match="non-estimable"):
        fit_msm(d, np.ones(5), LOGIT)
    with pytest.raises(NonEstimableError):
        fit_msm(_two_arm([0, 0], [1, 2], "count"), np.ones(4), LOG)


def test_empty_arm_is_non_estimable():
    with pytest.raises(NonEstimableError, match="empty arm"):
        fit_msm(_two_arm([], [1.0, 2.0]), np.ones(2), IDENTITY)


def test_score_zero_residual():
    d = _two_arm([3, 3], [5, 5])
    assert np.all(score_beta(np.array([3.0, 2.0]), d, np.ones(4), IDENTITY) == 0)


def test_score_single_subject():
    d = Dataset(np.zeros((1, 1)), np.array([1.0]), np.array([1.0]), "binary")
    assert score_beta(np.array([0.0, 0.0]), d, np.array([2.0]), LOGIT).tolist() == [[1.0, 1.0]]


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    kind=st.sampled_from(["binary", "count", "continuous"]),
    scale=st.floats(0.01, 100.0),
)
def test_root_and_weight_scale_invariance(seed, kind, scale):
    gen = np.random.default_rng(seed)
    d = make_dataset(gen, n=150, kind=kind)
    link = {"binary": LOGIT, "count": LOG, "continuous": IDENTITY}[kind]
    w = gen.uniform(1.0, 5.0, d.n)
    try:
        fit = fit_msm(d, w, link)
    except NonEstimableError:
        return
    assert np.max(np.abs(score_beta(fit.beta_hat, d, w, link).sum(axis=0))) <= 1e-8
    assert np.array_equal(fit_msm(d, w * 4.0, link).beta_hat, fit.beta_hat)
    scaled = fit_msm(d, w * scale, link).beta_hat
    assert np.allclose(scaled, fit.beta_hat, rtol=1e-12, atol=1e-12)


def test_identity_scale_equivariance(rng):
    d = make_dataset(rng, n=100)
    w = rng.uniform(1, 3, d.n)
    b = fit_msm(d, w, IDENTITY).beta_hat[1]
    d2 = Dataset(d.x, d.t, d.y * 4.0, d.kind)
    assert fit_msm(d2, w, IDENTITY).beta_hat[1] == 4.0 * b


def test_constant_weights_give_marginal_log_odds_ratio():
    d = _two_arm([1, 0, 0, 0, 1], [1, 1, 0], "binary")
    fit = fit_msm(d, np.full(8, 3.7), LOGIT)
    a, b, c, e = 2, 1, 2, 3  # treated events/non-events, control events/non-events
    assert fit.beta_hat[1] == pytest.approx(math.log((a * e) / (b * c)), rel=1e-12)


def test_permutation_invariance(rng):
    d = make_dataset(rng, n=120, kind="count")
    w = rng.uniform(1, 3, d.n)
    perm = rng.permutation(d.n)
    a = fit_msm(d, w, LOG).beta_hat
    b = fit_msm(d.take(perm), w[perm], LOG).beta_hat
    assert np.allclose(a, b, rtol=1e-13)


def test_get_link_by_name():
    assert get_link("log") is LOG
    with pytest.raises(ValueError):
        get_link("probit")
