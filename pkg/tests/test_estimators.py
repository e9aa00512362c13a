import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hetids.core import make_kernel
from hetids.estimators import (
    ConfidenceBand,
    KernelState,
    LinearState,
    beta_linear,
    beta_rkhs,
    conditional_width,
    gap_surrogate,
    krr_predict,
    krr_update,
    wls_predict,
    wls_update,
)


def _random_sequence(rng, n, d):
    X = rng.uniform(-1, 1, (n, d))
    rho = rng.uniform(0.1, 1.0, n)
    y = X @ rng.standard_normal(d) + rho * rng.standard_normal(n)
    return X, y, rho


def test_wls_first_update():
    st_ = wls_update(LinearState(2), [1.0, 0.0], 2.0, 1.0)
    np.testing.assert_allclose(st_.V, np.diag([2.0, 1.0]))
    np.testing.assert_allclose(st_.theta_hat, [1.0, 0.0])
    assert wls_predict(st_, [1.0, 0.0]) == pytest.approx((1.0, 1 / math.sqrt(2)))


def test_wls_empty_state():
    s = LinearState(3)
    np.testing.assert_array_equal(s.theta_hat, np.zeros(3))
    assert wls_predict(s, [0.0, 1.0, 0.0]) == (0.0, 1.0)
    assert wls_predict(s, np.zeros(3)) == (0.0, 0.0)


def test_wls_scalar_hand_algebra():
    s = LinearState(1)
    s.update([1.0], 0.0, 1.0)
    s.update([1.0], 3.0, 1 / math.sqrt(2))
    assert s.V[0, 0] == pytest.approx(4.0)
    assert s.theta_hat[0] == pytest.approx(1.5)


@pytest.mark.parametrize("rho", [0.0, -1.0, float("nan")])
def test_wls_rejects_bad_noise(rho):
    with pytest.raises(ValueError):
        LinearState(1).update([1.0], 1.0, rho)


def test_wls_rejects_nonfinite():
    with pytest.raises(ValueError):
        LinearState(1).update([np.inf], 1.0, 1.0)
    with pytest.raises(ValueError):
        LinearState(1).update([1.0], np.nan, 1.0)


def test_beta_linear_values():
    s = LinearState(2)
    assert beta_linear(s, 1 - 1e-12, 1.0) == pytest.approx(1.0, abs=1e-5)
    s.logdet_V = s.logdet_V0 + math.log(2.0)
    assert beta_linear(s, 0.1, 1.0) == pytest.approx(math.sqrt(2 * math.log(math.sqrt(2) / 0.1)) + 1)
    assert beta_linear(s, 0.1, 1.0) == pytest.approx(3.3018, abs=1e-4)
    with pytest.raises(ValueError):
        beta_linear(s, 1.0, 1.0)


def test_beta_monotone_in_time():
    rng = np.random.default_rng(0)
    s = LinearState(3)
    X, y, rho = _random_sequence(rng, 10, 3)
    betas = []
    for k in range(10):
        s.update(X[k], y[k], rho[k])
        betas.append(s.beta(0.01))
    assert np.all(np.diff(betas) >= 0)


def test_linear_invariants_after_many_updates():
    rng = np.random.default_rng(1)
    s = LinearState(4, refresh_every=128)
    X, y, rho = _random_sequence(rng, 300, 4)
    for k in range(300):
        s.update(X[k], y[k], rho[k])
        assert s.logdet_V >= s.logdet_V0
    assert np.linalg.norm(s.V @ s.V_inv - np.eye(4)) < 1e-8
    np.testing.assert_allclose(s.theta_hat, s.V_inv @ s.b, atol=1e-10)


def test_wls_order_invariance():
    rng = np.random.default_rng(2)
    X, y, rho = _random_sequence(rng, 40, 3)
    a, b = LinearState(3), LinearState(3)
    for k in range(40):
        a.update(X[k], y[k], rho[k])
    for k in rng.permutation(40):
        b.update(X[k], y[k], rho[k])
    np.testing.assert_allclose(a.V, b.V, atol=1e-9)
    np.testing.assert_allclose(a.theta_hat, b.theta_hat, atol=1e-9)


def test_width_monotone_after_each_update():
    rng = np.random.default_rng(3)
    X, y, rho = _random_sequence(rng, 30, 2)
    s = LinearState(2)
    for k in range(30):
        before = np.sqrt(s.variance(X))
        s.update(X[k], y[k], rho[k])
        assert np.all(np.sqrt(s.variance(X)) <= before + 1e-12)


def test_krr_single_observation():
    s = KernelState(make_kernel("rbf", 0.5), lam=1.0)
    x1 = np.array([0.2, -0.1])
    assert krr_predict(s, x1) == pytest.approx((0.0, 1.0))
    krr_update(s, x1, 4.0, 1.0)
    m, w = krr_predict(s, x1)
    assert m == pytest.approx(2.0)
    assert w == pytest.approx(math.sqrt(0.5))
    assert s.variance(x1)[0] == pytest.approx(0.5)


def test_krr_far_query_reverts_to_prior():
    s = KernelState(make_kernel("rbf", 1e-3), lam=1.0)
    s.update([0.0], 1.0, 1.0)
    m, w = s.predict([1.0])
    assert abs(m) < 1e-12 and w == pytest.approx(1.0)


def test_beta_rkhs_values():
    s = KernelState(make_kernel("rbf"), lam=4.0)
    assert beta_rkhs(s, 0.5, 1.0) == pytest.approx(math.sqrt(2 * math.log(2)) + 2)
    assert beta_rkhs(s, 0.5, 1.0) == pytest.approx(3.1774, abs=1e-4)
    assert beta_rkhs(s, 1 - 1e-12, 1.0) == pytest.approx(2.0, abs=1e-5)


def test_krr_chol_matches_gram():
    rng = np.random.default_rng(4)
    s = KernelState(make_kernel("rbf", 0.4), lam=0.5)
    X, y, rho = _random_sequence(rng, 60, 2)
    for k in range(60):
        s.update(X[k], y[k], rho[k])
    L = s.chol
    np.testing.assert_allclose(L @ L.T, s.gram(), atol=1e-8)
    sign, ld = np.linalg.slogdet(s.gram())
    ref = ld - np.sum(np.log(s.lam * rho**2))
    assert s.logdet_ratio == pytest.approx(ref, abs=1e-7)


def test_krr_anchors_match_direct_queries():
    rng = np.random.default_rng(5)
    anchors = rng.uniform(-1, 1, (8, 2))
    s = KernelState(make_kernel("rbf", 0.5), lam=1.0, anchors=anchors)
    X, y, rho = _random_sequence(rng, 25, 2)
    for k in range(25):
        s.update(X[k], y[k], rho[k])
    np.testing.assert_allclose(s.anchor_mean, s.mean(anchors), atol=1e-9)
    np.testing.assert_allclose(s.anchor_var, s.variance(anchors), atol=1e-9)
    np.testing.assert_allclose(s.anchor_covariance(3), s.covariance(anchors, anchors[3]), atol=1e-9)


def test_krr_beta_monotone():
    rng = np.random.default_rng(6)
    s = KernelState(make_kernel("rbf"), lam=1.0)
    X, y, rho = _random_sequence(rng, 10, 2)
    b = []
    for k in range(10):
        s.update(X[k], y[k], rho[k])
        b.append(s.beta(0.01))
    assert np.all(np.diff(b) >= 0)


def test_conditional_width_scalar_example():
    s = LinearState(1)
    s.update([1.0], 0.7, 1.0)
    w = conditional_width(s, [1.0], [1.0], 1.0)
    assert w**2 == pytest.approx(1 / 3)


def test_conditional_width_orthogonal_and_uninformative():
    s = LinearState(2)
    s.update([1.0, 0.0], 1.0, 0.5)
    sig = math.sqrt(s.variance([0.0, 1.0])[0])
    assert conditional_width(s, [0.0, 1.0], [1.0, 0.0], 0.3) == pytest.approx(sig)
    assert conditional_width(s, [0.0, 1.0], [0.0, 1.0], 1e8) == pytest.approx(sig)


@pytest.mark.parametrize("lam", [1.0, 2.5])
def test_conditional_width_kernel_matches_update(lam):
    rng = np.random.default_rng(7)
    s = KernelState(make_kernel("rbf", 0.5), lam=lam)
    X, y, rho = _random_sequence(rng, 10, 2)
    for k in range(10):
        s.update(X[k], y[k], rho[k])
    tgt, cand = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
    w = conditional_width(s, tgt, cand, 0.3)
    s.update(cand, 123.0, 0.3)
    assert w == pytest.approx(math.sqrt(s.variance(tgt)[0]), abs=1e-9)


def test_gap_surrogate_examples():
    band = ConfidenceBand(2.0, np.array([1.0, 3.0]), np.array([0.5, 0.5]))
    np.testing.assert_allclose(gap_surrogate(band), [4.0, 2.0])
    flat = ConfidenceBand(0.0, np.array([1.0, 3.0, 2.0]), np.ones(3))
    np.testing.assert_allclose(gap_surrogate(flat), [2.0, 0.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 5.0))
def test_gap_surrogate_at_ucb_action(seed, beta):
    rng = np.random.default_rng(seed)
    band = ConfidenceBand(beta, rng.normal(size=12), rng.uniform(0, 1, 12))
    d = gap_surrogate(band)
    j = int(np.argmax(band.upper))
    assert np.all(d >= 0)
    assert d[j] == pytest.approx(2 * beta * band.widths[j], abs=1e-12)
