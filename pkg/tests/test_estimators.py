from __future__ import annotations

import warnings

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit, logit

from cfdbal.errors import (
    InvalidWeightsError,
    ParameterError,
    SeparationError,
    ShapeError,
    WeakInstrumentError,
)
from cfdbal.estimators import (
    Dataset,
    ate_weighted,
    fit_logistic,
    hajek_weights,
    ipw_hajek_weights,
    late_weighted,
)


def _random_data(rng, n=50, d=2):
    z = (rng.random(n) < 0.5).astype(float)
    z[:2] = [1, 0]
    a = np.where(z == 1, rng.random(n) < 0.7, rng.random(n) < 0.1).astype(float)
    a[0], a[1] = 1, 0
    return Dataset(rng.normal(size=n), z, rng.normal(size=(n, d)), a)


def _feasible_w(rng, z):
    w = rng.exponential(size=z.size)
    for g in (0, 1):
        m = z == g
        w[m] *= m.sum() / w[m].sum()
    return w


def test_ate_hand_example():
    data = Dataset([2, 4, 1, 3], [1, 1, 0, 0], np.zeros((4, 1)))
    assert ate_weighted(data, [0.5, 1.5, 1, 1]).value == pytest.approx(1.5, abs=1e-14)


def test_late_hand_example():
    data = Dataset([2, 4, 1, 3], [1, 1, 0, 0], np.zeros((4, 1)), a=[1, 0, 0, 0])
    est = late_weighted(data, np.ones(4))
    assert est.value == pytest.approx(2.0, abs=1e-14)
    assert est.denominator == pytest.approx(0.5)


def test_uniform_weights_give_mean_difference(rng):
    data = _random_data(rng)
    ref = data.y[data.z == 1].mean() - data.y[data.z == 0].mean()
    assert ate_weighted(data, np.ones(data.n)).value == pytest.approx(ref, abs=1e-12)


def test_constant_outcome_gives_zero(rng):
    data = _random_data(rng)
    data = Dataset(np.full(data.n, 7.3), data.z, data.X)
    w = _feasible_w(rng, data.z)
    assert abs(ate_weighted(data, w).value) <= 1e-12


def test_perfect_compliance_collapses(rng):
    d = _random_data(rng)
    data = Dataset(d.y, d.z, d.X, a=d.z)
    w = _feasible_w(rng, d.z)
    est = late_weighted(data, w)
    assert est.denominator == pytest.approx(1.0, abs=1e-12)
    assert est.value == pytest.approx(ate_weighted(data, w).value, abs=1e-12)


def test_outcome_equal_to_receipt(rng):
    d = _random_data(rng)
    data = Dataset(d.a, d.z, d.X, a=d.a)
    assert late_weighted(data, _feasible_w(rng, d.z)).value == pytest.approx(1.0, abs=1e-12)


def test_ratio_consistency(rng):
    d = _random_data(rng)
    w = _feasible_w(rng, d.z)
    ratio = ate_weighted(d, w).value / ate_weighted(Dataset(d.a, d.z, d.X), w).value
    assert late_weighted(d, w).value == pytest.approx(ratio, rel=1e-12)


def test_linearity(rng):
    d = _random_data(rng)
    w = _feasible_w(rng, d.z)
    base = ate_weighted(d, w).value
    shifted = Dataset(-2.5 * d.y + 4.0, d.z, d.X)
    assert ate_weighted(shifted, w).value == pytest.approx(-2.5 * base, abs=1e-12)


def test_weak_instrument():
    data = Dataset([1, 2, 3, 4], [1, 1, 0, 0], np.zeros((4, 1)), a=[1, 0, 1, 0])
    with pytest.raises(WeakInstrumentError, match="0"):
        late_weighted(data, np.ones(4))


def test_weight_validation():
    data = Dataset([1, 2, 3, 4], [1, 1, 0, 0], np.zeros((4, 1)))
    with pytest.raises(InvalidWeightsError):
        ate_weighted(data, [1, 1, 1, 2])
    with pytest.raises(InvalidWeightsError):
        ate_weighted(data, [2.5, -0.5, 1, 1])
    with pytest.raises(InvalidWeightsError):
        ate_weighted(data, [np.nan, 1, 1, 1])
    with pytest.raises(ShapeError):
        ate_weighted(data, [1, 1, 1])
    with pytest.raises(ParameterError):
        late_weighted(data, np.ones(4))


def test_dataset_validation():
    with pytest.raises(ShapeError):
        Dataset([1, 2], [1, 0, 1], np.zeros((3, 1)))
    with pytest.raises(ParameterError):
        Dataset([1, 2, 3], [1, 0, 1], np.zeros((3, 1)), a=[1, 2, 0])
    with pytest.raises(Exception):
        Dataset([1, 2, 3], [1, 1, 1], np.zeros((3, 1)))
    d = Dataset([1, 2, 3], [1, 0, 1], np.zeros(3))
    assert d.X.shape == (3, 1) and (d.n, d.n1, d.n0) == (3, 2, 1)


def _loglik_oracle(X, z):
    Xd = np.column_stack([np.ones(len(z)), X])

    def nll(b):
        eta = Xd @ b
        return np.sum(np.logaddexp(0, eta) - z * eta)

    def grad(b):
        return Xd.T @ (expit(Xd @ b) - z)

    return minimize(nll, np.zeros(Xd.shape[1]), jac=grad, method="BFGS",
                    options={"gtol": 1e-10, "maxiter": 1000}).x


def test_logistic_recovers_truth():
    rng = np.random.default_rng(11)
    n = 100_000
    X = rng.normal(size=(n, 3))
    truth = np.array([-0.3, 0.8, -0.5, 0.2])
    z = (rng.random(n) < expit(truth[0] + X @ truth[1:])).astype(float)
    coef = fit_logistic(X, z)
    assert np.max(np.abs(coef - truth)) <= 0.05
    assert np.max(np.abs(coef - _loglik_oracle(X, z))) <= 1e-5


def test_logistic_sign_flip(rng):
    X = rng.normal(size=(300, 2))
    z = (rng.random(300) < expit(0.4 + X @ [1.0, -1.0])).astype(float)
    assert np.allclose(fit_logistic(X, 1 - z), -fit_logistic(X, z), atol=1e-8)


def test_logistic_no_signal(rng):
    z = (rng.random(200) < 0.3).astype(float)
    X = np.zeros((200, 2))
    coef = fit_logistic(X, z)
    assert coef[0] == pytest.approx(logit(z.mean()), abs=1e-8)
    assert np.array_equal(coef[1:], [0.0, 0.0])


def test_logistic_separation():
    # tightly spaced separated data: even the ridge solution has a huge slope
    X = 1e-3 * np.arange(20.0)[:, None]
    z = (X[:, 0] >= 0.01).astype(float)
    with pytest.raises(SeparationError, match="ridge"):
        fit_logistic(X, z)


def test_logistic_separation_ridge_fallback():
    X = np.arange(20.0)[:, None]
    z = (X[:, 0] >= 10).astype(float)
    with pytest.warns(RuntimeWarning, match="separation"):
        coef = fit_logistic(X, z)
    assert np.linalg.norm(coef) <= 1e3
    assert np.all((coef[0] + X[:, 0] * coef[1] > 0) == (z == 1))


def test_hajek_constant_propensity():
    z = np.array([1, 1, 0, 0, 0.0])
    w = hajek_weights(z, np.full(5, 0.4))
    assert np.allclose(w, 1.0)


def test_hajek_two_strata():
    # stratum A: e = 0.2, units (t, c, c); stratum B: e = 0.5, units (t, t, c)
    z = np.array([1, 0, 0, 1, 1, 0.0])
    e = np.array([0.2, 0.2, 0.2, 0.5, 0.5, 0.5])
    w = hajek_weights(z, e)
    # treated raw weights 5, 2, 2 (sum 9) scaled to 3; controls 1.25, 1.25, 2 (sum 4.5) scaled to 3
    expect = np.array([5 / 3, 1.25 * 3 / 4.5, 1.25 * 3 / 4.5, 2 / 3, 2 / 3, 2 * 3 / 4.5])
    assert np.allclose(w, expect, atol=1e-14)


def test_hajek_clipping_warns():
    z = np.array([1, 1, 0, 0.0])
    with pytest.warns(RuntimeWarning, match="clipped"):
        w = hajek_weights(z, np.array([1e-9, 0.5, 0.5, 0.5]))
    assert np.all(np.isfinite(w))


def test_ipw_group_sums(rng):
    X = rng.normal(size=(150, 3))
    z = (rng.random(150) < expit(X[:, 0])).astype(float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w = ipw_hajek_weights(X, z)
    assert abs(w @ z - z.sum()) <= 1e-12 * z.sum()
    assert abs(w @ (1 - z) - (150 - z.sum())) <= 1e-12 * 150
    assert w.min() > 0
