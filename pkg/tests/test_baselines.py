"""Mean-of-recent-history and vector autoregression forecasters."""

from __future__ import annotations

import numpy as np
import pytest

from flowcast.baselines import BaselineError, naive_predict, var_fit, var_predict


# ---------------------------------------------------------------------------
# naive forecaster

def test_naive_mean_of_window():
    assert naive_predict(np.array([3.0, 5.0, 7.0]), window_n=3) == pytest.approx(5.0)


def test_naive_window_one_is_persistence():
    assert naive_predict(np.array([3.0, 5.0, 7.0]), window_n=1) == 7.0


def test_naive_matches_loop_oracle_on_tensors():
    rng = np.random.default_rng(0)
    history = rng.normal(size=(20, 4, 4))
    got = naive_predict(history, window_n=12)
    want = np.zeros((4, 4))
    for t in range(8, 20):
        want += history[t]
    want /= 12.0
    assert np.max(np.abs(got - want)) < 1e-12


def test_naive_requires_enough_history():
    with pytest.raises(BaselineError, match="need 12"):
        naive_predict(np.zeros((5, 2)), window_n=12)
    with pytest.raises(BaselineError, match="window_n"):
        naive_predict(np.zeros((5, 2)), window_n=0)


# ---------------------------------------------------------------------------
# vector autoregression

def test_var_recovers_scalar_ar1():
    # y_t = 0.5 * y_{t-1}, no noise
    y = np.array([0.5**t for t in range(40)]).reshape(-1, 1) * 8.0
    model = var_fit(y, p=1)
    assert model.coef[0, 0, 0] == pytest.approx(0.5, abs=1e-6)
    assert model.intercept[0] == pytest.approx(0.0, abs=1e-6)
    assert var_predict(model, np.array([[4.0]]))[0] == pytest.approx(2.0, abs=1e-6)


def test_var_constant_series_predicts_constant():
    y = np.full((30, 2), 3.5)
    model = var_fit(y, p=2)
    assert np.allclose(var_predict(model, y[-2:]), [3.5, 3.5], atol=1e-6)


def test_var_recovers_cross_coupled_system():
    a = np.array([[0.5, 0.2], [-0.1, 0.3]])
    c = np.array([1.0, -0.5])
    rng = np.random.default_rng(1)
    y = np.zeros((60, 2))
    y[0] = rng.normal(size=2)
    for t in range(1, 60):
        y[t] = c + a @ y[t - 1]
    # keep the transient so the regression sees varied states
    model = var_fit(y[:40], p=1)
    assert np.max(np.abs(model.coef[0] - a)) < 1e-6
    assert np.max(np.abs(model.intercept - c)) < 1e-6
    pred = var_predict(model, y[40:41])
    assert np.max(np.abs(pred - y[41])) < 1e-6


def test_var_second_order_recovery():
    # two equal-modulus oscillatory modes with different angles keep the
    # lag regressors well-conditioned over the whole noiseless trajectory
    r, th1, th2, mix = 0.97, 0.6, 1.9, 0.8
    d1 = np.diag([2 * r * np.cos(th1), 2 * r * np.cos(th2)])
    d2 = np.diag([-r * r, -r * r])
    q = np.array([[np.cos(mix), -np.sin(mix)], [np.sin(mix), np.cos(mix)]])
    a1, a2 = q @ d1 @ q.T, q @ d2 @ q.T
    c = np.array([0.5, 0.2])
    rng = np.random.default_rng(2)
    y = np.zeros((80, 2))
    y[0], y[1] = rng.normal(size=2), rng.normal(size=2)
    for t in range(2, 80):
        y[t] = c + a1 @ y[t - 1] + a2 @ y[t - 2]
    model = var_fit(y, p=2)
    assert np.max(np.abs(model.coef[0] - a1)) < 1e-6
    assert np.max(np.abs(model.coef[1] - a2)) < 1e-6
    recent = y[-2:]  # oldest first
    want = c + a1 @ y[-1] + a2 @ y[-2]
    assert np.allclose(var_predict(model, recent), want, atol=1e-6)


def test_var_zero_coefficients_return_intercept():
    from flowcast.baselines import VarModel

    model = VarModel(p=2, coef=np.zeros((2, 3, 3)), intercept=np.array([1.0, 2.0, 3.0]), fitted=True)
    assert np.array_equal(var_predict(model, np.ones((2, 3))), [1.0, 2.0, 3.0])


def test_var_input_validation():
    with pytest.raises(BaselineError, match="2-D"):
        var_fit(np.zeros(10), p=1)
    with pytest.raises(BaselineError, match="lag order"):
        var_fit(np.zeros((30, 2)), p=0)
    with pytest.raises(BaselineError, match="need at least"):
        var_fit(np.zeros((4, 2)), p=2)


def test_var_predict_validation():
    model = var_fit(np.random.default_rng(3).normal(size=(30, 2)), p=2)
    with pytest.raises(BaselineError, match="shape"):
        var_predict(model, np.zeros((3, 2)))
    from flowcast.baselines import VarModel

    blank = VarModel(p=1, coef=np.zeros((1, 2, 2)), intercept=np.zeros(2), fitted=False)
    with pytest.raises(BaselineError, match="not fitted"):
        var_predict(blank, np.zeros((1, 2)))
