import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from symsweep.regressor import SymbolicRegressor


def _xy(seed=0, n=20):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    return X, X[:, 0] + X[:, 1]


def test_get_params_set_params_clone():
    est = SymbolicRegressor(operator_set="arithmetic", t_max=5.0)
    params = est.get_params()
    assert params["operator_set"] == "arithmetic"
    est.set_params(n_slots=4)
    assert est.n_slots == 4
    twin = clone(est)
    assert twin.get_params() == est.get_params()


def test_fit_predict_exact_sum():
    X, y = _xy()
    est = SymbolicRegressor(operator_set="arithmetic", n_slots=3, n_layers=2,
                            t_max=60, threads=2, random_state=0)
    est.fit(X, y)
    assert est.expression() == "x1 + x2"
    pred = est.predict(X)
    np.testing.assert_allclose(pred, y, atol=1e-12)
    assert est.score(X, y) == pytest.approx(1.0)


def test_predict_before_fit_raises():
    est = SymbolicRegressor()
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((3, 2)))


def test_predict_feature_count_checked():
    X, y = _xy()
    est = SymbolicRegressor(operator_set="arithmetic", n_slots=3, n_layers=1,
                            t_max=20, max_iters=5, threads=2).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(np.zeros((4, 3)))


def test_custom_feature_names():
    X, y = _xy(seed=1)
    est = SymbolicRegressor(operator_set="arithmetic", n_slots=3, n_layers=2,
                            t_max=30, threads=2,
                            feature_names=["u", "v"]).fit(X, y)
    assert set(est.expression().split(" + ")) == {"u", "v"}


def test_fit_validates_shapes():
    est = SymbolicRegressor()
    with pytest.raises(ValueError):
        est.fit(np.zeros((3, 2)), np.zeros(4))
