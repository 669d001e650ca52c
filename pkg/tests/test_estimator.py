import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from quasiboot.estimator import QuasiLogitRegressor
from quasiboot.glmm import fit_fixed
from quasiboot.model_core import ModelSpec, ObservationTable


@pytest.fixture
def data():
    rng = np.random.default_rng(3)
    n, k = 300, 10
    X = rng.normal(size=(n, 2))
    g = np.array([f"s{i}" for i in np.arange(n) % k])
    mu = 1 / (1 + np.exp(-(0.1 + X @ [0.6, -0.4] + rng.normal(0, 1.5, k)[np.arange(n) % k])))
    y = rng.beta(3 * mu, 3 * (1 - mu))
    return X, y, g


def test_params_and_clone():
    est = QuasiLogitRegressor(n_resamples=200, alpha=0.1, random_state=4)
    params = est.get_params()
    assert params["n_resamples"] == 200 and params["alpha"] == 0.1
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(alpha=0.2)
    assert twin.alpha == 0.2 and est.alpha == 0.1


def test_unfitted():
    with pytest.raises(NotFittedError):
        QuasiLogitRegressor().predict(np.zeros((2, 2)))


def test_fixed_fit_matches_core(data):
    X, y, _ = data
    est = QuasiLogitRegressor().fit(X, y)
    ref = fit_fixed(ObservationTable.from_arrays(y, X), ModelSpec.build(["x1", "x2"]))
    assert est.intercept_ == pytest.approx(ref.beta_hat[0])
    assert est.coef_ == pytest.approx(ref.beta_hat[1:])
    pred = est.predict(X)
    assert pred.shape == (X.shape[0],) and np.all((pred > 0) & (pred < 1))
    assert np.all(np.isnan(est.conf_int_))


def test_mixed_with_bootstrap(data):
    X, y, g = data
    est = QuasiLogitRegressor(n_resamples=100, random_state=1).fit(X, y, groups=g)
    assert est.variance_components_.shape == (1,)
    assert est.conf_int_.shape == (3, 2)
    assert np.all(est.conf_int_[:, 0] < est.conf_int_[:, 1])
    assert est.pvalues_.shape == (3,)
    assert est.variance_components_[0] > 0
    # known levels shift the prediction by their conditional mode
    assert not np.allclose(est.decision_function(X, g), est.decision_function(X))
    again = QuasiLogitRegressor(n_resamples=100, random_state=1).fit(X, y, groups=g)
    assert np.array_equal(again.conf_int_, est.conf_int_)


def test_rejects_out_of_range(data):
    X, y, _ = data
    with pytest.raises(ValueError):
        QuasiLogitRegressor().fit(X, y + 1.0)
