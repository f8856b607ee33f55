import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import FunctionTransformer

from afalora.estimator import AdapterRegressor
from afalora.training import UnmergeableError


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 5))
    W = rng.standard_normal((3, 5))
    return X, X @ W.T + 0.3 * np.abs(X[:, :3])


def test_params_round_trip():
    est = AdapterRegressor(rank=2, placement="a-sigma-b", steps=10)
    params = est.get_params()
    assert params["rank"] == 2 and params["learning_rate"] == 3e-3
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(activation="gelu")
    assert est.activation == "gelu"


def test_fit_predict(data):
    X, y = data
    est = AdapterRegressor(rank=2, steps=300, learning_rate=3e-2, random_state=1).fit(X, y)
    assert est.predict(X).shape == y.shape
    assert est.loss_curve_[-1] < est.loss_curve_[0]
    assert est.n_features_in_ == 5
    assert est.score(X, y) > 0.5


def test_single_output(data):
    X, y = data
    est = AdapterRegressor(rank=1, steps=50).fit(X, y[:, 0])
    assert est.predict(X).shape == (200,)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        AdapterRegressor().predict(np.ones((2, 3)))


def test_feature_count_checked(data):
    X, y = data
    est = AdapterRegressor(rank=2, steps=5).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X[:, :4])


def test_merge_and_refusal(data):
    X, y = data
    est = AdapterRegressor(rank=2, steps=40, placement="a-sigma-b").fit(X, y)
    (W, b), = est.merge()
    np.testing.assert_allclose(X @ W.T, est.predict(X), atol=1e-12)
    stuck = AdapterRegressor(rank=2, steps=40, placement="a-sigma-b", schedule="constant",
                             constant_beta=0.5).fit(X, y)
    with pytest.raises(UnmergeableError):
        stuck.merge()
    assert stuck.final_beta_ == 0.5


def test_full_mode_and_base_layers(data):
    X, y = data
    base = [(np.zeros((3, 5)), np.zeros(3))]
    est = AdapterRegressor(base_layers=base, mode="full", steps=200, learning_rate=3e-2).fit(X, y)
    assert est.eval_loss(X, y) < np.mean(y ** 2)


def test_base_shape_mismatch(data):
    X, y = data
    with pytest.raises(ValueError, match="features"):
        AdapterRegressor(base_layers=[(np.zeros((3, 4)), None)], steps=1).fit(X, y)


def test_bad_options(data):
    X, y = data
    with pytest.raises(ValueError):
        AdapterRegressor(mode="partial", steps=1).fit(X, y)
    with pytest.raises(ValueError):
        AdapterRegressor(schedule="cosine", steps=1).fit(X, y)


def test_random_state_reproducible(data):
    X, y = data
    a = AdapterRegressor(rank=2, steps=30, random_state=5).fit(X, y).predict(X)
    b = AdapterRegressor(rank=2, steps=30, random_state=5).fit(X, y).predict(X)
    assert a.tobytes() == b.tobytes()
    rs = np.random.RandomState(0)
    AdapterRegressor(rank=2, steps=5, random_state=rs).fit(X, y)


def test_pipeline(data):
    X, y = data
    pipe = make_pipeline(FunctionTransformer(lambda z: 0.5 * z), AdapterRegressor(rank=2, steps=20))
    assert pipe.fit(X, y).predict(X).shape == y.shape


def test_eval_set_recorded(data):
    X, y = data
    est = AdapterRegressor(rank=2, steps=20).fit(X[:150], y[:150], eval_set=(X[150:], y[150:]))
    assert est.report_.final_eval_loss == pytest.approx(est.eval_loss(X[150:], y[150:]), abs=1e-9)
