import numpy as np
import pytest
from sklearn.base import clone

from conftest import synthetic_calls
from tfhazards.admm import FitConfig, fit
from tfhazards.estimator import SmoothTwoWayHazard, TwoWayHazardMLE
from tfhazards.grid import FilterConfig, TimeGrid, accumulate, apply_filters


@pytest.fixture(scope="module")
def data():
    a, w, o = synthetic_calls(15000, seed=3)
    recs, _ = apply_filters(zip(a, w, o), FilterConfig())
    X = np.array([(r.arrival, r.wait) for r in recs])
    y = np.array([r.event for r in recs], dtype=int)
    return X, y


def test_params_roundtrip():
    est = SmoothTwoWayHazard(rank=2, rho0=0.5)
    assert est.get_params()["rank"] == 2
    c = clone(est)
    assert c.get_params() == est.get_params()
    est.set_params(lam=[(1.0, 1.0), (1.0, 1.0)])
    assert est.lam == [(1.0, 1.0), (1.0, 1.0)]


def test_mle_estimator_matches_functions(data):
    X, y = data
    est = TwoWayHazardMLE().fit(X, y)
    assert est.hazard_.shape == (48, 299)
    ag, wg = TimeGrid(est.arrival_grid_.knots), TimeGrid(est.wait_grid_.knots)
    stats = accumulate(np.column_stack([X, y]), ag, wg)
    np.testing.assert_array_equal(est.stats_.d_sum, stats.d_sum)
    pred = est.predict(np.array([[28800 + 450.0, 2.5]]))
    assert pred[0] == est.hazard_[0, 1] or (np.isnan(pred[0]) and np.isnan(est.hazard_[0, 1]))


def test_smooth_estimator(data):
    X, y = data
    est = SmoothTwoWayHazard().fit(X, y)
    assert est.converged_
    assert est.time_of_day_.mean() == pytest.approx(1, abs=1e-8)
    assert np.all(np.isfinite(est.hazard_)) and np.all(est.hazard_ >= 0)
    ref = fit(est.stats_, FitConfig())
    np.testing.assert_array_equal(est.hazard_, ref.surface)
    p = est.predict(X[:10])
    assert p.shape == (10,) and np.all(p >= 0)
    assert np.isfinite(est.score(X, y))


def test_input_validation(data):
    X, y = data
    with pytest.raises(ValueError):
        TwoWayHazardMLE().fit(X[:, :1], y)
    with pytest.raises(ValueError):
        TwoWayHazardMLE().fit(X, y[:-1])
    with pytest.raises(ValueError):
        TwoWayHazardMLE().fit(X, y * 2)
    with pytest.raises(ValueError):
        SmoothTwoWayHazard().fit_stats(accumulate(np.zeros((0, 3)), TimeGrid([0, 1, 2, 3]),
                                                  TimeGrid([0, 1, 2, 3])))


def test_custom_grids(data):
    X, y = data
    est = SmoothTwoWayHazard(arrival_knots=np.arange(28800, 72001, 3600.0),
                             wait_knots=np.arange(0, 301, 10.0)).fit(X, y)
    assert est.hazard_.shape == (12, 30)
