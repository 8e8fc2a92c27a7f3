import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfhazards.admm import FitConfig
from tfhazards.grid import TimeGrid, decompose_wait
from tfhazards.simulate import (SETTINGS, PiecewiseHazard, make_truth, run_study,
                                sample_event_time, sample_event_times, simulate_stats)


def test_zero_rate_never_fires():
    hz = PiecewiseHazard(TimeGrid([0, 1]), [0.0])
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_event_time(hz, rng) == (1.0, False)


def test_ln2_half_events():
    hz = PiecewiseHazard(TimeGrid([0, 1]), [np.log(2)])
    _, d = sample_event_times(hz, 10**6, np.random.default_rng(1))
    se = np.sqrt(0.25 / 10**6)
    assert abs(d.mean() - 0.5) <= 3 * se


def test_censored_mean():
    hz = PiecewiseHazard(TimeGrid([0, 1, 2]), [1.0, 1.0])
    t, _ = sample_event_times(hz, 10**6, np.random.default_rng(2))
    se = t.std() / np.sqrt(t.size)
    assert abs(t.mean() - (1 - np.exp(-2))) <= 3 * se


def test_piecewise_survival_law():
    hz = PiecewiseHazard(TimeGrid([0, 1, 1.5, 3]), [0.3, 2.0, 0.5])
    t, d = sample_event_times(hz, 400_000, np.random.default_rng(3))
    for x in (0.5, 1.2, 2.0, 2.9):
        emp = np.mean(t > x)
        exact = np.exp(-hz.cumulative(x))
        assert abs(emp - exact) <= 4 * np.sqrt(exact * (1 - exact) / t.size)
    assert np.all(t[~d] == 3.0) and np.all(t[d] < 3.0)


def test_invert_and_cumulative_roundtrip():
    hz = PiecewiseHazard(TimeGrid([0, 1, 2, 4]), [0.5, 0.0, 2.0])
    e = np.linspace(0.01, 4.4, 50)
    np.testing.assert_allclose(hz.cumulative(hz.invert(e)), e, atol=1e-12)


def test_piecewise_validation():
    with pytest.raises(ValueError):
        PiecewiseHazard(TimeGrid([0, 1]), [1.0, 2.0])
    with pytest.raises(ValueError):
        PiecewiseHazard(TimeGrid([0, 1]), [-1.0])


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_sampled_times_decompose_exactly(seed):
    grid = TimeGrid([0, 0.5, 1, 2])
    hz = PiecewiseHazard(grid, [1.0, 0.2, 3.0])
    t, d = sample_event_times(hz, 20, np.random.default_rng(seed))
    for ti, di in zip(t, d):
        tv, dv = decompose_wait(ti, bool(di), grid)
        assert tv.sum() == ti and dv.sum() == di


def test_truth_examples():
    s1 = make_truth(SETTINGS[1]).values
    sv = np.linalg.svd(s1, compute_uv=False)
    assert sv[1] < 1e-10 and s1.min() > 0
    s5 = make_truth(SETTINGS[5], np.random.default_rng(0)).values
    assert np.linalg.svd(s5, compute_uv=False)[-1] > 0
    s3 = make_truth(SETTINGS[3], np.random.default_rng(0)).values
    assert s3.min() >= 0 and s3.max() <= 0.64
    assert {s.n_obs for s in SETTINGS.values()} == {100, 500}
    assert all(s.m == 30 and s.p == 30 for s in SETTINGS.values())


def test_simulate_stats_counts():
    truth = np.full((3, 4), 0.5)
    stats = simulate_stats(truth, 50, np.random.default_rng(0))
    assert stats.n_records == 150
    assert stats.shape == (3, 4)
    # at most one unit of exposure per record in each unit cell, at most one event per record
    assert np.all(stats.t_sum <= 50 + 1e-9)
    assert np.all(stats.d_sum.sum(axis=1) <= 50)
    assert np.all(stats.t_sum[:, 0] >= stats.t_sum[:, -1])


def test_run_study_reproducible_and_parallel():
    cfg = FitConfig()
    a = run_study(1, reps=3, seed=4, cfg=cfg)
    b = run_study(1, reps=3, seed=4, cfg=cfg, n_jobs=2)
    assert a == b
    assert [r["rep"] for r in a] == [0, 1, 2]
    assert set(a[0]) >= {"setting", "rep", "mle_error", "tfh_error", "converged"}


def test_run_study_orderings_small():
    med = {}
    for s in (1, 4):
        rows = run_study(s, reps=8, seed=1)
        med[s] = (np.median([r["mle_error"] for r in rows]),
                  np.median([r["tfh_error"] for r in rows]))
    assert med[1][1] < med[1][0]
    assert med[4][0] < med[4][1]
