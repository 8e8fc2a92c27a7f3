import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfhazards.grid import (CellStats, DomainError, EventRecord, FilterConfig, TimeGrid,
                            accumulate, apply_filters, arrival_index, decompose_wait)

G3 = TimeGrid([0, 1, 2, 3])


def test_timegrid_validation():
    with pytest.raises(ValueError):
        TimeGrid([0])
    with pytest.raises(ValueError):
        TimeGrid([0, 2, 1])
    with pytest.raises(ValueError):
        TimeGrid([-1, 0, 1])
    g = TimeGrid.regular(0, 1800, 900)
    assert g.knots == (0.0, 900.0, 1800.0)
    assert g.n_intervals == 2


@pytest.mark.parametrize("t,d,tv,dv", [
    (2.5, True, (1, 1, 0.5), (0, 0, 1)),
    (3.0, False, (1, 1, 1), (0, 0, 0)),
    (0.5, True, (0.5, 0, 0), (1, 0, 0)),
])
def test_decompose_examples(t, d, tv, dv):
    t_vec, d_vec = decompose_wait(t, d, G3)
    np.testing.assert_array_equal(t_vec, tv)
    np.testing.assert_array_equal(d_vec, dv)


def test_decompose_knot_belongs_to_left_interval():
    _, d_vec = decompose_wait(2.0, True, G3)
    np.testing.assert_array_equal(d_vec, (0, 1, 0))


def test_decompose_beyond_domain():
    with pytest.raises(DomainError):
        decompose_wait(3.5, False, G3)


@given(st.floats(0, 3), st.booleans())
def test_decompose_sums(t, d):
    if d and t == 0:
        return
    t_vec, d_vec = decompose_wait(t, d, G3)
    assert t_vec.sum() == pytest.approx(t, abs=1e-12)
    assert d_vec.sum() == float(d)


def test_arrival_index_examples():
    g = TimeGrid([0, 900, 1800])
    assert arrival_index(900, g) == 1
    assert arrival_index(901, g) == 2
    with pytest.raises(DomainError):
        arrival_index(0, g)
    with pytest.raises(DomainError):
        arrival_index(1801, g)


def test_filter_examples():
    cfg = FilterConfig(min_wait=2, max_wait=300, day_start=0, day_end=86400)
    recs, rep = apply_filters([(100, 400, "abandoned")], cfg)
    assert recs == [EventRecord(100.0, 300.0, False)]
    assert rep["truncated"] == 1
    recs, rep = apply_filters([(100, 1, "abandoned")], cfg)
    assert recs == [] and rep["short_wait"] == 1
    swap = FilterConfig(min_wait=2, max_wait=300, day_start=0, day_end=86400, event_role="answer")
    recs, _ = apply_filters([(100, 50, "abandoned"), (100, 50, "answered")], swap)
    assert [r.event for r in recs] == [False, True]


def test_filter_boundaries_and_report():
    cfg = FilterConfig(min_wait=2, max_wait=300, day_start=1000, day_end=2000)
    raw = [(1000, 5, "answered"), (2000, 5, "answered"), (1500, 2, "abandoned"),
           (1500, 5, "hungup"), (1500, float("nan"), "answered")]
    recs, rep = apply_filters(raw, cfg)
    assert [r.arrival for r in recs] == [2000.0, 1500.0]
    assert rep == {"input": 5, "outside_day": 1, "retained": 2, "bad_outcome": 1,
                   "invalid": 1, "short_wait": 0, "truncated": 0}


@given(st.lists(st.tuples(st.floats(-100, 3000), st.floats(0, 1000),
                          st.sampled_from(["answered", "abandoned"])), max_size=30))
def test_filter_invariant(raw):
    cfg = FilterConfig(min_wait=2, max_wait=300, day_start=0, day_end=2000)
    recs, rep = apply_filters(raw, cfg)
    assert rep["retained"] == len(recs)
    for r in recs:
        assert 2 <= r.wait <= 300 and 0 < r.arrival <= 2000


def test_accumulate_examples():
    ag = TimeGrid([0, 10, 20])
    s = accumulate([EventRecord(5, 2.5, True)], ag, G3)
    np.testing.assert_array_equal(s.d_sum, [[0, 0, 1], [0, 0, 0]])
    np.testing.assert_array_equal(s.t_sum, [[1, 1, 0.5], [0, 0, 0]])
    empty = accumulate([], ag, G3)
    assert empty.n_records == 0 and not empty.d_sum.any() and not empty.t_sum.any()
    two = accumulate([EventRecord(5, 2.5, True)] * 2, ag, G3)
    np.testing.assert_array_equal(two.d_sum, 2 * s.d_sum)
    np.testing.assert_array_equal(two.t_sum, 2 * s.t_sum)


def test_accumulate_reports_bad_record():
    with pytest.raises(DomainError, match="record 1"):
        accumulate([EventRecord(5, 1, True), EventRecord(5, 9, False)], TimeGrid([0, 10]), G3)


records_st = st.lists(st.tuples(st.floats(0.01, 20), st.floats(0.01, 3), st.booleans()),
                      max_size=40)


@settings(max_examples=50)
@given(records_st, records_st)
def test_accumulate_additive(A, B):
    ag = TimeGrid([0, 10, 20])
    mk = lambda rs: [EventRecord(*r) for r in rs]
    whole = accumulate(mk(A + B), ag, G3)
    parts = accumulate(mk(A), ag, G3) + accumulate(mk(B), ag, G3)
    np.testing.assert_allclose(whole.t_sum, parts.t_sum, atol=1e-12)
    np.testing.assert_array_equal(whole.d_sum, parts.d_sum)
    assert whole.n_records == len(A) + len(B)
    # each record in exactly one row, exposure sums to its wait
    assert whole.t_sum.sum() == pytest.approx(sum(r[1] for r in A + B), abs=1e-9)
    assert whole.d_sum.sum() == sum(r[2] for r in A + B)


def test_accumulate_array_matches_records():
    rng = np.random.default_rng(0)
    arr = np.column_stack([rng.uniform(0.1, 20, 500), rng.uniform(0.1, 3, 500),
                           rng.integers(0, 2, 500)])
    ag = TimeGrid([0, 10, 20])
    a = accumulate(arr, ag, G3, chunk_size=7)
    b = accumulate([EventRecord(x, t, bool(d)) for x, t, d in arr], ag, G3)
    np.testing.assert_allclose(a.t_sum, b.t_sum, rtol=1e-13)
    np.testing.assert_array_equal(a.d_sum, b.d_sum)


def test_cellstats_invariants():
    with pytest.raises(ValueError):
        CellStats([[1.0]], [[0.0]])
    with pytest.raises(ValueError):
        CellStats([[0.5]], [[1.0]])
    with pytest.raises(ValueError):
        CellStats([[0.0]], [[-1.0]])
