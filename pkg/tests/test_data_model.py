from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from threshsplit.data import (
    Dataset,
    RasterGrid,
    empirical_quantile,
    load_csv_dataset,
    load_raster_grid,
    make_eval_window,
)
from threshsplit.errors import EmptyDataError, ParseError, SchemaError, ShapeError, SizeError

COLS = {"y": "y", "x": ["x1"], "q": "q", "s": "s"}


def _write(path, text):
    path.write_text(text)
    return path


def test_load_three_rows(tmp_path):
    p = _write(tmp_path / "d.csv", "y,q,s,x1\n1,0.1,1,5\n2,0.2,2,6\n3,0.3,3,7\n")
    data = load_csv_dataset(p, COLS)
    assert data.n == 3 and data.d == 1
    np.testing.assert_array_equal(data.X[:, 0], [5, 6, 7])
    np.testing.assert_array_equal(data.s, [1, 2, 3])


def test_standardize_uses_sample_sd(tmp_path):
    p = _write(tmp_path / "d.csv", "y,q,s,x1\n1,0.1,1,5\n2,0.2,2,6\n3,0.6,3,7\n")
    data = load_csv_dataset(p, COLS, standardize=True)
    # sample sd of (1, 2, 3) with divisor n - 1 is exactly 1
    np.testing.assert_allclose(data.s, [-1.0, 0.0, 1.0], atol=1e-12)
    assert data.norm_meta["s"] == pytest.approx((2.0, 1.0))
    for col in (data.q, data.s):
        assert abs(col.mean()) < 1e-10
        assert abs(col.std(ddof=1) - 1.0) < 1e-10


def test_standardize_hand_value():
    s = np.array([1.0, 2.0, 3.0])
    d = Dataset(np.zeros(3), np.ones(3), s[::-1].copy(), s)
    # hand value (s - mean) / sd with divisor n - 1 is (-1, 0, 1);
    # with the population divisor it would be (-1.2247, 0, 1.2247)
    np.testing.assert_allclose(d.standardized().s, [-1.0, 0.0, 1.0], atol=1e-12)
    pop = (s - s.mean()) / s.std(ddof=0)
    np.testing.assert_allclose(pop, [-1.2247449, 0.0, 1.2247449], atol=1e-6)


def test_missing_column(tmp_path):
    p = _write(tmp_path / "d.csv", "y,q,s,x1\n1,2,3,4\n")
    with pytest.raises(SchemaError):
        load_csv_dataset(p, {"y": "y", "x": ["z"], "q": "q", "s": "s"})


def test_parse_error_reports_row(tmp_path):
    p = _write(tmp_path / "d.csv", "y,q,s,x1\n1,2,3,4\n1,abc,3,4\n")
    with pytest.raises(ParseError) as exc:
        load_csv_dataset(p, COLS)
    assert exc.value.row == 2


def test_empty_file(tmp_path):
    p = _write(tmp_path / "d.csv", "y,q,s,x1\n")
    with pytest.raises(EmptyDataError):
        load_csv_dataset(p, COLS)


def test_dataset_rejects_bad_columns():
    with pytest.raises(ShapeError):
        Dataset(np.zeros(3), np.ones(2), np.zeros(3), np.zeros(3))
    with pytest.raises(ParseError):
        Dataset(np.array([0.0, np.nan]), np.ones(2), np.zeros(2), np.zeros(2))
    with pytest.raises(EmptyDataError):
        Dataset(np.zeros(0), np.ones(0), np.zeros(0), np.zeros(0))


def test_dataset_is_read_only():
    d = Dataset(np.zeros(3), np.ones(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        d.y[0] = 1.0


def test_window_full_coverage():
    s = np.array([3.0, -1.0, 2.0, 7.5])
    d = Dataset(np.zeros(4), np.ones(4), np.zeros(4), s)
    w = make_eval_window(d, 1.0, 10)
    assert (w.s0_lo, w.s0_hi) == (-1.0, 7.5)
    assert w.contains(w.grid).all()


def test_window_linear_quantiles():
    s = np.arange(1.0, 101.0)
    d = Dataset(np.zeros(100), np.ones(100), np.zeros(100), s)
    w = make_eval_window(d, 0.7, 100)
    # position (n - 1) p = 14.85 and 84.15 between order statistics
    assert w.s0_lo == pytest.approx(15.85)
    assert w.s0_hi == pytest.approx(85.15)
    assert abs(w.s0_lo - 15.5) <= 1 and abs(w.s0_hi - 85.5) <= 1
    assert np.all(np.diff(w.grid) > 0)


def test_window_observed_mode():
    s = np.linspace(0, 1, 50)
    d = Dataset(np.zeros(50), np.ones(50), np.zeros(50), s)
    w = make_eval_window(d, 0.7, None, mode="observed")
    assert set(w.grid) <= set(s)
    assert w.contains(w.grid).all()
    with pytest.raises(SizeError):
        make_eval_window(d, 0.7, 51, mode="observed")


def test_raster_coordinates(tmp_path):
    p = _write(tmp_path / "r.csv", "1,2,3\n4,5,6\n")
    r = load_raster_grid(p)
    np.testing.assert_allclose(r.q_coords, [0.5, 1.0])
    np.testing.assert_allclose(r.s_coords, [1 / 3, 2 / 3, 1.0])
    flat = r.flatten()
    assert flat.n == 6 and flat.d == 1
    np.testing.assert_array_equal(flat.X, 1.0)


def test_raster_full_scale_size():
    r = RasterGrid(np.zeros((240, 360)))
    assert r.flatten().n == 86400


def test_raster_single_cell():
    f = RasterGrid(np.array([[7.0]])).flatten()
    assert (f.n, f.q[0], f.s[0], f.y[0]) == (1, 1.0, 1.0, 7.0)


def test_raster_ragged(tmp_path):
    p = _write(tmp_path / "r.csv", "1,2,3\n4,5\n")
    with pytest.raises(ShapeError):
        load_raster_grid(p)


@given(arrays(np.float64, (4, 5), elements=st.floats(-1e3, 1e3)), st.booleans())
def test_raster_flatten_preserves_values(values, flip):
    r = RasterGrid(values, origin_flip=flip)
    f = r.flatten()
    assert np.all(np.diff(r.q_coords[::-1] if flip else r.q_coords) > 0)
    for row in range(4):
        for col in range(5):
            k = np.flatnonzero((f.q == r.q_coords[row]) & (f.s == r.s_coords[col]))
            assert k.size == 1 and f.y[k[0]] == values[row, col]


@given(arrays(np.float64, st.integers(3, 30), elements=st.floats(-1e6, 1e6, allow_subnormal=False), unique=True))
def test_csv_round_trip(tmp_path_factory, v):
    d = Dataset(v, np.column_stack([np.ones(v.size), v[::-1]]), v * 2, -v, ("const", "x"))
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    d.to_csv(path)
    back = load_csv_dataset(path, {"y": "y", "x": ["const", "x"], "q": "q", "s": "s"})
    for a, b in ((d.y, back.y), (d.X, back.X), (d.q, back.q), (d.s, back.s)):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@given(arrays(np.float64, st.integers(3, 40), elements=st.floats(-100, 100), unique=True))
def test_standardize_idempotent(v):
    d = Dataset(np.zeros(v.size), np.ones(v.size), v, v[::-1].copy())
    once = d.standardized()
    twice = once.standardized()
    np.testing.assert_allclose(once.q, twice.q, atol=1e-12)
    np.testing.assert_allclose(once.s, twice.s, atol=1e-12)
    # composed metadata still maps back to the raw scale
    m, sd = twice.norm_meta["q"]
    np.testing.assert_allclose(twice.q * sd + m, v, atol=1e-8 * max(1.0, np.abs(v).max()))


def test_empirical_quantile_matches_numpy_linear():
    a = np.array([5.0, 1.0, 3.0, 2.0])
    assert empirical_quantile(a, 0.5) == pytest.approx(2.5)
