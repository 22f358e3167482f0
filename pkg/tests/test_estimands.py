import numpy as np
import pytest

from hybrid_ei.data import Dimensions
from hybrid_ei.draws import DrawStore, draw_columns, pack_sigma, unpack_sigma
from hybrid_ei.estimands import (
    compute_estimands,
    correlation_blocks,
    estimand_names,
    estimands_from_totals,
    summarize,
    to_correlation,
)

DIMS = Dimensions(("b", "w", "h"), ("D", "R", "Abstain"))


def test_single_unit_arithmetic():
    t = np.array([[60, 30, 10], [5, 5, 0], [0, 0, 4]])
    e = compute_estimands(t, DIMS)
    assert np.isclose(e.lambda_[0, 0], 2 / 3)
    assert np.isclose(e.turnout[0], 0.9)


def test_gamma_shares():
    dims = Dimensions(("a", "b"), ("D", "Abstain"))
    t = np.array([[90, 10], [110, 5]])
    assert np.allclose(compute_estimands(t, dims).gamma, [0.45, 0.55])


def test_units_sum_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        N = rng.integers(0, 50, size=(7, 3, 3))
        a = compute_estimands(N, DIMS)
        b = compute_estimands(N.sum(axis=0), DIMS)
        assert np.allclose(a.lambda_, b.lambda_, equal_nan=True)
        assert np.allclose(a.gamma, b.gamma) and np.allclose(a.turnout, b.turnout)
        perm = compute_estimands(N[rng.permutation(7)], DIMS)
        assert np.array_equal(perm.lambda_, a.lambda_, equal_nan=True)
        assert np.allclose(a.lambda_.sum(axis=1), 1.0)
        assert np.isclose(a.gamma.sum(), 1.0)


def test_zero_denominator_is_missing():
    t = np.array([[0, 0, 5], [3, 1, 0], [0, 0, 0]])
    e = compute_estimands(t, DIMS)
    assert np.isnan(e.lambda_[0]).all() and np.isnan(e.turnout[2])
    assert e.gamma[0] == 0.0


def test_names_order():
    names = estimand_names(DIMS)
    assert names[:2] == ["lambda_b_D", "lambda_b_R"]
    assert names[6:9] == ["gamma_b", "gamma_w", "gamma_h"]
    assert names[-1] == "turnout_h"
    assert len(estimands_from_totals(np.ones((3, 3)))) == len(names)


def test_summarize_constant():
    s = summarize(np.full(50, 0.3))
    assert (s.point, s.lo, s.hi) == (0.3, 0.3, 0.3)


def test_summarize_linear_quantiles():
    s = summarize(np.arange(1, 101), level=0.9)
    assert np.isclose(s.lo, 5.95) and np.isclose(s.hi, 95.05)
    assert s.point == 50.5 and s.n_draws == 100


def test_summarize_excludes_missing():
    s = summarize([1.0, np.nan, 3.0, np.nan])
    assert s.n_excluded == 2 and s.n_draws == 2 and s.point == 2.0
    with pytest.raises(ValueError):
        summarize([])


def test_correlation_blocks_identity():
    blocks = correlation_blocks(np.tile(np.eye(6), (10, 1, 1)), DIMS)
    assert set(blocks) == {("b", "w"), ("b", "h"), ("w", "h")}
    for cells in blocks.values():
        assert len(cells) == 4
        assert all(s.point == 0 for s in cells.values())


def test_correlation_blocks_known():
    dims = Dimensions(("a", "b"), ("x", "y", "Abstain"))
    S = np.full((4, 4), 0.5) + 0.5 * np.eye(4)
    S = S * np.array([1, 4, 9, 16])[:, None] ** 0.5 * np.array([1, 4, 9, 16])[None, :] ** 0.5
    blocks = correlation_blocks(np.tile(S, (5, 1, 1)), dims)
    assert all(np.isclose(s.point, 0.5) for s in blocks[("a", "b")].values())


def test_correlation_matrix_properties():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(200, 6, 6))
    S = A @ np.swapaxes(A, 1, 2) + 1e-3 * np.eye(6)
    C = to_correlation(S)
    assert (np.abs(C) <= 1).all()
    assert (np.diagonal(C, axis1=1, axis2=2) == 1).all()


def test_sigma_packing_roundtrip():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(5, 4, 4))
    S = A @ np.swapaxes(A, 1, 2)
    assert np.array_equal(unpack_sigma(pack_sigma(S), 4), S)


def test_drawstore_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    n = 25
    vals = rng.normal(size=(n, len(draw_columns(DIMS))))
    vals[3, 0] = np.nan
    store = DrawStore(DIMS, vals, np.zeros(n), np.arange(n), np.array(["0"] * n, dtype=object))
    store.write_csv(tmp_path / "d.csv")
    back = DrawStore.read_csv(tmp_path / "d.csv")
    assert back.equals(store)
    assert back.columns[:2] == ["lambda_b_D", "lambda_b_R"]
    assert "sigma_b_D__b_R" in back.columns
