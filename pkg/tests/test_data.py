import numpy as np
import pytest

from hybrid_ei import io
from hybrid_ei.data import (
    AggregationMap,
    DataError,
    Dataset,
    Dimensions,
    EcologicalTable,
    SurveyCounts,
    aggregate_to_locations,
    validate_dataset,
)

DIMS = Dimensions(("b", "w", "h"), ("D", "R", "Abstain"))


def table(uid, rows, cols):
    return EcologicalTable(uid, rows, cols)


def test_dimensions_invariants():
    assert DIMS.R == 3 and DIMS.C == 3 and DIMS.dim == 6
    assert DIMS.coordinate_labels() == ["b_D", "b_R", "w_D", "w_R", "h_D", "h_R"]
    with pytest.raises(DataError):
        Dimensions(("b",), ("D", "Abstain"))
    with pytest.raises(DataError):
        Dimensions(("b", "b"), ("D", "Abstain"))
    with pytest.raises(DataError):
        Dimensions(("b", "w"), ("Abstain", "D"))
    with pytest.raises(DataError):
        Dimensions(("b", "w"), ("D", "R"))
    assert Dimensions.from_labels(["b", "w"], ["Abstain", "D"]).choices == ("D", "Abstain")


def test_validate_passes_consistent_table():
    d = Dataset(DIMS, (table("p1", (60, 30, 10), (50, 40, 10)),))
    assert validate_dataset(d).ok


def test_validate_margin_mismatch():
    d = Dataset(DIMS, (table("p1", (60, 30, 10), (50, 39, 10)),))
    rep = validate_dataset(d)
    assert not rep and any("margin mismatch" in v for v in rep.violations)
    with pytest.raises(DataError):
        rep.raise_if_failed()


def test_validate_survey_exceeds_row_total():
    k = np.zeros((3, 3), int)
    k[0] = (40, 20, 1)  # 61 > N_b = 60
    d = Dataset(DIMS, (table("p1", (60, 30, 10), (50, 40, 10)),), (SurveyCounts("p1", k),))
    assert any("survey exceeds row total" in v for v in validate_dataset(d).violations)


def test_validate_unknown_and_duplicate_units():
    t = table("p1", (1, 1, 1), (1, 1, 1))
    d = Dataset(DIMS, (t, t), (SurveyCounts("zz", np.zeros((3, 3), int)),))
    v = validate_dataset(d).violations
    assert any("duplicate unit_id" in x for x in v)
    assert any("unknown unit_id" in x for x in v)


def test_validate_negative_count():
    d = Dataset(DIMS, (table("p1", (-1, 2, 1), (1, 1, 0)),))
    assert any("negative" in v for v in validate_dataset(d).violations)


def test_aggregate_two_precincts_one_location():
    d = Dataset(DIMS, (table("a", (10, 20, 5), (15, 15, 5)), table("b", (30, 10, 5), (20, 20, 5))))
    out = aggregate_to_locations(d, AggregationMap({"a": "L", "b": "L"}), scope="all")
    assert out.n_units == 1
    assert out.tables[0].row_totals.tolist() == [40, 30, 10]
    assert out.tables[0].col_totals.tolist() == [35, 35, 10]


def test_aggregate_identity_map_is_noop():
    d = Dataset(DIMS, (table("a", (10, 20, 5), (15, 15, 5)), table("b", (30, 10, 5), (20, 20, 5))))
    out = aggregate_to_locations(d, AggregationMap.identity(d.unit_ids), scope="all")
    assert out.unit_ids == d.unit_ids
    for x, y in zip(out.tables, d.tables):
        assert np.array_equal(x.row_totals, y.row_totals) and np.array_equal(x.col_totals, y.col_totals)


def test_aggregate_in_sample_only_conserves_totals():
    rng = np.random.default_rng(5)
    tabs = []
    for u in "abc":
        rows = rng.integers(0, 30, 3)
        cols = rng.multinomial(rows.sum(), [0.3, 0.3, 0.4])
        tabs.append(table(u, rows, cols))
    k = np.zeros((3, 3), int)
    k[0, 0] = min(1, tabs[0].row_totals[0])
    d = Dataset(DIMS, tuple(tabs), (SurveyCounts("a", k),))
    m = AggregationMap({"a": "L1", "b": "L1", "c": "L2"})
    out = aggregate_to_locations(d, m, scope="in_sample_only")
    assert out.unit_ids == ["L1", "c"]
    before, after = d.arrays(), out.arrays()
    assert before[0].sum() == after[0].sum()
    assert np.array_equal(before[0].sum(0), after[0].sum(0))
    assert out.in_sample == {"L1"}
    assert validate_dataset(out).ok


def test_aggregate_errors():
    d = Dataset(DIMS, (table("a", (1, 1, 1), (1, 1, 1)),))
    with pytest.raises(DataError):
        aggregate_to_locations(d, AggregationMap({"a": "L", "x": "L"}))
    with pytest.raises(DataError):
        aggregate_to_locations(d, AggregationMap({}))


def test_drop_empty_units(caplog):
    d = Dataset(DIMS, (table("a", (1, 1, 1), (1, 1, 1)), table("z", (0, 0, 0), (0, 0, 0))))
    out = d.drop_empty_units()
    assert out.unit_ids == ["a"]
    assert "zero total population" in caplog.text


# --- CSV round trips -------------------------------------------------------


def test_ecological_roundtrip(tmp_path):
    d = Dataset(DIMS, (table("p1", (60, 30, 10), (50, 40, 10)), table("p2", (0, 5, 7), (3, 3, 6))))
    io.write_ecological(d, tmp_path / "e.csv")
    back = io.read_ecological(tmp_path / "e.csv")
    assert back.dims == DIMS
    assert np.array_equal(back.arrays()[0], d.arrays()[0]) and np.array_equal(back.arrays()[1], d.arrays()[1])
    io.write_ecological(back, tmp_path / "e2.csv")
    assert (tmp_path / "e.csv").read_bytes() == (tmp_path / "e2.csv").read_bytes()


def test_ecological_abstain_reordered_and_derived(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("unit_id,b,w,Abstain,D,R\nx,3,2,1,2,2\n")
    d = io.read_ecological(p, races=["b", "w"])
    assert d.dims.choices == ("D", "R", "Abstain")
    assert d.tables[0].col_totals.tolist() == [2, 2, 1]
    p.write_text("unit_id,b,w,D,R\nx,3,2,2,2\n")
    d = io.read_ecological(p, races=["b", "w"])
    assert d.tables[0].col_totals.tolist() == [2, 2, 1]
    with pytest.raises(DataError):
        io.read_ecological(p)  # no Abstain column and no race labels


def test_survey_and_truth_roundtrip(tmp_path):
    k = np.arange(9).reshape(3, 3)
    sv = [SurveyCounts("p1", k), SurveyCounts("p2", k[::-1])]
    io.write_surveys(sv, DIMS, tmp_path / "s.csv")
    back = io.read_surveys(tmp_path / "s.csv", DIMS)
    assert [s.unit_id for s in back] == ["p1", "p2"]
    assert all(np.array_equal(a.k, b.k) for a, b in zip(sv, back))


def test_aggregation_roundtrip(tmp_path):
    m = AggregationMap({"a": "L", "b": "L", "c": "M"})
    io.write_aggregation(m, tmp_path / "m.csv")
    assert io.read_aggregation(tmp_path / "m.csv").entries == m.entries
