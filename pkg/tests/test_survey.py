import numpy as np
import pytest

from hybrid_ei import io
from hybrid_ei.data import Dimensions, SurveyCounts
from hybrid_ei.estimands import estimand_names
from hybrid_ei.simgen import SimConfig, gen_jurisdiction
from hybrid_ei.survey import SurveyDesign, SurveyDesignError, parse_estimand, srs_design, survey_estimate

DIMS = Dimensions(("a", "b"), ("D", "Abstain"))


def unit(uid, d, abst, other=(0, 0)):
    return SurveyCounts(uid, [[d, abst], list(other)])


def test_identical_clusters_zero_se():
    sv = [unit(f"u{i}", 6, 4) for i in range(5)]
    design = SurveyDesign.single_stratum({s.unit_id: 1.0 for s in sv}, {s.unit_id: 0.5 for s in sv})
    s = survey_estimate(sv, design, "turnout_a", DIMS)
    assert s.point == 0.6 and s.lo == s.hi == 0.6


def test_two_cluster_hand_computation():
    dims = Dimensions(("a", "b"), ("D", "R", "Abstain"))
    sv = [SurveyCounts("x", [[4, 6, 0], [0, 0, 0]]), SurveyCounts("y", [[6, 4, 0], [0, 0, 0]])]
    design = SurveyDesign.single_stratum({"x": 1.0, "y": 1.0}, {"x": 1.0, "y": 1.0})
    s = survey_estimate(sv, design, "lambda_a_D", dims)
    assert np.isclose(s.point, 0.5)
    assert np.isclose((s.hi - s.lo) / 2 / 1.959963984540054, 0.1)


def test_single_cluster_stratum_rejected():
    sv = [unit("x", 1, 1), unit("y", 2, 1)]
    design = SurveyDesign({"x": "s1", "y": "s2"}, {"x": 1, "y": 1}, {"x": 1, "y": 1})
    with pytest.raises(SurveyDesignError, match="variance not estimable"):
        survey_estimate(sv, design, "turnout_a", DIMS)


def test_zero_denominator_missing():
    sv = [unit("x", 0, 0, (1, 1)), unit("y", 0, 0, (2, 1))]
    design = SurveyDesign.single_stratum({"x": 1, "y": 1}, {"x": 1, "y": 1})
    assert np.isnan(survey_estimate(sv, design, "turnout_a", DIMS).point)


def test_weight_rescaling_invariance():
    rng = np.random.default_rng(0)
    sv = [SurveyCounts(f"u{i}", rng.integers(0, 20, (2, 2))) for i in range(8)]
    w = {s.unit_id: float(rng.uniform(1, 5)) for s in sv}
    f = {s.unit_id: float(rng.uniform(0.1, 1)) for s in sv}
    strata = {s.unit_id: ("p" if i < 4 else "q") for i, s in enumerate(sv)}
    base = survey_estimate(sv, SurveyDesign(strata, w, f), "turnout_a", DIMS)
    scaled = survey_estimate(sv, SurveyDesign(strata, {u: 7.5 * x for u, x in w.items()}, f), "turnout_a", DIMS)
    assert np.isclose(base.point, scaled.point) and np.isclose(base.lo, scaled.lo)
    # one stratum rescaled alone keeps the single-stratum estimate
    one = SurveyDesign.single_stratum(w, f)
    a = survey_estimate(sv, one, "turnout_a", DIMS)
    b = survey_estimate(sv, SurveyDesign.single_stratum({u: 0.2 * x for u, x in w.items()}, f), "turnout_a", DIMS)
    assert np.isclose(a.point, b.point) and np.isclose(a.hi, b.hi)


def test_full_enumeration_equals_truth():
    d, t = gen_jurisdiction(SimConfig(n_precincts=20, seed=3))
    sv = [SurveyCounts(u, t.cells[i]) for i, u in enumerate(d.unit_ids)]
    totals = {x.unit_id: x.total for x in d.tables}
    design = srs_design(sv, {u: 1.0 for u in d.unit_ids}, totals)
    truth = np.concatenate([t.estimands.lambda_.ravel(), t.estimands.gamma, t.estimands.turnout])
    for name, v in zip(estimand_names(d.dims), truth):
        assert np.isclose(survey_estimate(sv, design, name, d.dims).point, v, rtol=1e-12, atol=0)


def test_parse_estimand():
    dims = Dimensions(("b", "w"), ("D", "R", "Abstain"))
    assert parse_estimand("lambda_w_R", dims) == ("lambda", 1, 1)
    assert parse_estimand("gamma_b", dims) == ("gamma", 0, None)
    with pytest.raises(ValueError):
        parse_estimand("lambda_x_D", dims)


def test_design_validation():
    with pytest.raises(SurveyDesignError):
        SurveyDesign({"a": "s"}, {"a": -1.0}, {"a": 0.5})
    with pytest.raises(SurveyDesignError):
        SurveyDesign({"a": "s"}, {"a": 1.0}, {"a": 1.5})
    with pytest.raises(SurveyDesignError):
        SurveyDesign({"a": "s"}, {"a": 1.0, "b": 1.0}, {"a": 0.5, "b": 0.5})


@pytest.mark.parametrize("suffix", [".csv", ".json"])
def test_design_roundtrip(tmp_path, suffix):
    design = SurveyDesign({"a": "det", "b": "rand"}, {"a": 1.0, "b": 3.7}, {"a": 1 / 16, "b": 0.1})
    io.write_design(design, tmp_path / f"d{suffix}")
    back = io.read_design(tmp_path / f"d{suffix}")
    assert back == design
