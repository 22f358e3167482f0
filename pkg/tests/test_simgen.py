import numpy as np
import pytest
from scipy.special import expit

from hybrid_ei.data import Dataset, EcologicalTable, validate_dataset
from hybrid_ei.logit import to_theta
from hybrid_ei.simgen import (
    SIM_DIMS,
    SimConfig,
    draw_survey,
    gen_jurisdiction,
    herfindahl_weight,
    inclusion_probabilities,
    round_shares,
    scheme_weights,
    select_precincts,
)


def test_generated_data_valid_and_consistent():
    d, t = gen_jurisdiction(SimConfig(n_precincts=40, seed=1))
    assert validate_dataset(d).ok
    rows, cols, _ = d.arrays()
    assert np.array_equal(t.cells.sum(axis=2), rows) and np.array_equal(t.cells.sum(axis=1), cols)
    assert ((400 <= rows.sum(1)) & (rows.sum(1) <= 1200)).all()


def test_generation_reproducible():
    a = gen_jurisdiction(SimConfig(n_precincts=10, seed=4))[1].cells
    b = gen_jurisdiction(SimConfig(n_precincts=10, seed=4))[1].cells
    assert np.array_equal(a, b)


def white_rep_share(cfg, x_h):
    th = to_theta(cfg.unit_mean(x_h), 3)[SIM_DIMS.races.index("w")]
    return th[1] / (th[0] + th[1])


def test_bias_none_no_slope():
    d, t = gen_jurisdiction(SimConfig(n_precincts=500, seed=2))
    rows, _, _ = d.arrays()
    x = rows[:, 2] / rows.sum(1)
    w = t.omega[:, 3] - t.omega[:, 2]  # white R-vs-D log ratio
    slope = np.polyfit(x, w, 1)[0]
    assert abs(slope) < 0.15


@pytest.mark.parametrize("level,anchors", [("moderate", (0.70, 0.55)), ("severe", (0.90, 0.30))])
def test_bias_anchors(level, anchors):
    cfg = SimConfig(bias=level)
    assert np.isclose(white_rep_share(cfg, 0.2), anchors[0], atol=1e-12)
    assert np.isclose(white_rep_share(cfg, 0.8), anchors[1], atol=1e-12)
    # the white D/R midpoint is held, so the Abstain share hardly moves
    mu = cfg.mu_true
    for x in (0.2, 0.8):
        m = cfg.unit_mean(x)
        assert np.isclose(m[2] + m[3], mu[2] + mu[3])


def test_bias_in_generated_data():
    cfg = SimConfig.for_regime("less_integrated", "severe", n_precincts=600, seed=3)
    d, t = gen_jurisdiction(cfg)
    rows, _, _ = d.arrays()
    x = rows[:, 2] / rows.sum(1)
    share = expit(t.omega[:, 3] - t.omega[:, 2])
    lo, hi = share[(x > 0.1) & (x < 0.3)], share[(x > 0.7) & (x < 0.9)]
    assert lo.size > 20 and hi.size > 20
    assert lo.mean() > hi.mean() + 0.3


def test_herfindahl_examples():
    assert herfindahl_weight([10, 0, 0]) == 1.0
    assert np.isclose(herfindahl_weight([1, 1, 1]), 3.0)
    assert np.isclose(herfindahl_weight([2, 1, 1]), 1 / 0.375)


def pair_dataset():
    mixed = EcologicalTable("mixed", (10, 10, 10), (10, 10, 10))
    flat = EcologicalTable("flat", (30, 0, 0), (10, 10, 10))
    return Dataset(SIM_DIMS, (mixed, flat))


@pytest.mark.parametrize("scheme,favoured", [(1, "mixed"), (3, "flat")])
def test_scheme_selection_probability(scheme, favoured):
    d = pair_dataset()
    pi = inclusion_probabilities(scheme_weights(d, scheme), 1)
    assert np.isclose(pi[d.unit_ids.index(favoured)], 81 / 82)
    hits = sum(select_precincts(d, scheme, 1, s) == (favoured,) for s in range(20_000))
    se = np.sqrt(81 / 82 * (1 / 82) / 20_000)
    assert abs(hits / 20_000 - 81 / 82) < 4 * se


def test_uniform_all_precincts():
    d, _ = gen_jurisdiction(SimConfig(n_precincts=15, seed=0))
    assert select_precincts(d, "uniform", 15, 0) == tuple(d.unit_ids)
    with pytest.raises(ValueError):
        select_precincts(d, "uniform", 16, 0)


def test_selection_matches_inclusion_probabilities():
    d, _ = gen_jurisdiction(SimConfig(n_precincts=12, race_mix=(0.3, 0.3, 0.3), seed=5))
    pi = inclusion_probabilities(scheme_weights(d, 1), 4)
    assert np.isclose(pi.sum(), 4) and (pi <= 1).all()
    counts = np.zeros(12)
    for s in range(5000):
        S = select_precincts(d, 1, 4, s)
        assert len(S) == 4
        counts[[d.unit_ids.index(u) for u in S]] += 1
    se = np.sqrt(pi * (1 - pi) / 5000) + 1e-9
    assert (np.abs(counts / 5000 - pi) < 4.5 * se + 1e-12).all()


def test_scheme_weights_permutation_equivariant():
    d, _ = gen_jurisdiction(SimConfig(n_precincts=10, seed=6))
    perm = np.random.default_rng(0).permutation(10)
    dp = Dataset(d.dims, tuple(d.tables[i] for i in perm))
    for s in (1, 2, 3, "herfindahl", "uniform"):
        assert np.allclose(scheme_weights(dp, s), scheme_weights(d, s)[perm])


def test_survey_census():
    d, t = gen_jurisdiction(SimConfig(n_precincts=5, seed=7))
    sv = draw_survey(d, t, d.unit_ids, 1.0, 0)
    assert all(np.array_equal(s.k, t.cells[i]) for i, s in enumerate(sv))


def test_survey_hypergeometric_mean_and_bounds():
    d, t = gen_jurisdiction(SimConfig(n_precincts=1, precinct_size=(400, 400), seed=8))
    f = 0.05
    ks = np.array([draw_survey(d, t, d.unit_ids, f, s)[0].k for s in range(10_000)])
    assert (ks.sum(axis=2) <= t.cells[0].sum(axis=1)).all()
    n = 20  # round(0.05 * 400)
    assert (ks.sum(axis=(1, 2)) == n).all()
    want = n * t.cells[0] / 400
    se = ks.std(axis=0) / np.sqrt(len(ks)) + 1e-12
    assert (np.abs(ks.mean(axis=0) - want) < 3.5 * se + 1e-9).all()


def test_round_shares():
    x = round_shares([0.333, 0.333, 0.334], 10)
    assert x.sum() == 10 and (x >= 3).all()
