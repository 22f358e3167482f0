"""
The survey on its own
=====================

The design-based estimator ignores the ecological model. Each sampled
precinct is a cluster, weighted by the inverse of its selection
probability, and the interval comes from the spread of the linearized
cluster totals. Here we check its behaviour over repeated polls of the
same jurisdiction, then confirm that a census returns the truth.
"""

import numpy as np

from hybrid_ei.data import SurveyCounts
from hybrid_ei.estimands import compute_estimands
from hybrid_ei.simgen import (
    SimConfig,
    draw_survey,
    gen_jurisdiction,
    inclusion_probabilities,
    scheme_weights,
    select_precincts,
)
from hybrid_ei.survey import srs_design, survey_estimate

d, truth = gen_jurisdiction(SimConfig(n_precincts=150, seed=5))
true = compute_estimands(truth.cells, d.dims).lambda_[2, 0]
totals = {t.unit_id: t.total for t in d.tables}
print(f"true share of Hispanic voters choosing D: {true:.4f}")

for scheme in (1, 2, 3):
    pi = dict(zip(d.unit_ids, inclusion_probabilities(scheme_weights(d, scheme), 30)))
    hits, lengths = 0, []
    for rep in range(300):
        S = select_precincts(d, scheme, 30, seed=(scheme, rep, 0))
        poll = draw_survey(d, truth, S, 0.25, seed=(scheme, rep, 1))
        est = survey_estimate(poll, srs_design(poll, pi, totals), "lambda_h_D", d.dims)
        hits += est.lo <= true <= est.hi
        lengths.append(est.hi - est.lo)
    print(f"scheme {scheme}: 95% interval covers the truth in {hits / 300:.1%} of 300 polls, "
          f"mean length {np.mean(lengths):.3f}")

# every precinct, everyone interviewed: the ratio estimator is the population ratio
census = [SurveyCounts(u, truth.cells[i]) for i, u in enumerate(d.unit_ids)]
design = srs_design(census, {u: 1.0 for u in d.unit_ids}, totals)
print(f"census estimate: {survey_estimate(census, design, 'lambda_h_D', d.dims).point:.4f}")
