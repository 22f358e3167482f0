"""
The count update against brute-force enumeration
=================================================

Given the row and column totals of a small table, the sampler moves
between tables with those margins by adding and removing counts on 2 x 2
sub-rectangles. With the cell probabilities held fixed, the chain should
visit each table in proportion to its multinomial weight. For a table
this small we can list every completion and compare.
"""

from itertools import product
from math import lgamma

import numpy as np

from hybrid_ei.data import Dataset, Dimensions, EcologicalTable, SurveyCounts
from hybrid_ei.logit import to_omega
from hybrid_ei.sampler import ChainConfig, HyperPrior, init_state, step_counts

rows, cols = (5, 4), (3, 3, 3)
theta = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
K = np.array([[1, 0, 1], [0, 1, 0]])  # survey respondents already placed in cells


def completions(rows, cols):
    for a, b in product(range(cols[0] + 1), range(cols[1] + 1)):
        top = np.array([a, b, rows[0] - a - b])
        t = np.vstack([top, np.array(cols) - top])
        if (t >= 0).all():
            yield t


# only the unsurveyed part M = N - K is random, multinomial in theta
support, logw = [], []
for t in completions(rows, cols):
    M = t - K
    if (M >= 0).all():
        support.append(t)
        logw.append(sum(M.ravel() * np.log(theta.ravel())) - sum(lgamma(m + 1) for m in M.ravel()))
exact = np.exp(np.array(logw) - max(logw))
exact /= exact.sum()
print(f"{len(support)} tables are consistent with the margins and the survey")

# 200 identical copies of the table, theta fixed
dims = Dimensions(("a", "b"), ("x", "y", "Abstain"))
copies = 200
d = Dataset(dims, tuple(EcologicalTable(f"u{i}", rows, cols) for i in range(copies)),
            tuple(SurveyCounts(f"u{i}", K) for i in range(copies)))
cfg = ChainConfig(n_burnin=0, n_keep=1, thin=1)
s = init_state(d, HyperPrior.default(dims.dim), cfg)
s.omega[:] = to_omega(theta)
rng = np.random.default_rng(0)

index = {tuple(t.ravel()): j for j, t in enumerate(support)}
tally = np.zeros(len(support))
for sweep in range(600):
    step_counts(s, d, cfg, rng)
    if sweep >= 100:
        for t in s.N:
            tally[index[tuple(t.ravel())]] += 1
emp = tally / tally.sum()

for t, p, q in sorted(zip(support, exact, emp), key=lambda x: -x[1])[:6]:
    print(f"{t[0]} / {t[1]}   exact {p:.4f}   sampled {q:.4f}")
print(f"total variation distance: {0.5 * np.abs(emp - exact).sum():.4f}")
