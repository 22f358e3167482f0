"""Synthetic jurisdictions, precinct selection schemes and within-precinct surveys."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logit

from .data import DataError, Dataset, Dimensions, EcologicalTable, SurveyCounts
from .estimands import EstimandSet, compute_estimands
from .logit import to_theta

SIM_DIMS = Dimensions(("b", "w", "h"), ("D", "R", "Abstain"))

# (turnout, Democratic share of the two-party vote) per race
_BEHAVIOUR = {"b": (0.55, 0.90), "w": (0.65, 0.40), "h": (0.40, 0.70)}

# two-party Republican share of whites at 20% and 80% Hispanic
BIAS_ANCHORS = {"moderate": ((0.2, 0.70), (0.8, 0.55)), "severe": ((0.2, 0.90), (0.8, 0.30))}

MIX = {"integrated": (4.0, 4.0, 4.0), "less_integrated": (0.3, 0.3, 0.3)}


def default_mu() -> np.ndarray:
    mu = []
    for r in SIM_DIMS.races:
        turnout, dem = _BEHAVIOUR[r]
        pD, pR, pA = turnout * dem, turnout * (1 - dem), 1 - turnout
        mu += [np.log(pD / pA), np.log(pR / pA)]
    return np.array(mu)


def default_sigma(sd: float = 0.35, within: float = 0.5, between: float = 0.3) -> np.ndarray:
    D = SIM_DIMS.dim
    V = SIM_DIMS.C - 1
    corr = np.full((D, D), between)
    for r in range(SIM_DIMS.R):
        corr[r * V : (r + 1) * V, r * V : (r + 1) * V] = within
    np.fill_diagonal(corr, 1.0)
    return sd**2 * corr


def bias_slopes(level: str, mu: np.ndarray | None = None) -> dict[int, tuple[float, float]]:
    """(intercept, slope) in fraction Hispanic for the white D and R log-ratio means.

    The white R-minus-D log-ratio is made linear in fraction Hispanic through the
    two anchor points of ``BIAS_ANCHORS[level]``; the white D/R midpoint stays at
    its value in ``mu`` so turnout is roughly unchanged.
    """
    if level == "none":
        return {}
    (x1, p1), (x2, p2) = BIAS_ANCHORS[level]
    slope = (logit(p2) - logit(p1)) / (x2 - x1)
    intercept = logit(p1) - slope * x1
    mu = default_mu() if mu is None else np.asarray(mu)
    w = SIM_DIMS.races.index("w")
    iD, iR = 2 * w, 2 * w + 1
    mid = 0.5 * (mu[iD] + mu[iR])
    return {iD: (mid - intercept / 2, -slope / 2), iR: (mid + intercept / 2, slope / 2)}


@dataclass(frozen=True)
class SimConfig:
    n_precincts: int = 150
    precinct_size: tuple[int, int] = (400, 1200)
    race_mix: tuple[float, ...] = MIX["integrated"]
    mu_true: np.ndarray = field(default_factory=default_mu)
    sigma_true: np.ndarray = field(default_factory=default_sigma)
    bias: str = "none"
    bias_slopes: dict | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_precincts < 1:
            raise ValueError("n_precincts must be at least 1")
        lo, hi = self.precinct_size
        if not 0 < lo <= hi:
            raise ValueError("precinct_size must be (min, max) with 0 < min <= max")
        if len(self.race_mix) != SIM_DIMS.R or min(self.race_mix) <= 0:
            raise ValueError("race_mix needs one positive concentration per race")
        if self.bias not in ("none", "moderate", "severe"):
            raise ValueError(f"unknown bias level {self.bias!r}")
        mu = np.asarray(self.mu_true, dtype=float)
        sigma = np.asarray(self.sigma_true, dtype=float)
        if mu.shape != (SIM_DIMS.dim,) or sigma.shape != (SIM_DIMS.dim, SIM_DIMS.dim):
            raise ValueError("mu_true / sigma_true have the wrong dimension")
        if not np.allclose(sigma, sigma.T) or np.linalg.eigvalsh(sigma).min() <= 0:
            raise ValueError("sigma_true must be symmetric positive definite")
        object.__setattr__(self, "mu_true", mu)
        object.__setattr__(self, "sigma_true", sigma)
        if self.bias_slopes is None:
            object.__setattr__(self, "bias_slopes", bias_slopes(self.bias, mu))
        else:
            object.__setattr__(self, "bias_slopes", {int(k): tuple(v) for k, v in self.bias_slopes.items()})

    @classmethod
    def for_regime(cls, housing: str = "integrated", bias: str = "none", **kw) -> "SimConfig":
        return cls(race_mix=MIX[housing], bias=bias, **kw)

    def unit_mean(self, frac_hispanic: float) -> np.ndarray:
        mu = self.mu_true.copy()
        for k, (a, b) in self.bias_slopes.items():
            mu[k] = a + b * frac_hispanic
        return mu


@dataclass(frozen=True)
class TruthRecord:
    cells: np.ndarray  # (I, R, C)
    estimands: EstimandSet
    omega: np.ndarray
    config: SimConfig


def round_shares(shares, total: int) -> np.ndarray:
    """Largest-remainder rounding of shares to integers summing to ``total``."""
    x = np.asarray(shares, dtype=float) * total
    out = np.floor(x).astype(np.int64)
    short = total - out.sum()
    order = np.argsort(-(x - out), kind="stable")
    out[order[:short]] += 1
    return out


def gen_jurisdiction(cfg: SimConfig) -> tuple[Dataset, TruthRecord]:
    rng = np.random.default_rng(cfg.seed)
    dims = SIM_DIMS
    h = dims.races.index("h")
    L = np.linalg.cholesky(cfg.sigma_true)
    tables, cells, omegas = [], [], []
    lo, hi = cfg.precinct_size
    for i in range(cfg.n_precincts):
        n_i = int(rng.integers(lo, hi + 1))
        rows = round_shares(rng.dirichlet(cfg.race_mix), n_i)
        omega = cfg.unit_mean(rows[h] / n_i) + L @ rng.standard_normal(dims.dim)
        theta = to_theta(omega, dims.C)
        n = np.array([rng.multinomial(rows[r], theta[r]) for r in range(dims.R)])
        tables.append(EcologicalTable(f"p{i:03d}", rows, n.sum(axis=0)))
        cells.append(n)
        omegas.append(omega)
    cells = np.array(cells)
    truth = TruthRecord(cells, compute_estimands(cells, dims), np.array(omegas), cfg)
    return Dataset(dims, tuple(tables)), truth


def herfindahl_weight(row_totals) -> float:
    """Inverted Herfindahl index of a precinct's race shares (1 = one race, R = even mix)."""
    rows = np.asarray(row_totals, dtype=float)
    n = rows.sum()
    if n <= 0:
        raise DataError("Herfindahl weight undefined for a zero-population precinct")
    return float(1.0 / ((rows / n) ** 2).sum())


SCHEME_EXPONENTS = {1: 4.0, 2: 1.0, 3: -4.0, "herfindahl": 1.0, "uniform": 0.0}


def _scheme_key(scheme):
    if isinstance(scheme, str) and scheme.isdigit():
        scheme = int(scheme)
    if scheme not in SCHEME_EXPONENTS:
        raise ValueError(f"unknown sampling scheme {scheme!r}")
    return scheme


def scheme_weights(d: Dataset, scheme) -> np.ndarray:
    power = SCHEME_EXPONENTS[_scheme_key(scheme)]
    h = np.array([herfindahl_weight(t.row_totals) for t in d.tables])
    return h**power


def inclusion_probabilities(weights, n_sample: int) -> np.ndarray:
    """First-order inclusion probabilities proportional to ``weights``, capped at 1."""
    w = np.asarray(weights, dtype=float)
    if n_sample > w.size:
        raise ValueError(f"cannot sample {n_sample} of {w.size} units")
    pi = np.zeros_like(w)
    certain = np.zeros(w.size, dtype=bool)
    while True:
        left = n_sample - certain.sum()
        free = ~certain
        pi[certain] = 1.0
        if left == 0:
            pi[free] = 0.0
            break
        pi[free] = left * w[free] / w[free].sum()
        over = free & (pi >= 1.0)
        if not over.any():
            break
        certain |= over
    return pi


def select_precincts(d: Dataset, scheme, n_sample: int, seed) -> tuple[str, ...]:
    """Weighted sampling of ``n_sample`` distinct precincts without replacement.

    Randomized systematic sampling on the capped inclusion probabilities, so
    each precinct is included with exactly the probability returned by
    :func:`inclusion_probabilities`.
    """
    if n_sample > d.n_units:
        raise ValueError(f"cannot sample {n_sample} of {d.n_units} precincts")
    pi = inclusion_probabilities(scheme_weights(d, scheme), n_sample)
    rng = np.random.default_rng(seed)
    order = rng.permutation(d.n_units)
    edges = np.concatenate([[0.0], np.cumsum(pi[order])])
    points = rng.random() + np.arange(n_sample)
    hit = np.searchsorted(edges, points, side="right") - 1
    chosen = set(order[np.clip(hit, 0, d.n_units - 1)].tolist())
    # float drift in the cumulative sum can only drop certainty units; restore them
    chosen |= set(np.flatnonzero(pi >= 1.0).tolist())
    ids = d.unit_ids
    return tuple(ids[i] for i in sorted(chosen))


def draw_survey(
    d: Dataset, t: TruthRecord, S: Sequence[str], sampling_fraction: float, seed
) -> list[SurveyCounts]:
    """Simple random sample of round(fraction * N_i) people from each in-sample precinct."""
    if not 0.0 < sampling_fraction <= 1.0:
        raise ValueError("sampling_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    index = {u: i for i, u in enumerate(d.unit_ids)}
    out = []
    for u in S:
        cells = t.cells[index[u]]
        n = int(np.floor(sampling_fraction * cells.sum() + 0.5))
        k = rng.multivariate_hypergeometric(cells.ravel(), n)
        out.append(SurveyCounts(u, k.reshape(cells.shape)))
    return out
