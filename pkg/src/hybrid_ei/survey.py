"""Design-based (stratified two-stage) ratio estimator for the survey alone."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .data import Dimensions, SurveyCounts
from .estimands import Summary


class SurveyDesignError(ValueError):
    pass


@dataclass(frozen=True)
class SurveyDesign:
    """Per sampled unit: stratum label, first-stage weight and within-unit sampling fraction."""

    strata: Mapping[str, str]
    weights: Mapping[str, float]
    within_fraction: Mapping[str, float]

    def __post_init__(self):
        for name in ("strata", "weights", "within_fraction"):
            object.__setattr__(self, name, {str(k): v for k, v in dict(getattr(self, name)).items()})
        units = set(self.weights)
        if set(self.strata) != units or set(self.within_fraction) != units:
            raise SurveyDesignError("strata, weights and within_fraction must cover the same units")
        if any(w <= 0 for w in self.weights.values()):
            raise SurveyDesignError("design weights must be positive")
        if any(not 0 < f <= 1 for f in self.within_fraction.values()):
            raise SurveyDesignError("within-unit sampling fractions must lie in (0, 1]")

    @classmethod
    def single_stratum(cls, weights: Mapping[str, float], within_fraction: Mapping[str, float], label="all"):
        return cls({u: label for u in weights}, weights, within_fraction)


def parse_estimand(name: str, dims: Dimensions) -> tuple[str, int, int | None]:
    """'lambda_<race>_<choice>' | 'gamma_<race>' | 'turnout_<race>' -> (kind, race, choice)."""
    for kind in ("gamma", "turnout"):
        if name.startswith(kind + "_") and name[len(kind) + 1 :] in dims.races:
            return kind, dims.races.index(name[len(kind) + 1 :]), None
    if name.startswith("lambda_"):
        rest = name[len("lambda_") :]
        for r, race in enumerate(dims.races):
            for c, choice in enumerate(dims.votes):
                if rest == f"{race}_{choice}":
                    return "lambda", r, c
    raise ValueError(f"unknown estimand {name!r}")


def ratio_parts(k: np.ndarray, kind: str, r: int, c: int | None) -> tuple[float, float]:
    """Numerator and denominator cell sums of one unit's sample for a ratio estimand."""
    k = np.asarray(k)
    voters = k.sum(axis=1) - k[:, -1]
    if kind == "lambda":
        return float(k[r, c]), float(voters[r])
    if kind == "gamma":
        return float(voters[r]), float(voters.sum())
    return float(voters[r]), float(k[r].sum())


def survey_estimate(
    surveys: Sequence[SurveyCounts],
    design: SurveyDesign,
    estimand: str,
    dims: Dimensions,
    level: float = 0.95,
) -> Summary:
    """Weighted ratio estimate with a linearized, with-replacement between-cluster variance.

    Each cluster's sampled totals are expanded by weight / within-fraction. The
    variance sums, over strata, n/(n-1) times the spread of the linearized
    cluster scores, divided by the squared estimated denominator. The interval
    is normal-theory. A zero denominator gives a NaN summary.
    """
    kind, r, c = parse_estimand(estimand, dims)
    by_stratum: dict[str, list[tuple[float, float, float]]] = {}
    for s in surveys:
        if s.unit_id not in design.weights:
            raise SurveyDesignError(f"no design entry for surveyed unit {s.unit_id}")
        y, x = ratio_parts(s.k, kind, r, c)
        e = design.weights[s.unit_id] / design.within_fraction[s.unit_id]
        by_stratum.setdefault(design.strata[s.unit_id], []).append((e * y, e * x, e))
    if not by_stratum:
        raise SurveyDesignError("no surveyed units")
    for label, rows in by_stratum.items():
        if len(rows) < 2:
            raise SurveyDesignError(f"variance not estimable: stratum {label!r} has a single cluster")
    Y = sum(y for rows in by_stratum.values() for y, _, _ in rows)
    X = sum(x for rows in by_stratum.values() for _, x, _ in rows)
    n = sum(len(rows) for rows in by_stratum.values())
    if X <= 0:
        return Summary(np.nan, np.nan, np.nan, level, n, 1)
    ratio = Y / X
    var = 0.0
    for rows in by_stratum.values():
        z = np.array([y - ratio * x for y, x, _ in rows])
        m = z.size
        var += m / (m - 1) * ((z - z.mean()) ** 2).sum()
    se = np.sqrt(var) / X
    half = norm.ppf(0.5 + level / 2) * se
    return Summary(float(ratio), float(ratio - half), float(ratio + half), level, n)


def srs_design(
    surveys: Sequence[SurveyCounts],
    inclusion: Mapping[str, float],
    unit_totals: Mapping[str, int],
    stratum: str = "random",
) -> SurveyDesign:
    """Design for a single-stratum selection with known inclusion probabilities."""
    weights = {s.unit_id: 1.0 / inclusion[s.unit_id] for s in surveys}
    fracs = {s.unit_id: s.total / unit_totals[s.unit_id] for s in surveys}
    return SurveyDesign({u: stratum for u in weights}, weights, fracs)
