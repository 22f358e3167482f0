"""Count-based estimands, posterior summaries and correlation blocks of Sigma."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dimensions


@dataclass(frozen=True)
class EstimandSet:
    """Estimands for one table set; NaN marks a 0/0 (missing) value.

    lambda_: R x (C-1) support fractions among actual voters,
    gamma: R shares of the actual electorate, turnout: R turnout rates.
    """

    lambda_: np.ndarray
    gamma: np.ndarray
    turnout: np.ndarray


@dataclass(frozen=True)
class Summary:
    point: float
    lo: float
    hi: float
    level: float
    n_draws: int
    n_excluded: int = 0

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def covers(self, value: float) -> bool:
        return bool(self.lo <= value <= self.hi)


def estimand_names(dims: Dimensions) -> list[str]:
    names = [f"lambda_{r}_{c}" for r in dims.races for c in dims.votes]
    names += [f"gamma_{r}" for r in dims.races]
    names += [f"turnout_{r}" for r in dims.races]
    return names


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    return np.where(den > 0, out, np.nan)


def estimands_from_totals(totals) -> np.ndarray:
    """Estimand vectors from jurisdiction-wide cell totals.

    ``totals`` has shape (..., R, C) with Abstain last. Returns (..., n_estimands)
    in :func:`estimand_names` order.
    """
    T = np.asarray(totals, dtype=float)
    row = T.sum(axis=-1)
    voters = row - T[..., -1]
    lam = _ratio(T[..., :-1], voters[..., None])
    gam = _ratio(voters, voters.sum(axis=-1, keepdims=True))
    turn = _ratio(voters, row)
    lead = T.shape[:-2]
    return np.concatenate([lam.reshape(lead + (-1,)), gam, turn], axis=-1)


def compute_estimands(cell_counts, dims: Dimensions) -> EstimandSet:
    """Estimands of a set of unit tables, shape (I, R, C) or a single (R, C) table."""
    N = np.asarray(cell_counts)
    if N.ndim == 2:
        N = N[None]
    if N.shape[1:] != (dims.R, dims.C):
        raise ValueError("cell counts do not match the dimensions")
    v = estimands_from_totals(N.sum(axis=0))
    R, V = dims.R, dims.C - 1
    return EstimandSet(v[: R * V].reshape(R, V), v[R * V : R * V + R], v[R * V + R :])


def summarize(draws, level: float = 0.95) -> Summary:
    """Posterior mean and equal-tailed interval; NaN draws are dropped and counted."""
    x = np.asarray(draws, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no draws to summarize")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    ok = np.isfinite(x)
    n_excluded = int((~ok).sum())
    x = x[ok]
    if x.size < 2:
        return Summary(np.nan, np.nan, np.nan, level, int(x.size), n_excluded)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(x, [tail, 1.0 - tail], method="linear")
    # shifted mean: exact for constant draws (degenerate posteriors)
    point = x[0] + (x - x[0]).mean()
    return Summary(float(point), float(lo), float(hi), level, int(x.size), n_excluded)


def to_correlation(sigma) -> np.ndarray:
    """Covariance matrices (..., D, D) to correlation matrices with an exact unit diagonal."""
    S = np.asarray(sigma, dtype=float)
    sd = np.sqrt(np.diagonal(S, axis1=-2, axis2=-1))
    corr = S / (sd[..., :, None] * sd[..., None, :])
    corr = np.clip(corr, -1.0, 1.0)
    idx = np.arange(S.shape[-1])
    corr[..., idx, idx] = 1.0
    return corr


def correlation_blocks(sigma_draws, dims: Dimensions, level: float = 0.95) -> dict:
    """Summaries of every between-race block of the correlation matrix.

    Returns ``{(race_a, race_b): {(choice_a, choice_b): Summary}}`` for each
    race pair a < b, where the entry is the correlation of coordinate
    (race_a, choice_a) with (race_b, choice_b).
    """
    corr = to_correlation(np.asarray(sigma_draws).reshape(-1, dims.dim, dims.dim))
    V = dims.C - 1
    out = {}
    for a in range(dims.R):
        for b in range(a + 1, dims.R):
            block = corr[:, a * V : (a + 1) * V, b * V : (b + 1) * V]
            out[(dims.races[a], dims.races[b])] = {
                (dims.votes[i], dims.votes[j]): summarize(block[:, i, j], level)
                for i in range(V)
                for j in range(V)
            }
    return out
