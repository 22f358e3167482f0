"""Estimator comparison study and draw pooling."""

from __future__ import annotations

import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.stats import binomtest

from .data import Dataset
from .draws import DrawStore, concat_stores
from .estimands import Summary, summarize
from .sampler import ChainConfig, HyperPrior, run_chain
from .simgen import SimConfig, draw_survey, gen_jurisdiction, inclusion_probabilities, scheme_weights, select_precincts
from .survey import srs_design, survey_estimate

logger = logging.getLogger(__name__)

# forking after the threaded kernels have run aborts the child
_SPAWN = multiprocessing.get_context("spawn")

ESTIMATORS = ("EI", "survey1", "survey2", "survey3", "hybrid1", "hybrid2", "hybrid3")

DESK_CHAIN = ChainConfig(n_burnin=20_000, n_keep=10_000, thin=1)


@dataclass(frozen=True)
class ExperimentConfig:
    replicates: int = 50
    housing: str = "integrated"
    bias: str = "none"
    estimators: tuple[str, ...] = ESTIMATORS
    target: str = "lambda_h_D"
    level: float = 0.95
    n_precincts: int = 150
    n_sample: int = 30
    sampling_fraction: float = 0.25
    chain: ChainConfig = DESK_CHAIN
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.housing not in ("integrated", "less_integrated"):
            raise ValueError(f"unknown housing regime {self.housing!r}")
        if self.bias not in ("none", "moderate", "severe"):
            raise ValueError(f"unknown bias level {self.bias!r}")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ValueError(f"unknown estimator(s): {bad}")
        object.__setattr__(self, "estimators", tuple(self.estimators))

    def schemes(self) -> list[int]:
        return sorted({int(e[-1]) for e in self.estimators if e != "EI"})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["estimators"] = list(self.estimators)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        chain = raw.pop("chain", None)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment field(s): {sorted(unknown)}")
        if "estimators" in raw:
            raw["estimators"] = tuple(raw["estimators"])
        if chain is not None:
            raw["chain"] = replace(DESK_CHAIN, **chain)
        return cls(**raw)


def sign_test_pvalue(wins_a: float, n: int) -> float:
    """Two-sided exact binomial p-value at p = 1/2.

    Half wins from ties are rounded toward n/2, which can only raise the p-value.
    """
    if n <= 0:
        raise ValueError("sign test needs at least one comparison")
    if not 0 <= wins_a <= n:
        raise ValueError("wins must lie between 0 and n")
    k = np.floor(wins_a) if wins_a > n / 2 else np.ceil(wins_a)
    return float(binomtest(int(k), n, 0.5).pvalue)


def pool_draws(stores: list[DrawStore]) -> DrawStore:
    """Stack draw stores with equal weight each, tagging every draw with its store index.

    Stores of unequal length are cut to the shortest by evenly spaced thinning.
    """
    if not stores:
        raise ValueError("nothing to pool")
    if len(stores) == 1:
        return stores[0]
    n = min(len(s) for s in stores)
    parts = []
    for k, s in enumerate(stores):
        idx = np.round(np.linspace(0, len(s) - 1, n)).astype(int) if len(s) != n else np.arange(n)
        parts.append(
            DrawStore(s.dims, s.values[idx], s.chain[idx], s.iteration[idx],
                      np.array([f"{k}/{x}" for x in s.source[idx]], dtype=object), s.diagnostics)
        )
    return concat_stores(parts)


# ---------------------------------------------------------------------------
# Comparison study


def _replicate_seeds(seed: int, rep: int) -> dict[str, int]:
    names = ["sim", "EI"] + [f"{k}{s}" for s in (1, 2, 3) for k in ("select", "survey", "hybrid")]
    state = np.random.SeedSequence([int(seed), int(rep)]).generate_state(len(names), dtype=np.uint64)
    return {n: int(v) for n, v in zip(names, state)}


def run_replicate(cfg: ExperimentConfig, rep: int) -> list[dict]:
    """Generate one jurisdiction and apply every configured estimator to it."""
    seeds = _replicate_seeds(cfg.seed, rep)
    sim = SimConfig.for_regime(cfg.housing, cfg.bias, n_precincts=cfg.n_precincts, seed=seeds["sim"])
    d, truth = gen_jurisdiction(sim)
    truth_value = float(_truth_value(truth, d, cfg.target))
    prior = HyperPrior.default(d.dims.dim)
    surveys = {}
    for s in cfg.schemes():
        S = select_precincts(d, s, cfg.n_sample, seeds[f"select{s}"])
        pi = dict(zip(d.unit_ids, inclusion_probabilities(scheme_weights(d, s), cfg.n_sample)))
        surveys[s] = (draw_survey(d, truth, S, cfg.sampling_fraction, seeds[f"survey{s}"]), pi)
    totals = {t.unit_id: t.total for t in d.tables}

    records = []
    for name in cfg.estimators:
        rec = {"replicate": rep, "estimator": name, "truth": truth_value}
        try:
            if name == "EI":
                summ = _fit_summary(d, prior, replace(cfg.chain, seed=seeds["EI"]), cfg)
            else:
                s = int(name[-1])
                sv, pi = surveys[s]
                if name.startswith("survey"):
                    summ = survey_estimate(sv, srs_design(sv, pi, totals), cfg.target, d.dims, cfg.level)
                else:
                    summ = _fit_summary(d.with_surveys(sv), prior, replace(cfg.chain, seed=seeds[f"hybrid{s}"]), cfg)
            if not np.isfinite(summ.point):
                raise ValueError("estimate is missing (zero denominator)")
            rec.update(point=summ.point, lo=summ.lo, hi=summ.hi, ok=True, error="")
        except Exception as exc:  # one estimator failing must not sink the replicate
            logger.warning("replicate %d, %s failed: %s", rep, name, exc)
            rec.update(point=np.nan, lo=np.nan, hi=np.nan, ok=False, error=str(exc))
        records.append(rec)
    return records


def _truth_value(truth, d: Dataset, target: str) -> float:
    from .estimands import estimand_names, estimands_from_totals

    values = estimands_from_totals(truth.cells.sum(axis=0))
    return values[estimand_names(d.dims).index(target)]


def _fit_summary(d: Dataset, prior: HyperPrior, chain: ChainConfig, cfg: ExperimentConfig) -> Summary:
    store = run_chain(d, prior, chain)
    if store.diagnostics["margin_violations"]:
        raise RuntimeError("sampler broke the table margins")
    return summarize(store.column(cfg.target), cfg.level)


@dataclass
class MetricsTable:
    records: pd.DataFrame
    estimators: tuple[str, ...]
    summary: pd.DataFrame = field(init=False)

    def __post_init__(self):
        self.summary = _aggregate(self.records, self.estimators)

    def row(self, estimator: str) -> pd.Series:
        return self.summary.set_index("estimator").loc[estimator]

    def to_csv(self, path) -> None:
        self.summary.to_csv(path, index=False, float_format="%.17g")

    def equals(self, other: "MetricsTable") -> bool:
        return self.summary.equals(other.summary) and self.records.equals(other.records)


def _aggregate(records: pd.DataFrame, estimators) -> pd.DataFrame:
    rows = []
    err = {}
    for e in estimators:
        r = records[records.estimator == e].set_index("replicate")
        good = r[r.ok.astype(bool)]
        diff = good.point - good.truth
        err[e] = diff**2
        rows.append(
            {
                "estimator": e,
                "n": int(len(good)),
                "n_failed": int(len(r) - len(good)),
                "rmse": float(np.sqrt((diff**2).mean())) if len(good) else np.nan,
                "bias": float(diff.mean()) if len(good) else np.nan,
                "mean_length": float((good.hi - good.lo).mean()) if len(good) else np.nan,
                "coverage": float(((good.lo <= good.truth) & (good.truth <= good.hi)).mean()) if len(good) else np.nan,
            }
        )
    for row in rows:
        a = row["estimator"]
        for b in estimators:
            if b == a:
                continue
            common = err[a].index.intersection(err[b].index)
            ea, eb = err[a].loc[common], err[b].loc[common]
            wins = float((ea < eb).sum() + 0.5 * (ea == eb).sum())
            row[f"wins_vs_{b}"] = wins
            row[f"n_vs_{b}"] = int(len(common))
            row[f"pvalue_vs_{b}"] = sign_test_pvalue(wins, len(common)) if len(common) else np.nan
    return pd.DataFrame(rows)


def _replicate_job(args):
    cfg, rep = args
    return run_replicate(cfg, rep)


def run_experiment(cfg: ExperimentConfig) -> MetricsTable:
    """Run every replicate (in worker processes if ``cfg.workers > 1``) and aggregate."""
    jobs = [(cfg, r) for r in range(cfg.replicates)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers, mp_context=_SPAWN) as pool:
            results = list(pool.map(_replicate_job, jobs))
    else:
        results = [_replicate_job(j) for j in jobs]
    # completion order is irrelevant: results come back in replicate order
    records = pd.DataFrame([rec for reps in results for rec in reps])
    return MetricsTable(records, cfg.estimators)
