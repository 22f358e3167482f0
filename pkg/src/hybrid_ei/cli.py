"""Command-line entry point: fit, simulate, compare, summarize."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import io
from .data import DataError, aggregate_to_locations, validate_dataset
from .draws import DrawStore
from .estimands import correlation_blocks, estimand_names, summarize
from .harness import ExperimentConfig, pool_draws, run_experiment
from .sampler import ChainConfig, HyperPrior, run_chains
from .simgen import SimConfig, draw_survey, gen_jurisdiction, inclusion_probabilities, scheme_weights, select_precincts
from .survey import SurveyDesignError, survey_estimate

logger = logging.getLogger("hybrid_ei")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _add_mcmc_flags(p: argparse.ArgumentParser, burnin, keep, thin, seed=0) -> None:
    g = p.add_argument_group("MCMC")
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--chains", type=int, default=1)
    g.add_argument("--burnin", type=int, default=burnin)
    g.add_argument("--keep", type=int, default=keep)
    g.add_argument("--thin", type=int, default=thin)
    g.add_argument("--workers", type=int, default=1, help="processes for independent chains")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hybrid-ei",
        description="Hybrid ecological inference for R x C voting tables with within-precinct surveys.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the posterior to ecological (and survey) data")
    f.add_argument("ecological", nargs="+", help="ecological CSV; several files are treated as imputations and pooled")
    f.add_argument("--races", help="comma-separated race labels (needed when there is no Abstain column)")
    f.add_argument("--survey", help="survey CSV unit_id,race,choice,count")
    f.add_argument("--aggregation", help="aggregation CSV precinct_id,location_id")
    f.add_argument("--scope", choices=["in_sample_only", "all"], default="in_sample_only")
    f.add_argument("--design", help="design CSV/JSON; adds survey-only estimates to the summary")
    f.add_argument("--ei-only", action="store_true", help="ignore the survey")
    f.add_argument("--draws", required=True, help="output draws CSV")
    f.add_argument("--summary", required=True, help="output summary JSON")
    f.add_argument("--level", type=float, default=0.95)
    _add_mcmc_flags(f, ChainConfig.n_burnin, ChainConfig.n_keep, ChainConfig.thin)

    s = sub.add_parser("simulate", help="generate a synthetic jurisdiction (and optional survey)")
    s.add_argument("config", nargs="?", help="SimConfig JSON (defaults used if omitted)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="overrides the config seed")
    s.add_argument("--scheme", help="precinct selection scheme: 1, 2, 3, herfindahl or uniform")
    s.add_argument("--n-sample", type=int, default=30)
    s.add_argument("--fraction", type=float, default=0.25, help="within-precinct sampling fraction")

    c = sub.add_parser("compare", help="run the estimator comparison study")
    c.add_argument("config", nargs="?", help="ExperimentConfig JSON (defaults used if omitted)")
    c.add_argument("--out", required=True, help="output metrics CSV")
    c.add_argument("--records", help="optional per-replicate records CSV")
    c.add_argument("--level", type=float)
    c.add_argument("--replicates", type=int)
    _add_mcmc_flags(c, None, None, None, None)  # None: take the config file value

    m = sub.add_parser("summarize", help="summarize a draws CSV")
    m.add_argument("draws", nargs="+", help="draws CSV(s); several are pooled with equal weight")
    m.add_argument("--summary", required=True, help="output summary JSON")
    m.add_argument("--plot", help="output interval-plot CSV")
    m.add_argument("--correlations", help="output correlation-block JSON")
    m.add_argument("--level", type=float, default=0.95)
    return p


def _check_level(level: float) -> None:
    if not 0 < level < 1:
        raise ConfigError("--level must lie strictly between 0 and 1")


def _chain_config(a) -> ChainConfig:
    if a.burnin < 0 or a.keep < 1 or a.thin < 1 or a.chains < 1:
        raise ConfigError("need burnin >= 0, keep >= 1, thin >= 1, chains >= 1")
    return ChainConfig(n_burnin=a.burnin, n_keep=a.keep, thin=a.thin, seed=a.seed)


def summary_records(store: DrawStore, level: float, estimator: str | None = None) -> list[dict]:
    out = []
    for name in estimand_names(store.dims):
        rec = io.summary_record(name, summarize(store.column(name), level))
        if estimator:
            rec["estimator"] = estimator
        out.append(rec)
    return out


def interval_plot_frame(records: list[dict]) -> pd.DataFrame:
    """One row per estimand, ordered for a dot-and-whisker plot."""
    df = pd.DataFrame(records)
    cols = ["estimator", "estimand", "point", "lo", "hi", "level"]
    if "estimator" not in df:
        df["estimator"] = "posterior"
    df = df[cols].copy()
    df.insert(2, "position", np.arange(len(df)))
    return df


def correlation_records(store: DrawStore, level: float) -> list[dict]:
    blocks = correlation_blocks(store.sigma_draws(), store.dims, level)
    out = []
    for (ra, rb), cells in blocks.items():
        for (ca, cb), s in cells.items():
            rec = io.summary_record(f"corr_{ra}_{ca}__{rb}_{cb}", s)
            rec.update(race_a=ra, choice_a=ca, race_b=rb, choice_b=cb)
            out.append(rec)
    return out


# ---------------------------------------------------------------------------


def cmd_fit(a) -> int:
    _check_level(a.level)
    cfg = _chain_config(a)
    races = a.races.split(",") if a.races else None
    agg = io.read_aggregation(a.aggregation) if a.aggregation else None
    stores = []
    survey_recs = []
    for k, path in enumerate(a.ecological):
        d = io.read_ecological(path, races)
        if a.survey and not a.ei_only:
            surveys = io.read_surveys(a.survey, d.dims)
            if agg is not None:
                locs = set(agg.locations())
                pct = [s for s in surveys if s.unit_id not in locs]
                at_loc = [s for s in surveys if s.unit_id in locs and s.unit_id not in set(d.unit_ids)]
                d = aggregate_to_locations(d.with_surveys(pct), agg, a.scope, at_loc)
            else:
                d = d.with_surveys(surveys)
        elif agg is not None and a.scope == "all":
            d = aggregate_to_locations(d, agg, "all")
        validate_dataset(d).raise_if_failed()
        logger.info("%s: %d units, %d surveyed", path, d.n_units, len(d.surveys))
        stores.append(run_chains(d, HyperPrior.default(d.dims.dim), cfg, a.chains, a.workers, source=str(k)))
        if a.design and k == 0:
            design = io.read_design(a.design)
            for name in estimand_names(d.dims):
                rec = io.summary_record(name, survey_estimate(d.surveys, design, name, d.dims, a.level))
                rec["estimator"] = "survey"
                survey_recs.append(rec)
    store = pool_draws(stores)
    for k, s in enumerate(stores):
        if np.sum(s.diagnostics["margin_violations"]):
            raise DataError(f"sampler broke table margins on input {k}")
    store.write_csv(a.draws)
    recs = summary_records(store, a.level, "EI" if a.ei_only or not a.survey else "hybrid") + survey_recs
    io.write_summary_json(recs, a.summary)
    return EXIT_OK


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def sim_config_from_dict(raw: dict) -> SimConfig:
    raw = dict(raw)
    housing = raw.pop("housing", None)
    if housing is not None:
        if "race_mix" in raw:
            raise ConfigError("give either housing or race_mix, not both")
        from .simgen import MIX

        if housing not in MIX:
            raise ConfigError(f"unknown housing regime {housing!r}")
        raw["race_mix"] = MIX[housing]
    unknown = set(raw) - set(SimConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown SimConfig field(s): {sorted(unknown)}")
    for key in ("precinct_size", "race_mix"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return SimConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(a) -> int:
    raw = _load_json(a.config)
    if a.seed is not None:
        raw["seed"] = a.seed
    cfg = sim_config_from_dict(raw)
    if not 0 < a.fraction <= 1:
        raise ConfigError("--fraction must lie in (0, 1]")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    d, truth = gen_jurisdiction(cfg)
    io.write_ecological(d, out / "ecological.csv")
    io.write_truth(d, truth.cells, out / "truth.csv")
    if a.scheme is not None:
        scheme = int(a.scheme) if a.scheme.isdigit() else a.scheme
        try:
            S = select_precincts(d, scheme, a.n_sample, cfg.seed + 1)
            pi = dict(zip(d.unit_ids, inclusion_probabilities(scheme_weights(d, scheme), a.n_sample)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        sv = draw_survey(d, truth, S, a.fraction, cfg.seed + 2)
        io.write_surveys(sv, d.dims, out / "survey.csv")
        totals = {t.unit_id: t.total for t in d.tables}
        from .survey import srs_design

        io.write_design(srs_design(sv, pi, totals), out / "design.csv")
    names = estimand_names(d.dims)
    values = np.concatenate([truth.estimands.lambda_.ravel(), truth.estimands.gamma, truth.estimands.turnout])
    io.write_summary_json(
        [{"estimand": n, "value": float(v)} for n, v in zip(names, values)], out / "truth_estimands.json"
    )
    return EXIT_OK


def cmd_compare(a) -> int:
    raw = _load_json(a.config)
    chain = dict(raw.pop("chain", {}) or {})
    # explicit flags override the file
    for flag, key in (("burnin", "n_burnin"), ("keep", "n_keep"), ("thin", "thin")):
        if getattr(a, flag) is not None:
            chain[key] = getattr(a, flag)
    if a.seed is not None:
        raw["seed"] = a.seed
    if a.replicates is not None:
        raw["replicates"] = a.replicates
    if a.level is not None:
        raw["level"] = a.level
    if a.workers != 1:
        raw["workers"] = a.workers
    raw["chain"] = chain
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    _check_level(cfg.level)
    if cfg.chain.n_burnin < 100_000:
        logger.warning(
            "reduced MCMC (burn-in %d, keep %d): fine for a desk-scale study, too short for final analyses",
            cfg.chain.n_burnin, cfg.chain.n_keep,
        )
    table = run_experiment(cfg)
    table.to_csv(a.out)
    if a.records:
        table.records.to_csv(a.records, index=False, float_format="%.17g")
    return EXIT_OK


def cmd_summarize(a) -> int:
    _check_level(a.level)
    stores = []
    for path in a.draws:
        try:
            stores.append(DrawStore.read_csv(path))
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot read draws {path}: {exc}") from exc
    store = pool_draws(stores)
    recs = summary_records(store, a.level)
    io.write_summary_json(recs, a.summary)
    if a.plot:
        interval_plot_frame(recs).to_csv(a.plot, index=False, float_format="%.17g")
    if a.correlations:
        io.write_summary_json(correlation_records(store, a.level), a.correlations)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "compare": cmd_compare, "summarize": cmd_summarize}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help/--version, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[a.command](a)
    except (ConfigError, SurveyDesignError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
