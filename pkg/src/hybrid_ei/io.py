"""CSV/JSON readers and writers for datasets, surveys, designs, truth and summaries."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .data import ABSTAIN, AggregationMap, DataError, Dataset, Dimensions, EcologicalTable, SurveyCounts
from .estimands import Summary
from .survey import SurveyDesign, SurveyDesignError

logger = logging.getLogger(__name__)


def _read(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype={0: str}, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _as_int(df: pd.DataFrame, cols, what: str) -> np.ndarray:
    try:
        x = df[list(cols)].to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{what}: non-numeric count") from exc
    if np.isnan(x).any() or (x != np.round(x)).any():
        raise DataError(f"{what}: counts must be integers")
    return x.astype(np.int64)


def _infer_races(cols: list[str], values: np.ndarray) -> int:
    """Number of race columns, found as the unique split where the two halves agree on every row."""
    splits = [k for k in range(2, len(cols) - 1) if (values[:, :k].sum(1) == values[:, k:].sum(1)).all()]
    if len(splits) != 1:
        raise DataError("cannot tell race columns from choice columns; pass the race labels explicitly")
    return splits[0]


# ---------------------------------------------------------------------------
# ecological table: unit_id,<races>,<choices>[,Abstain]


def read_ecological(path, races: Sequence[str] | None = None) -> Dataset:
    df = _read(path)
    cols = [str(c) for c in df.columns]
    if not cols or cols[0] != "unit_id":
        raise DataError(f"{path}: first column must be unit_id")
    body = cols[1:]
    values = _as_int(df, body, str(path))
    if races is None:
        if ABSTAIN not in body:
            raise DataError("without an Abstain column the race labels must be given")
        n_r = _infer_races(body, values)
        races = body[:n_r]
    races = [str(r) for r in races]
    if body[: len(races)] != races:
        raise DataError(f"{path}: expected race columns {races} right after unit_id, got {body[:len(races)]}")
    choices = body[len(races) :]
    rows = values[:, : len(races)]
    cv = values[:, len(races) :]
    if ABSTAIN in choices:
        j = choices.index(ABSTAIN)
        # move Abstain last
        order = [i for i in range(len(choices)) if i != j] + [j]
        choices = [choices[i] for i in order]
        cv = cv[:, order]
    else:
        cv = np.column_stack([cv, rows.sum(1) - cv.sum(1)])
        choices = choices + [ABSTAIN]
    dims = Dimensions(tuple(races), tuple(choices))
    ids = df["unit_id"].astype(str).tolist()
    tables = tuple(EcologicalTable(u, r, c) for u, r, c in zip(ids, rows, cv))
    return Dataset(dims, tables)


def write_ecological(d: Dataset, path) -> None:
    rows, cols, _ = d.arrays()
    df = pd.DataFrame(np.column_stack([rows, cols]), columns=list(d.dims.races) + list(d.dims.choices))
    df.insert(0, "unit_id", d.unit_ids)
    df.to_csv(path, index=False)


# ---------------------------------------------------------------------------
# long-format cell counts: unit_id,race,choice,count (survey and truth)


def read_cells(path, dims: Dimensions) -> dict[str, np.ndarray]:
    df = _read(path)
    need = ["unit_id", "race", "choice", "count"]
    if [str(c) for c in df.columns] != need:
        raise DataError(f"{path}: header must be {','.join(need)}")
    counts = _as_int(df, ["count"], str(path))[:, 0]
    out: dict[str, np.ndarray] = {}
    seen = set()
    for u, race, choice, n in zip(df.unit_id.astype(str), df.race.astype(str), df.choice.astype(str), counts):
        if race not in dims.races or choice not in dims.choices:
            raise DataError(f"{path}: unknown race/choice ({race}, {choice}) for unit {u}")
        key = (u, race, choice)
        if key in seen:
            raise DataError(f"{path}: duplicate entry {key}")
        seen.add(key)
        out.setdefault(u, np.zeros((dims.R, dims.C), dtype=np.int64))
        out[u][dims.races.index(race), dims.choices.index(choice)] = n
    return out


def write_cells(cells: dict[str, np.ndarray] | Iterable[tuple[str, np.ndarray]], dims: Dimensions, path) -> None:
    items = cells.items() if isinstance(cells, dict) else cells
    recs = [
        (u, race, choice, int(k[r, c]))
        for u, k in items
        for r, race in enumerate(dims.races)
        for c, choice in enumerate(dims.choices)
    ]
    pd.DataFrame(recs, columns=["unit_id", "race", "choice", "count"]).to_csv(path, index=False)


def read_surveys(path, dims: Dimensions) -> list[SurveyCounts]:
    return [SurveyCounts(u, k) for u, k in read_cells(path, dims).items()]


def write_surveys(surveys: Sequence[SurveyCounts], dims: Dimensions, path) -> None:
    write_cells([(s.unit_id, s.k) for s in surveys], dims, path)


def write_truth(d: Dataset, cells: np.ndarray, path) -> None:
    write_cells(list(zip(d.unit_ids, cells)), d.dims, path)


def read_truth(path, d: Dataset) -> np.ndarray:
    got = read_cells(path, d.dims)
    missing = [u for u in d.unit_ids if u not in got]
    if missing:
        raise DataError(f"{path}: no truth for unit(s) {missing[:5]}")
    return np.array([got[u] for u in d.unit_ids])


# ---------------------------------------------------------------------------
# aggregation map and survey design


def read_aggregation(path) -> AggregationMap:
    df = _read(path)
    if [str(c) for c in df.columns] != ["precinct_id", "location_id"]:
        raise DataError(f"{path}: header must be precinct_id,location_id")
    if df.precinct_id.duplicated().any():
        raise DataError(f"{path}: precinct mapped twice")
    return AggregationMap(dict(zip(df.precinct_id.astype(str), df.location_id.astype(str))))


def write_aggregation(m: AggregationMap, path) -> None:
    pd.DataFrame(list(m.entries.items()), columns=["precinct_id", "location_id"]).to_csv(path, index=False)


_DESIGN_COLS = ["unit_id", "stratum", "weight", "within_fraction"]


def read_design(path) -> SurveyDesign:
    """Design from CSV (``unit_id,stratum,weight,within_fraction``) or JSON (list of such records)."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            recs = json.loads(path.read_text())
            if isinstance(recs, dict):
                recs = recs.get("units", [])
            df = pd.DataFrame(recs, columns=_DESIGN_COLS)
        else:
            df = pd.read_csv(path, dtype={"unit_id": str, "stratum": str})
    except (OSError, ValueError) as exc:
        raise SurveyDesignError(f"cannot read design {path}: {exc}") from exc
    if [str(c) for c in df.columns] != _DESIGN_COLS:
        raise SurveyDesignError(f"{path}: design columns must be {','.join(_DESIGN_COLS)}")
    ids = df.unit_id.astype(str)
    return SurveyDesign(
        dict(zip(ids, df.stratum.astype(str))),
        dict(zip(ids, df.weight.astype(float))),
        dict(zip(ids, df.within_fraction.astype(float))),
    )


def write_design(design: SurveyDesign, path) -> None:
    recs = [
        {"unit_id": u, "stratum": design.strata[u], "weight": design.weights[u], "within_fraction": design.within_fraction[u]}
        for u in design.weights
    ]
    if Path(path).suffix.lower() == ".json":
        Path(path).write_text(json.dumps(recs, indent=1))
    else:
        pd.DataFrame(recs, columns=_DESIGN_COLS).to_csv(path, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# summaries


def summary_record(name: str, s: Summary) -> dict:
    rec = {"estimand": name, "point": s.point, "lo": s.lo, "hi": s.hi, "level": s.level, "n_draws": s.n_draws}
    if s.n_excluded:
        rec["n_excluded"] = s.n_excluded
    return rec


def _jsonable(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None  # NaN marks a missing estimand
    if isinstance(x, (np.floating, np.integer)):
        return _jsonable(x.item())
    return x


def write_summary_json(records: list[dict], path) -> None:
    clean = [{k: _jsonable(v) for k, v in r.items()} for r in records]
    Path(path).write_text(json.dumps(clean, indent=1))


def read_summary_json(path) -> list[dict]:
    recs = json.loads(Path(path).read_text())
    for r in recs:
        for k in ("point", "lo", "hi"):
            if r.get(k) is None:
                r[k] = float("nan")
    return recs
