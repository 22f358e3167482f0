"""Observed-data model: precinct tables, survey counts and aggregation maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ABSTAIN = "Abstain"


class DataError(ValueError):
    """Raised when input data cannot be turned into a usable dataset."""


def _frozen(a, dtype=np.int64) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dimensions:
    """Race (row) and choice (column) labels; Abstain is always the last choice."""

    races: tuple[str, ...]
    choices: tuple[str, ...]

    def __post_init__(self):
        races = tuple(str(r) for r in self.races)
        choices = tuple(str(c) for c in self.choices)
        object.__setattr__(self, "races", races)
        object.__setattr__(self, "choices", choices)
        if len(races) < 2 or len(choices) < 2:
            raise DataError("need at least two races and two choices")
        if len(set(races)) != len(races) or len(set(choices)) != len(choices):
            raise DataError("race and choice labels must be unique")
        if choices.count(ABSTAIN) != 1 or choices[-1] != ABSTAIN:
            raise DataError(f"choices must contain {ABSTAIN!r} exactly once, as the last label")

    @classmethod
    def from_labels(cls, races: Sequence[str], votes: Sequence[str]) -> "Dimensions":
        """Build from race labels and vote labels, appending Abstain if missing."""
        votes = [v for v in votes if v != ABSTAIN]
        return cls(tuple(races), tuple(votes) + (ABSTAIN,))

    @property
    def R(self) -> int:
        return len(self.races)

    @property
    def C(self) -> int:
        return len(self.choices)

    @property
    def dim(self) -> int:
        """Length of the stacked log-ratio vector, R*(C-1)."""
        return self.R * (self.C - 1)

    @property
    def votes(self) -> tuple[str, ...]:
        return self.choices[:-1]

    def coordinate_labels(self) -> list[str]:
        """Labels of the stacked log-ratio coordinates, race-major."""
        return [f"{r}_{c}" for r in self.races for c in self.votes]


@dataclass(frozen=True)
class EcologicalTable:
    unit_id: str
    row_totals: np.ndarray
    col_totals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "unit_id", str(self.unit_id))
        object.__setattr__(self, "row_totals", _frozen(self.row_totals))
        object.__setattr__(self, "col_totals", _frozen(self.col_totals))

    @property
    def total(self) -> int:
        return int(self.row_totals.sum())


@dataclass(frozen=True)
class SurveyCounts:
    """Sampled cell counts for one in-sample unit, stored as an R x C matrix."""

    unit_id: str
    k: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "unit_id", str(self.unit_id))
        k = np.array(self.k, dtype=np.int64)
        if k.ndim != 2:
            raise DataError("survey counts must be an R x C matrix")
        k.setflags(write=False)
        object.__setattr__(self, "k", k)

    @classmethod
    def from_vector(cls, unit_id: str, k: Sequence[int], dims: Dimensions) -> "SurveyCounts":
        """Build from a row-major vector of length R*C."""
        return cls(unit_id, np.asarray(k, dtype=np.int64).reshape(dims.R, dims.C))

    @property
    def vector(self) -> np.ndarray:
        return self.k.ravel()

    @property
    def total(self) -> int:
        return int(self.k.sum())


@dataclass(frozen=True)
class AggregationMap:
    """Total map from precinct id to polling-location id."""

    entries: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "entries", {str(k): str(v) for k, v in dict(self.entries).items()})

    def __getitem__(self, precinct_id: str) -> str:
        return self.entries[precinct_id]

    def locations(self) -> list[str]:
        return sorted(set(self.entries.values()))

    @classmethod
    def identity(cls, unit_ids: Iterable[str]) -> "AggregationMap":
        return cls({u: u for u in unit_ids})


@dataclass(frozen=True)
class Dataset:
    dims: Dimensions
    tables: tuple[EcologicalTable, ...]
    surveys: tuple[SurveyCounts, ...] = ()
    _arrays: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(self.tables))
        object.__setattr__(self, "surveys", tuple(self.surveys))

    @property
    def unit_ids(self) -> list[str]:
        return [t.unit_id for t in self.tables]

    @property
    def in_sample(self) -> frozenset[str]:
        return frozenset(s.unit_id for s in self.surveys)

    @property
    def n_units(self) -> int:
        return len(self.tables)

    def without_surveys(self) -> "Dataset":
        return Dataset(self.dims, self.tables, ())

    def with_surveys(self, surveys: Iterable[SurveyCounts]) -> "Dataset":
        return Dataset(self.dims, self.tables, tuple(surveys))

    def survey_for(self, unit_id: str) -> SurveyCounts | None:
        for s in self.surveys:
            if s.unit_id == unit_id:
                return s
        return None

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (rows (I,R), cols (I,C), K (I,R,C)) with K zero outside the sample."""
        if "rows" not in self._arrays:
            I, R, C = self.n_units, self.dims.R, self.dims.C
            rows = np.array([t.row_totals for t in self.tables], dtype=np.int64).reshape(I, R)
            cols = np.array([t.col_totals for t in self.tables], dtype=np.int64).reshape(I, C)
            K = np.zeros((I, R, C), dtype=np.int64)
            index = {u: i for i, u in enumerate(self.unit_ids)}
            for s in self.surveys:
                K[index[s.unit_id]] = s.k
            for a in (rows, cols, K):
                a.setflags(write=False)
            self._arrays.update(rows=rows, cols=cols, K=K)
        return self._arrays["rows"], self._arrays["cols"], self._arrays["K"]

    def in_sample_mask(self) -> np.ndarray:
        S = self.in_sample
        return np.array([u in S for u in self.unit_ids], dtype=bool)

    def drop_empty_units(self) -> "Dataset":
        """Drop units with zero total population, warning about each one."""
        keep = []
        for t in self.tables:
            if t.total == 0:
                logger.warning("dropping unit %s: zero total population", t.unit_id)
            else:
                keep.append(t)
        if len(keep) == len(self.tables):
            return self
        kept = {t.unit_id for t in keep}
        return Dataset(self.dims, tuple(keep), tuple(s for s in self.surveys if s.unit_id in kept))


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_failed(self) -> None:
        if self.violations:
            raise DataError("; ".join(self.violations))


def validate_dataset(d: Dataset) -> ValidationReport:
    """Check every structural invariant of a dataset; violations are returned, not raised."""
    out: list[str] = []
    R, C = d.dims.R, d.dims.C
    seen: set[str] = set()
    by_id: dict[str, EcologicalTable] = {}
    for t in d.tables:
        if t.unit_id in seen:
            out.append(f"duplicate unit_id {t.unit_id}")
        seen.add(t.unit_id)
        by_id[t.unit_id] = t
        if t.row_totals.shape != (R,) or t.col_totals.shape != (C,):
            out.append(f"unit {t.unit_id}: wrong number of row or column totals")
            continue
        if (t.row_totals < 0).any() or (t.col_totals < 0).any():
            out.append(f"unit {t.unit_id}: negative count")
        if t.row_totals.sum() != t.col_totals.sum():
            out.append(
                f"unit {t.unit_id}: margin mismatch (rows sum {t.row_totals.sum()}, "
                f"columns sum {t.col_totals.sum()})"
            )
    survey_ids: set[str] = set()
    for s in d.surveys:
        if s.unit_id in survey_ids:
            out.append(f"duplicate survey for unit {s.unit_id}")
        survey_ids.add(s.unit_id)
        t = by_id.get(s.unit_id)
        if t is None:
            out.append(f"survey references unknown unit_id {s.unit_id}")
            continue
        if s.k.shape != (R, C):
            out.append(f"survey {s.unit_id}: counts must be {R} x {C}")
            continue
        if (s.k < 0).any():
            out.append(f"survey {s.unit_id}: negative count")
        for r, label in enumerate(d.dims.races):
            if s.k[r].sum() > t.row_totals[r]:
                out.append(
                    f"survey {s.unit_id}: survey exceeds row total for {label} "
                    f"({s.k[r].sum()} > {t.row_totals[r]})"
                )
        if s.total > t.total:
            out.append(f"survey {s.unit_id}: survey total exceeds unit total")
    return ValidationReport(tuple(out))


def aggregate_to_locations(
    d: Dataset,
    m: AggregationMap,
    scope: str = "in_sample_only",
    location_surveys: Iterable[SurveyCounts] = (),
) -> Dataset:
    """Sum precinct tables sharing a polling location into one table per location.

    With ``scope="in_sample_only"`` only locations that hold an in-sample precinct
    (or appear in ``location_surveys``) are aggregated; the remaining precincts
    pass through unchanged. With ``scope="all"`` every location is aggregated.
    Precinct-level surveys are summed into their location; ``location_surveys``
    are already keyed by location id.
    """
    if scope not in ("in_sample_only", "all"):
        raise ValueError(f"unknown scope {scope!r}")
    precincts = set(d.unit_ids)
    unknown = sorted(set(m.entries) - precincts)
    if unknown:
        raise DataError(f"aggregation map references unknown precinct(s): {', '.join(unknown)}")
    unmapped = sorted(precincts - set(m.entries))
    if unmapped:
        raise DataError(f"aggregation map is missing precinct(s): {', '.join(unmapped)}")

    location_surveys = tuple(location_surveys)
    sampled_locations = {m[u] for u in d.in_sample} | {s.unit_id for s in location_surveys}
    known_locations = set(m.entries.values())
    stray = sorted({s.unit_id for s in location_surveys} - known_locations)
    if stray:
        raise DataError(f"survey references unknown location(s): {', '.join(stray)}")

    def aggregated(u: str) -> bool:
        return scope == "all" or m[u] in sampled_locations

    out_tables: list[EcologicalTable] = []
    groups: dict[str, list[EcologicalTable]] = {}
    order: list[tuple[str, str]] = []
    for t in d.tables:
        if aggregated(t.unit_id):
            loc = m[t.unit_id]
            if loc not in groups:
                groups[loc] = []
                order.append(("loc", loc))
            groups[loc].append(t)
        else:
            order.append(("pct", t.unit_id))
    by_id = {t.unit_id: t for t in d.tables}
    for kind, key in order:
        if kind == "pct":
            out_tables.append(by_id[key])
        else:
            members = groups[key]
            out_tables.append(
                EcologicalTable(
                    key,
                    np.sum([t.row_totals for t in members], axis=0),
                    np.sum([t.col_totals for t in members], axis=0),
                )
            )
    ids = [t.unit_id for t in out_tables]
    if len(set(ids)) != len(ids):
        raise DataError("location ids collide with pass-through precinct ids")

    survey_sums: dict[str, np.ndarray] = {}
    for s in d.surveys:
        key = m[s.unit_id] if aggregated(s.unit_id) else s.unit_id
        survey_sums[key] = survey_sums.get(key, 0) + s.k
    for s in location_surveys:
        survey_sums[s.unit_id] = survey_sums.get(s.unit_id, 0) + s.k
    surveys = tuple(SurveyCounts(u, survey_sums[u]) for u in ids if u in survey_sums)
    return Dataset(d.dims, tuple(out_tables), surveys)
