"""Panel data model, CSV ingestion, treatment timing and sample filters."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from . import _kernels
from .errors import (
    DuplicateObservation,
    EmptyAfterFilter,
    EmptyDataset,
    InconsistentUnitValue,
    MissingColumn,
    MissingRegionColumn,
    NonBiennialWaves,
    NonIntegerPeriod,
    PanelError,
)

#: Spellings accepted as "never adopts" in an adoption or law-year column.
NEVER_TOKENS = frozenset({"", "never", "none", "na", "nan", "inf"})
NEVER_TOKEN = "NEVER"


@dataclass(frozen=True)
class PanelSchema:
    """Column names used when reading a panel CSV.

    ``covariates=None`` takes every column not claimed by another role.
    An ``adoption`` column, when present, wins over ``law_year``.
    """

    unit: str = "unit"
    period: str = "period"
    outcome: str = "outcome"
    cluster: str = "cluster"
    region: Optional[str] = "region"
    adoption: str = "adoption"
    law_year: str = "law_year"
    covariates: Optional[Sequence[str]] = None


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Long-format unit x period observations.

    Observations are stored sorted by ``(unit, period)``. Per-unit arrays
    (``unit_ids``, ``cluster_ids``, ``adoption``, ``post_sample``) have one
    entry per unit; per-observation arrays have one entry per row.

    ``adoption`` holds the adoption period as a float, ``NaN`` meaning no
    adoption inside the sample. ``post_sample`` flags units whose adoption
    falls after the sample ends; they enter estimation exactly like
    never-treated units.
    """

    unit_ids: np.ndarray
    cluster_ids: np.ndarray
    periods: np.ndarray
    unit: np.ndarray
    period: np.ndarray
    outcome: np.ndarray
    adoption: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    region: Optional[np.ndarray] = None
    post_sample: Optional[np.ndarray] = None

    def __post_init__(self):
        n_units = len(self.unit_ids)
        n = len(self.unit)
        if n == 0 or n_units == 0:
            raise EmptyDataset("panel has no observations")
        periods = np.asarray(self.periods, dtype=np.int64)
        if periods.ndim != 1 or np.any(np.diff(periods) <= 0):
            raise PanelError("periods must be strictly increasing")
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "unit", np.asarray(self.unit, dtype=np.int64))
        object.__setattr__(self, "period", np.asarray(self.period, dtype=np.int64))
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=np.float64))
        object.__setattr__(self, "adoption", np.asarray(self.adoption, dtype=np.float64))
        object.__setattr__(self, "covariates", {k: np.asarray(v, dtype=np.float64) for k, v in self.covariates.items()})
        if self.post_sample is None:
            object.__setattr__(self, "post_sample", np.zeros(n_units, dtype=bool))
        if len(self.cluster_ids) != n_units or len(self.adoption) != n_units:
            raise PanelError("cluster_ids and adoption need exactly one entry per unit")
        for name, col in self.covariates.items():
            if len(col) != n:
                raise PanelError(f"covariate {name!r} has {len(col)} rows, expected {n}")
        if not np.isin(self.period, periods).all():
            raise PanelError("observation period not in the period grid")
        order = np.lexsort((self.period, self.unit))
        if not np.array_equal(order, np.arange(n)):
            raise PanelError("observations must be sorted by (unit, period)")
        same = (np.diff(self.unit) == 0) & (np.diff(self.period) == 0)
        if same.any():
            r = int(np.argmax(same))
            raise DuplicateObservation(
                f"duplicate observation for unit {self.unit_ids[self.unit[r]]!r}, period {self.period[r]}"
            )
        treated = ~np.isnan(self.adoption)
        allowed = np.append(periods, periods[-1] + self.period_step)
        bad = treated & ~np.isin(self.adoption, allowed)
        if bad.any():
            u = int(np.argmax(bad))
            raise PanelError(
                f"adoption {self.adoption[u]:g} of unit {self.unit_ids[u]!r} is not a sample period"
            )

    # -- shape -------------------------------------------------------------

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_obs(self) -> int:
        return len(self.unit)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    @property
    def period_step(self) -> int:
        return int(self.periods[-1] - self.periods[-2]) if len(self.periods) > 1 else 1

    @property
    def period_pos(self) -> np.ndarray:
        """Grid position (0-based wave index) of every observation."""
        return np.searchsorted(self.periods, self.period)

    @property
    def obs_cluster(self) -> np.ndarray:
        return np.asarray(self.cluster_ids)[self.unit]

    def grid_position(self, value: float) -> int:
        """Position of a period label, with one step past the end allowed."""
        if value == self.periods[-1] + self.period_step:
            return self.n_periods
        pos = int(np.searchsorted(self.periods, value))
        if pos >= self.n_periods or self.periods[pos] != value:
            raise PanelError(f"{value} is not a sample period")
        return pos

    # -- derived datasets --------------------------------------------------

    def take_rows(self, rows: np.ndarray) -> "PanelDataset":
        """New dataset restricted to the given rows (boolean mask or indices).

        Units left without rows are dropped; unit order is preserved.
        """
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        if rows.size == 0:
            raise EmptyAfterFilter("no observations left")
        rows = np.sort(rows)
        kept_units, new_unit = np.unique(self.unit[rows], return_inverse=True)
        return PanelDataset(
            unit_ids=np.asarray(self.unit_ids)[kept_units],
            cluster_ids=np.asarray(self.cluster_ids)[kept_units],
            periods=self.periods,
            unit=new_unit,
            period=self.period[rows],
            outcome=self.outcome[rows],
            adoption=self.adoption[kept_units],
            covariates={k: v[rows] for k, v in self.covariates.items()},
            region=None if self.region is None else np.asarray(self.region)[rows],
            post_sample=self.post_sample[kept_units],
        )

    def take_units(self, keep: np.ndarray) -> "PanelDataset":
        """New dataset with only the units where ``keep`` (per-unit mask) is true."""
        keep = np.asarray(keep, dtype=bool)
        if not keep.any():
            raise EmptyAfterFilter("no unit survives the filter")
        return self.take_rows(keep[self.unit])

    def complete_cases(self, columns: Sequence[str] = ()) -> "PanelDataset":
        """Drop rows with a missing outcome or a missing value in ``columns``."""
        ok = ~np.isnan(self.outcome)
        for name in columns:
            if name not in self.covariates:
                raise MissingColumn(f"covariate column {name!r} not in dataset")
            ok &= ~np.isnan(self.covariates[name])
        if ok.all():
            return self
        return self.take_rows(ok)

    def with_outcome(self, outcome: np.ndarray) -> "PanelDataset":
        return PanelDataset(
            unit_ids=self.unit_ids,
            cluster_ids=self.cluster_ids,
            periods=self.periods,
            unit=self.unit,
            period=self.period,
            outcome=np.asarray(outcome, dtype=np.float64),
            adoption=self.adoption,
            covariates=self.covariates,
            region=self.region,
            post_sample=self.post_sample,
        )

    # -- output ------------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        """Observations as a DataFrame in the CSV schema column order."""
        data = {
            "unit": np.asarray(self.unit_ids)[self.unit],
            "period": self.period,
            "outcome": self.outcome,
            "cluster": np.asarray(self.cluster_ids)[self.unit],
        }
        if self.region is not None:
            data["region"] = self.region
        adoption = self.adoption[self.unit]
        data["adoption"] = [NEVER_TOKEN if np.isnan(a) else str(int(a)) for a in adoption]
        data.update(self.covariates)
        return pd.DataFrame(data)

    def write_csv(self, path) -> None:
        frame = self.to_frame()
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n", na_rep="")


@dataclass(frozen=True, eq=False)
class CohortMap:
    """Cohort membership and relative time for every observation.

    ``relative_time`` counts waves (grid steps) from adoption to the
    observation's period and is ``NaN`` for never-treated units. On a grid
    with unit spacing it equals ``period - adoption``.
    """

    cohorts: dict
    never_treated: np.ndarray
    relative_time: np.ndarray
    obs_cohort: np.ndarray

    @property
    def cohort_labels(self) -> list:
        return sorted(self.cohorts)


# --------------------------------------------------------------------------
# ingestion


def _to_float(token: str) -> float:
    try:
        return float(token)
    except ValueError:
        return float("nan")


def _parse_float_column(values: pd.Series, name: str) -> np.ndarray:
    # float() rather than pd.to_numeric: the latter is not round-trip exact
    stripped = values.str.strip()
    parsed = np.array([_to_float(t) for t in stripped], dtype=np.float64)
    bad = np.isnan(parsed) & (stripped != "").to_numpy() & ~stripped.str.lower().isin(["nan", "na"]).to_numpy()
    if bad.any():
        r = int(np.argmax(bad))
        warnings.warn(
            f"column {name!r}: {int(bad.sum())} unparseable value(s) recorded as missing "
            f"(first at data row {r + 1}: {values.iloc[r]!r})",
            stacklevel=3,
        )
    return parsed


def _parse_optional_year(token: str, column: str, row: int) -> Optional[int]:
    t = token.strip()
    if t.lower() in NEVER_TOKENS:
        return None
    try:
        f = float(t)
    except ValueError:
        raise PanelError(f"column {column!r}, data row {row + 1}: cannot parse {token!r} as a period") from None
    if not f.is_integer():
        raise NonIntegerPeriod(f"column {column!r}, data row {row + 1}: {token!r} is not an integer period")
    return int(f)


def _per_unit(values: np.ndarray, unit: np.ndarray, n_units: int, name: str, unit_ids) -> np.ndarray:
    frame = pd.DataFrame({"u": unit, "v": values})
    counts = frame.groupby("u", sort=True)["v"].nunique(dropna=False)
    if (counts > 1).any():
        u = int(counts.index[np.argmax(counts.to_numpy() > 1)])
        raise InconsistentUnitValue(f"column {name!r} varies within unit {unit_ids[u]!r}")
    first = frame.groupby("u", sort=True)["v"].first()
    return first.reindex(range(n_units)).to_numpy()


def load_panel(path, schema: PanelSchema = PanelSchema()) -> PanelDataset:
    """Read a panel CSV into a validated :class:`PanelDataset`.

    Empty outcome or covariate cells are missing; non-empty cells that do
    not parse are also recorded as missing, with a warning. Adoption is
    read from the ``adoption`` column if present, otherwise law years are
    mapped onto survey waves with :func:`map_law_year_to_wave`.
    """
    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    frame.columns = [c.strip() for c in frame.columns]
    for role in ("unit", "period", "outcome", "cluster"):
        col = getattr(schema, role)
        if col not in frame.columns:
            raise MissingColumn(f"required {role} column {col!r} not found in {path.name}")
    if frame.empty:
        raise EmptyDataset(f"{path.name} has a header but no rows")

    if schema.adoption in frame.columns:
        adopt_col = schema.adoption
    elif schema.law_year in frame.columns:
        adopt_col = schema.law_year
    else:
        raise MissingColumn(f"neither {schema.adoption!r} nor {schema.law_year!r} column found in {path.name}")

    period_raw = frame[schema.period].str.strip()
    try:
        period_f = period_raw.astype(float).to_numpy()
    except ValueError:
        r = int(np.argmax(~period_raw.str.fullmatch(r"[+-]?\d+(\.0*)?").to_numpy()))
        raise NonIntegerPeriod(f"column {schema.period!r}, data row {r + 1}: {period_raw.iloc[r]!r} is not an integer") from None
    if not np.all(np.isfinite(period_f)) or not np.all(period_f == np.round(period_f)):
        r = int(np.argmax(~(np.isfinite(period_f) & (period_f == np.round(period_f)))))
        raise NonIntegerPeriod(f"column {schema.period!r}, data row {r + 1}: {period_raw.iloc[r]!r} is not an integer")
    period = period_f.astype(np.int64)

    unit_raw = frame[schema.unit].str.strip()
    unit_codes, unit_ids = pd.factorize(unit_raw, sort=False)
    unit_ids = np.asarray(unit_ids, dtype=object)
    n_units = len(unit_ids)

    key = pd.DataFrame({"u": unit_codes, "t": period})
    dup = key.duplicated(keep="first").to_numpy()
    if dup.any():
        r = int(np.argmax(dup))
        raise DuplicateObservation(
            f"duplicate observation at data row {r + 1}: unit {unit_raw.iloc[r]!r}, period {period[r]}"
        )

    cluster = _per_unit(frame[schema.cluster].str.strip().to_numpy(dtype=object), unit_codes, n_units, schema.cluster, unit_ids)

    raw_adopt = frame[adopt_col].to_numpy(dtype=object)
    years = np.array(
        [np.nan if (y := _parse_optional_year(v, adopt_col, i)) is None else float(y) for i, v in enumerate(raw_adopt)]
    )
    years = _per_unit(years, unit_codes, n_units, adopt_col, unit_ids).astype(np.float64)

    periods = np.unique(period)
    post_sample = np.zeros(n_units, dtype=bool)
    if adopt_col == schema.law_year:
        waves = periods.tolist()
        adoption = np.full(n_units, np.nan)
        for u, y in enumerate(years):
            if np.isnan(y):
                continue
            w = map_law_year_to_wave(int(y), waves)
            if w is None:
                post_sample[u] = True
            else:
                adoption[u] = w
    else:
        adoption = years
        step = int(periods[-1] - periods[-2]) if len(periods) > 1 else 1
        post_sample = ~np.isnan(adoption) & (adoption > periods[-1] + step)
        adoption = np.where(post_sample, np.nan, adoption)

    claimed = {schema.unit, schema.period, schema.outcome, schema.cluster, schema.adoption, schema.law_year}
    region = None
    if schema.region is not None and schema.region in frame.columns:
        claimed.add(schema.region)
        region = frame[schema.region].str.strip().to_numpy(dtype=object)
    if schema.covariates is None:
        cov_names = [c for c in frame.columns if c not in claimed]
    else:
        cov_names = list(schema.covariates)
        for c in cov_names:
            if c not in frame.columns:
                raise MissingColumn(f"covariate column {c!r} not found in {path.name}")

    outcome = _parse_float_column(frame[schema.outcome], schema.outcome)
    covariates = {c: _parse_float_column(frame[c], c) for c in cov_names}

    order = np.lexsort((period, unit_codes))
    return PanelDataset(
        unit_ids=unit_ids,
        cluster_ids=np.asarray(cluster, dtype=object),
        periods=periods,
        unit=unit_codes[order],
        period=period[order],
        outcome=outcome[order],
        adoption=adoption,
        covariates={k: v[order] for k, v in covariates.items()},
        region=None if region is None else region[order],
        post_sample=post_sample,
    )


# --------------------------------------------------------------------------
# treatment timing


def map_law_year_to_wave(law_year: int, wave_years: Sequence[int]) -> Optional[int]:
    """First biennial wave treated by a law passed in ``law_year``.

    A wave counts as treated when the law passed in the survey year or the
    year before. Laws older than the first wave map to the first wave;
    laws after the last wave return ``None`` (not treated within sample).
    """
    waves = [int(w) for w in wave_years]
    if len(waves) == 0:
        raise NonBiennialWaves("no waves given")
    steps = set(np.diff(waves).tolist())
    if steps and steps != {2}:
        raise NonBiennialWaves(f"wave spacing {sorted(steps)} is not biennial")
    for w in waves:
        if law_year <= w:
            return w
    return None


def build_cohorts(dataset: PanelDataset) -> CohortMap:
    """Group units by adoption period and compute relative time per row."""
    treated = ~np.isnan(dataset.adoption)
    cohorts = {}
    for e in np.unique(dataset.adoption[treated]):
        cohorts[int(e)] = np.flatnonzero(dataset.adoption == e)
    adopt_pos = np.full(dataset.n_units, np.nan)
    for e in cohorts:
        adopt_pos[cohorts[e]] = dataset.grid_position(e)
    obs_pos = dataset.period_pos.astype(np.float64)
    return CohortMap(
        cohorts=cohorts,
        never_treated=np.flatnonzero(~treated),
        relative_time=obs_pos - adopt_pos[dataset.unit],
        obs_cohort=dataset.adoption[dataset.unit],
    )


# --------------------------------------------------------------------------
# sample restrictions


def longest_consecutive_run(dataset: PanelDataset) -> np.ndarray:
    """Per unit, the longest run of consecutive waves with a non-missing outcome."""
    return _kernels.longest_runs(dataset.unit, dataset.period_pos, ~np.isnan(dataset.outcome), dataset.n_units)


def filter_balanced(dataset: PanelDataset, min_consecutive: int = 9) -> PanelDataset:
    """Keep units observed for at least ``min_consecutive`` consecutive waves.

    A missing outcome breaks a run. Dropped units are removed entirely.
    """
    if min_consecutive < 2:
        raise ValueError("min_consecutive must be at least 2")
    keep = longest_consecutive_run(dataset) >= min_consecutive
    if not keep.any():
        raise EmptyAfterFilter(f"no unit has {min_consecutive} consecutive observed waves")
    if keep.all():
        return dataset
    return dataset.take_units(keep)


def drop_movers(dataset: PanelDataset) -> PanelDataset:
    """Remove units whose region changes between any two observed periods."""
    if dataset.region is None:
        raise MissingRegionColumn("dataset has no region column")
    region = pd.Series(dataset.region, dtype=object).replace("", np.nan)
    n_regions = region.groupby(dataset.unit).nunique(dropna=True)
    n_regions = n_regions.reindex(range(dataset.n_units), fill_value=0).to_numpy()
    keep = n_regions <= 1
    if not keep.any():
        raise EmptyAfterFilter("every unit changes region")
    if keep.all():
        return dataset
    return dataset.take_units(keep)
