"""Two-way fixed-effects event study and the interaction-weighted estimator.

The interaction-weighted (IW) estimator runs in three steps:

1. a saturated two-way FE regression of the outcome on cohort x relative
   period indicators, giving cohort-specific effects ``delta[e, l]``;
2. cohort shares among treated observations at each relative period;
3. the share-weighted average of ``delta`` within each event-time bin.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import CellMismatch, EmptyBin, EstimationError, NoCohorts
from .panel import CohortMap, PanelDataset, build_cohorts
from .regress import (
    DesignMatrix,
    absorbed_count,
    cluster_robust_vcov,
    solve_ols,
    two_way_within,
    wald_test,
)
from .results import CATT_SCHEMA_ID, EstimateTable, _float_list, bin_label

#: Cells with fewer observations are left out of the CATT matrix and the weights.
MIN_CELL_COUNT = 2


class EndpointRule(str, Enum):
    """How FE mode treats relative periods outside the bin window."""

    POOL = "pool"
    DROP_INDICATOR = "drop"


@dataclass(frozen=True)
class EventStudySpec:
    bins: tuple = ((-3,), (-2,), (0,), (1,), (2,), (3,))
    reference_period: int = -1
    endpoint_rule: EndpointRule = EndpointRule.POOL
    controls: tuple = ()
    cluster: str = "cluster"  # "cluster" (dataset cluster ids) or "unit"

    def __post_init__(self):
        bins = tuple(tuple(sorted(int(x) for x in b)) for b in self.bins)
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "endpoint_rule", EndpointRule(self.endpoint_rule))
        object.__setattr__(self, "controls", tuple(self.controls))
        if not bins or any(len(b) == 0 for b in bins):
            raise ValueError("bins must be non-empty")
        seen = set()
        for b in bins:
            if list(b) != list(range(b[0], b[-1] + 1)):
                raise ValueError(f"bin {b} is not a run of consecutive relative periods")
            if self.reference_period in b:
                raise ValueError(f"reference period {self.reference_period} lies inside bin {b}")
            if seen & set(b):
                raise ValueError("bins overlap")
            seen |= set(b)
        if self.cluster not in ("cluster", "unit"):
            raise ValueError("cluster must be 'cluster' or 'unit'")

    @classmethod
    def window(cls, lo: int = -3, hi: int = 3, reference_period: int = -1, **kwargs) -> "EventStudySpec":
        """Singleton bins for every relative period in ``[lo, hi]`` except the reference."""
        bins = tuple((x,) for x in range(lo, hi + 1) if x != reference_period)
        return cls(bins=bins, reference_period=reference_period, **kwargs)

    @property
    def labels(self) -> tuple:
        return tuple(bin_label(b) for b in self.bins)

    @property
    def lo(self) -> int:
        return min(b[0] for b in self.bins)

    @property
    def hi(self) -> int:
        return max(b[-1] for b in self.bins)

    def bin_index(self, rel: np.ndarray) -> np.ndarray:
        """Bin position for each relative period, -1 for no indicator (FE mode)."""
        rel = np.asarray(rel, dtype=np.float64)
        out = np.full(rel.shape, -1, dtype=np.int64)
        for k, b in enumerate(self.bins):
            out[np.isin(rel, b)] = k
        if self.endpoint_rule is EndpointRule.POOL:
            first = int(np.argmin([b[0] for b in self.bins]))
            last = int(np.argmax([b[-1] for b in self.bins]))
            out[rel < self.lo] = first
            out[rel > self.hi] = last
        out[np.isnan(rel) | (rel == self.reference_period)] = -1
        return out


@dataclass(frozen=True, eq=False)
class CattMatrix:
    """Cohort x relative-period effects with their joint covariance."""

    cells: tuple
    delta: np.ndarray
    vcov: np.ndarray
    cell_counts: np.ndarray
    n_obs: int = 0
    n_units: int = 0
    n_clusters: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple((int(e), int(l)) for e, l in self.cells))
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=np.float64))
        object.__setattr__(self, "vcov", np.asarray(self.vcov, dtype=np.float64).reshape(len(self.cells), len(self.cells)))
        object.__setattr__(self, "cell_counts", np.asarray(self.cell_counts, dtype=np.int64))

    def __len__(self):
        return len(self.cells)

    def __contains__(self, cell) -> bool:
        return tuple(cell) in self._lookup

    def __getitem__(self, cell) -> float:
        return float(self.delta[self._lookup[tuple(cell)]])

    @property
    def _lookup(self) -> dict:
        return {c: i for i, c in enumerate(self.cells)}

    @property
    def cohorts(self) -> list:
        return sorted({e for e, _ in self.cells})

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0.0, None))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "cohort": [e for e, _ in self.cells],
            "rel_period": [l for _, l in self.cells],
            "estimate": self.delta,
            "se": self.std_errors,
            "n": self.cell_counts,
        })

    def write_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    def to_dict(self) -> dict:
        return {
            "schema": CATT_SCHEMA_ID,
            "cells": [[e, l] for e, l in self.cells],
            "estimates": _float_list(self.delta),
            "std_errors": _float_list(self.std_errors),
            "vcov": [_float_list(r) for r in self.vcov],
            "n": [int(c) for c in self.cell_counts],
            "n_obs": int(self.n_obs),
            "n_units": int(self.n_units),
            "n_clusters": int(self.n_clusters),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Aggregation weights of one bin over ``(cohort, rel_period)`` cells.

    ``weights`` already include the ``1/|g|`` averaging over the bin's
    relative periods, so the bin estimate is ``weights @ delta[cells]`` and
    the weights sum to one. ``shares`` keeps the per-period cohort shares.
    """

    bin: tuple
    cells: tuple
    weights: np.ndarray
    shares: Mapping[int, Mapping[int, float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {c: float(w) for c, w in zip(self.cells, self.weights)}


@dataclass(frozen=True, eq=False)
class IWResult:
    table: EstimateTable
    catt: CattMatrix
    weights: Mapping[tuple, WeightVector]


# --------------------------------------------------------------------------
# design construction


def _fe_column(label: str) -> str:
    return f"rel[{label}]"


def _iw_column(e: int, l: int) -> str:
    return f"cohort[{e}]:rel[{l}]"


def iw_cells(cohorts: CohortMap, reference_period: int = -1) -> list:
    """Every observed treated (cohort, rel_period) cell except the reference period."""
    treated = ~np.isnan(cohorts.relative_time)
    frame = pd.DataFrame({"e": cohorts.obs_cohort[treated].astype(np.int64), "l": cohorts.relative_time[treated].astype(np.int64)})
    frame = frame[frame["l"] != reference_period]
    return sorted(set(zip(frame["e"].tolist(), frame["l"].tolist())))


def build_relative_indicators(
    dataset: PanelDataset,
    cohorts: CohortMap,
    spec: EventStudySpec,
    mode: str = "fe",
) -> DesignMatrix:
    """Relative-period indicator columns.

    ``mode="fe"``: one column per bin, with the endpoint rule applied.
    ``mode="iw"``: one column per observed (cohort, rel_period) cell, fully
    saturated in relative time regardless of the bin window; the bins only
    enter at aggregation. Never-treated and reference-period rows are zero.
    """
    n = dataset.n_obs
    if len(cohorts.relative_time) != n:
        raise ValueError("cohort map was built for a different dataset")
    rel = cohorts.relative_time
    if mode == "fe":
        idx = spec.bin_index(rel)
        cols = np.zeros((n, len(spec.bins)))
        rows = np.flatnonzero(idx >= 0)
        cols[rows, idx[rows]] = 1.0
        empty = np.flatnonzero(cols.sum(axis=0) == 0)
        if empty.size:
            raise EmptyBin(f"bin {spec.labels[empty[0]]} matches no observation")
        names = [_fe_column(lab) for lab in spec.labels]
    elif mode == "iw":
        cells = iw_cells(cohorts, spec.reference_period)
        if not cells:
            raise NoCohorts("no treated observations outside the reference period")
        pos = {c: j for j, c in enumerate(cells)}
        cols = np.zeros((n, len(cells)))
        treated = np.flatnonzero(~np.isnan(rel) & (rel != spec.reference_period))
        e = cohorts.obs_cohort[treated].astype(np.int64)
        l = rel[treated].astype(np.int64)
        cols[treated, [pos[c] for c in zip(e.tolist(), l.tolist())]] = 1.0
        names = [_iw_column(e, l) for e, l in cells]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return DesignMatrix(cols, tuple(names), dataset.unit, dataset.period_pos)


# --------------------------------------------------------------------------
# estimation


def _prepare(dataset: PanelDataset, cohorts: Optional[CohortMap], spec: EventStudySpec):
    data = dataset.complete_cases(spec.controls)
    if data is not dataset or cohorts is None:
        cohorts = build_cohorts(data)
    return data, cohorts


def _cluster_labels(dataset: PanelDataset, spec: EventStudySpec) -> np.ndarray:
    return dataset.unit if spec.cluster == "unit" else dataset.obs_cluster


def _within_fit(dataset: PanelDataset, indicators: DesignMatrix, spec: EventStudySpec):
    """Demean outcome, indicators and controls together, then OLS + CR1."""
    names = list(indicators.names) + [f"ctrl[{c}]" for c in spec.controls]
    raw = np.column_stack([dataset.outcome, indicators.columns] + [dataset.covariates[c] for c in spec.controls])
    unit, period = dataset.unit, dataset.period_pos
    demeaned = two_way_within(raw, unit, period)
    X = DesignMatrix(demeaned[:, 1:], tuple(names), unit, period)
    fit = solve_ols(X, demeaned[:, 0], absorbed=absorbed_count(unit, period))
    clusters = _cluster_labels(dataset, spec)
    vcov = cluster_robust_vcov(fit, X, clusters, nested=("unit",))
    n_clusters = len(np.unique(np.asarray(clusters).astype(str)))
    return fit, vcov, n_clusters


def estimate_fe(dataset: PanelDataset, cohorts: Optional[CohortMap], spec: EventStudySpec) -> EstimateTable:
    """Two-way fixed-effects event study: one coefficient per bin."""
    data, cohorts = _prepare(dataset, cohorts, spec)
    D = build_relative_indicators(data, cohorts, spec, mode="fe")
    fit, vcov, n_clusters = _within_fit(data, D, spec)
    dropped = [n for n in D.names if n in fit.dropped_columns]
    if dropped:
        raise EstimationError(f"event-time indicator(s) {', '.join(dropped)} collinear with the fixed effects")
    idx = [fit.names.index(n) for n in D.names]
    return EstimateTable(
        labels=spec.labels,
        estimates=fit.coefficients[idx],
        std_errors=None,
        vcov=vcov[np.ix_(idx, idx)],
        n_obs=data.n_obs,
        n_units=data.n_units,
        n_clusters=n_clusters,
        method="fe",
        counts=D.columns.sum(axis=0).astype(np.int64),
        bins=spec.bins,
        dof_residual=fit.dof_residual,
    )


def estimate_catt(dataset: PanelDataset, cohorts: Optional[CohortMap], spec: EventStudySpec) -> CattMatrix:
    """Saturated cohort x relative-period regression on all units.

    Cells with fewer than ``MIN_CELL_COUNT`` observations, or whose
    indicator is collinear with the fixed effects, keep their column in the
    regression but are left out of the result with a warning.
    """
    data, cohorts = _prepare(dataset, cohorts, spec)
    if not cohorts.cohorts:
        raise NoCohorts("panel has no treated cohort")
    D = build_relative_indicators(data, cohorts, spec, mode="iw")
    fit, vcov, n_clusters = _within_fit(data, D, spec)
    cells = iw_cells(cohorts, spec.reference_period)
    counts = D.columns.sum(axis=0).astype(np.int64)
    keep, thin, collinear = [], [], []
    for j, (cell, name) in enumerate(zip(cells, D.names)):
        if name in fit.dropped_columns:
            collinear.append(cell)
        elif counts[j] < MIN_CELL_COUNT:
            thin.append(cell)
        else:
            keep.append(j)
    if thin:
        warnings.warn(f"dropping {len(thin)} CATT cell(s) with fewer than {MIN_CELL_COUNT} observations: {thin}", stacklevel=2)
    if collinear:
        warnings.warn(f"dropping {len(collinear)} unidentified CATT cell(s): {collinear}", stacklevel=2)
    if not keep:
        raise NoCohorts("no identified CATT cell")
    idx = [fit.names.index(D.names[j]) for j in keep]
    return CattMatrix(
        cells=[cells[j] for j in keep],
        delta=fit.coefficients[idx],
        vcov=vcov[np.ix_(idx, idx)],
        cell_counts=counts[keep],
        n_obs=data.n_obs,
        n_units=data.n_units,
        n_clusters=n_clusters,
    )


def cell_count_table(cohorts: CohortMap) -> dict:
    """Observation count of every treated (cohort, rel_period) cell."""
    treated = ~np.isnan(cohorts.relative_time)
    e = cohorts.obs_cohort[treated].astype(np.int64)
    l = cohorts.relative_time[treated].astype(np.int64)
    frame = pd.DataFrame({"e": e, "l": l}).value_counts()
    return {(int(a), int(b)): int(c) for (a, b), c in frame.items()}


def estimate_weights(
    cohorts: CohortMap,
    bin_periods: Sequence[int],
    cells: Optional[Sequence[tuple]] = None,
    min_count: int = MIN_CELL_COUNT,
) -> WeightVector:
    """Cohort sample shares among treated observations at each period of a bin.

    Only cells with at least ``min_count`` observations (and, if ``cells``
    is given, only those cells) take part; shares are renormalised over
    them. Periods of the bin with no eligible cohort are skipped.
    """
    bin_periods = tuple(sorted(int(x) for x in bin_periods))
    counts = cell_count_table(cohorts)
    allowed = None if cells is None else {tuple(c) for c in cells}
    shares: dict = {}
    for l in bin_periods:
        here = {e: n for (e, ll), n in counts.items() if ll == l and n >= min_count and (allowed is None or (e, ll) in allowed)}
        total = sum(here.values())
        if total > 0:
            shares[l] = {e: n / total for e, n in sorted(here.items())}
    if not shares:
        raise EmptyBin(f"no cohort contributes to bin {bin_label(bin_periods)}")
    out_cells, out_w = [], []
    for l, sh in shares.items():
        for e, s in sh.items():
            out_cells.append((e, l))
            out_w.append(s / len(shares))
    return WeightVector(bin=bin_periods, cells=tuple(out_cells), weights=np.array(out_w), shares=shares)


def iw_aggregate(catt: CattMatrix, weights: Mapping[tuple, WeightVector], spec: EventStudySpec) -> EstimateTable:
    """Weighted average of CATT estimates per bin.

    Variance is ``A V A'`` with the weights ``A`` treated as fixed.
    """
    lookup = catt._lookup
    A = np.zeros((len(spec.bins), len(catt)))
    for k, b in enumerate(spec.bins):
        if b not in weights:
            raise CellMismatch(f"no weights for bin {bin_label(b)}")
        wv = weights[b]
        expected = {c for c, n in zip(catt.cells, catt.cell_counts) if c[1] in b}
        if set(wv.cells) != expected:
            missing = sorted(set(wv.cells) ^ expected)
            raise CellMismatch(f"bin {bin_label(b)}: weights and CATT cells differ at {missing}")
        for c, w in zip(wv.cells, wv.weights):
            A[k, lookup[c]] = w
    counts = (A > 0).astype(np.int64) @ catt.cell_counts
    return EstimateTable(
        labels=spec.labels,
        estimates=A @ catt.delta,
        std_errors=None,
        vcov=A @ catt.vcov @ A.T,
        n_obs=catt.n_obs,
        n_units=catt.n_units,
        n_clusters=catt.n_clusters,
        method="iw",
        counts=counts,
        bins=spec.bins,
    )


def estimate_iw(dataset: PanelDataset, cohorts: Optional[CohortMap], spec: EventStudySpec) -> IWResult:
    """All three IW steps on one dataset."""
    data, cohorts = _prepare(dataset, cohorts, spec)
    catt = estimate_catt(data, cohorts, spec)
    weights = {b: estimate_weights(cohorts, b, cells=catt.cells) for b in spec.bins}
    return IWResult(iw_aggregate(catt, weights, spec), catt, weights)


def pretrend_test(table: EstimateTable, lead_labels: Optional[Sequence[str]] = None) -> tuple[float, int, float]:
    """Joint Wald test that every lead coefficient is zero."""
    leads = list(table.lead_labels() if lead_labels is None else lead_labels)
    if not leads:
        raise ValueError("no lead bins to test")
    b, v = table.subset(leads)
    return wald_test(b, v)
