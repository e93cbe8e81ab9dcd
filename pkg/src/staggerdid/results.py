"""Estimate tables and their CSV / JSON serialisation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

ESTIMATES_SCHEMA_ID = "staggerdid.estimates/1"
CATT_SCHEMA_ID = "staggerdid.catt/1"


def significance_stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def bin_label(bin_periods: Sequence[int]) -> str:
    """``(-3,)`` -> ``"-3"``; ``(0, 1, 2)`` -> ``"0..2"``."""
    b = sorted(int(x) for x in bin_periods)
    return str(b[0]) if len(b) == 1 else f"{b[0]}..{b[-1]}"


def _float_list(a) -> list:
    return [float(x) for x in np.asarray(a, dtype=np.float64).ravel()]


@dataclass(frozen=True, eq=False)
class EstimateTable:
    """Named coefficients with standard errors and full covariance.

    ``counts`` is the number of observations behind each coefficient (for
    event-time bins, observations carrying that indicator); ``bins`` is set
    for event-study tables and lets lead coefficients be found by sign.
    """

    labels: tuple
    estimates: np.ndarray
    std_errors: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_units: int
    n_clusters: int
    method: str = ""
    counts: Optional[np.ndarray] = None
    bins: Optional[tuple] = None
    dof_residual: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "estimates", np.asarray(self.estimates, dtype=np.float64))
        vcov = np.atleast_2d(np.asarray(self.vcov, dtype=np.float64)).reshape(len(self.labels), len(self.labels))
        object.__setattr__(self, "vcov", vcov)
        object.__setattr__(self, "std_errors", np.sqrt(np.clip(np.diag(vcov), 0.0, None)))
        if self.counts is not None:
            object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def __getitem__(self, label: str) -> float:
        return float(self.estimates[self.index(label)])

    def se(self, label: str) -> float:
        return float(self.std_errors[self.index(label)])

    @property
    def p_values(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            z = self.estimates / self.std_errors
        return 2.0 * stats.norm.sf(np.abs(z))

    def conf_int(self, level: float = 0.95) -> np.ndarray:
        z = stats.norm.ppf(0.5 + level / 2.0)
        return np.column_stack([self.estimates - z * self.std_errors, self.estimates + z * self.std_errors])

    def lead_labels(self) -> list:
        if self.bins is None:
            raise ValueError("table has no event-time bins")
        return [lab for lab, b in zip(self.labels, self.bins) if max(b) < 0]

    def subset(self, labels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        idx = [self.index(lab) for lab in labels]
        return self.estimates[idx], self.vcov[np.ix_(idx, idx)]

    # -- serialisation -----------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        n = self.counts if self.counts is not None else np.full(len(self), self.n_obs)
        return pd.DataFrame({"label": list(self.labels), "estimate": self.estimates, "se": self.std_errors, "n": n})

    def write_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    def to_dict(self) -> dict:
        return {
            "schema": ESTIMATES_SCHEMA_ID,
            "method": self.method,
            "labels": list(self.labels),
            "estimates": _float_list(self.estimates),
            "std_errors": _float_list(self.std_errors),
            "vcov": [_float_list(row) for row in self.vcov],
            "n": None if self.counts is None else [int(c) for c in self.counts],
            "bins": None if self.bins is None else [[int(x) for x in b] for b in self.bins],
            "n_obs": int(self.n_obs),
            "n_units": int(self.n_units),
            "n_clusters": int(self.n_clusters),
            "dof_residual": None if self.dof_residual is None else int(self.dof_residual),
        }

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateTable":
        return cls(
            labels=tuple(d["labels"]),
            estimates=np.array(d["estimates"]),
            std_errors=np.array(d["std_errors"]),
            vcov=np.array(d["vcov"]),
            n_obs=d["n_obs"],
            n_units=d["n_units"],
            n_clusters=d["n_clusters"],
            method=d.get("method", ""),
            counts=None if d.get("n") is None else np.array(d["n"]),
            bins=None if d.get("bins") is None else tuple(tuple(b) for b in d["bins"]),
            dof_residual=d.get("dof_residual"),
        )

    def format_table(self, title: str = "", decimals: int = 4, reference_period: Optional[int] = None) -> str:
        """Two-line-per-row text table: estimate with stars, SE in parentheses.

        With ``reference_period`` and bins, the omitted period is shown as a
        normalized zero row in its place.
        """
        rows = list(zip(self.labels, self.estimates, self.std_errors, self.p_values))
        if reference_period is not None and self.bins is not None:
            at = sum(1 for b in self.bins if max(b) < reference_period)
            rows.insert(at, (str(reference_period), None, None, None))
        width = max([len(r[0]) for r in rows] + [5])
        lines = []
        if title:
            lines.append(title)
        lines.append(f"{'':<{width}}  {'estimate':>14}")
        lines.append("-" * (width + 16))
        for lab, est, se, p in rows:
            if est is None:
                lines.append(f"{lab:<{width}}  {0.0:>11.{decimals}f}   (ref)")
                continue
            lines.append(f"{lab:<{width}}  {est:>11.{decimals}f}{significance_stars(p):<3}")
            lines.append(f"{'':<{width}}  {'(' + format(se, f'.{decimals}f') + ')':>11}")
        lines.append("-" * (width + 16))
        lines.append(f"N obs = {self.n_obs}, units = {self.n_units}, clusters = {self.n_clusters}")
        lines.append("*** p<0.01, ** p<0.05, * p<0.1")
        return "\n".join(lines)
