"""Dense least squares: QR-based OLS, two-way within transform, CR1 sandwich, Wald tests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy import stats
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import _kernels
from .errors import (
    AllColumnsCollinear,
    EmptyDesign,
    NonConvergence,
    SingleCluster,
    SingularVcov,
)

#: Relative pivot tolerance for dropping collinear columns.
COLLINEAR_TOL = 1e-10
DEMEAN_TOL = 1e-10
DEMEAN_MAX_ITER = 10_000


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Named columns, one row per retained observation."""

    columns: np.ndarray
    names: tuple
    row_unit: Optional[np.ndarray] = None
    row_period: Optional[np.ndarray] = None

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=np.float64)
        if cols.ndim == 1:
            cols = cols[:, None]
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) != cols.shape[1]:
            raise ValueError(f"{len(self.names)} names for {cols.shape[1]} columns")
        if len(set(self.names)) != len(self.names):
            raise ValueError("column names must be unique")
        if np.isnan(cols).any():
            raise ValueError("design matrix contains missing values")

    @property
    def n_rows(self) -> int:
        return self.columns.shape[0]

    def select(self, names: Sequence[str]) -> "DesignMatrix":
        idx = [self.names.index(n) for n in names]
        return DesignMatrix(self.columns[:, idx], tuple(names), self.row_unit, self.row_period)


@dataclass(frozen=True, eq=False)
class FitResult:
    """OLS solution on the kept (non-collinear) columns."""

    names: tuple
    coefficients: np.ndarray
    residuals: np.ndarray
    r_factor: np.ndarray
    dof_residual: int
    dropped_columns: tuple = ()
    absorbed_effects: Mapping[str, int] = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return len(self.names)

    def xtx_inverse(self) -> np.ndarray:
        """(X'X)^-1 over the kept columns, rebuilt from the triangular factor."""
        k = self.rank
        r_inv = scipy.linalg.solve_triangular(self.r_factor, np.eye(k), lower=False)
        return r_inv @ r_inv.T

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])


def _qr_drop_collinear(x: np.ndarray) -> tuple[list, np.ndarray, np.ndarray]:
    """Unpivoted QR, dropping the first weak pivot and refactoring until clean.

    Walking left to right means a column that is a combination of earlier
    columns is the one removed, so the last-entered member of a collinear
    set goes first.
    """
    keep = list(range(x.shape[1]))
    while keep:
        q, r = scipy.linalg.qr(x[:, keep], mode="economic")
        diag = np.abs(np.diag(r))
        scale = diag.max()
        if scale == 0.0:
            return [], q, r
        weak = np.flatnonzero(diag < COLLINEAR_TOL * scale)
        if weak.size == 0:
            return keep, q, r
        del keep[int(weak[0])]
    return [], np.empty((x.shape[0], 0)), np.empty((0, 0))


def solve_ols(X: DesignMatrix, y, absorbed: Optional[Mapping[str, int]] = None) -> FitResult:
    """Minimise ||y - X b|| by QR, dropping collinear columns.

    ``absorbed`` records fixed effects already swept out of ``X`` and ``y``
    (dimension name -> number of parameters); it only affects the residual
    degrees of freedom.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.n_rows == 0 or X.columns.shape[1] == 0 or len(y) != X.n_rows:
        raise EmptyDesign(f"design has {X.n_rows} rows x {X.columns.shape[1]} columns for {len(y)} outcomes")
    keep, q, r = _qr_drop_collinear(X.columns)
    if not keep:
        raise AllColumnsCollinear("every design column is zero or collinear")
    beta = scipy.linalg.solve_triangular(r, q.T @ y, lower=False)
    resid = y - X.columns[:, keep] @ beta
    absorbed = dict(absorbed or {})
    dof = X.n_rows - len(keep) - sum(absorbed.values())
    return FitResult(
        names=tuple(X.names[i] for i in keep),
        coefficients=beta,
        residuals=resid,
        r_factor=r,
        dof_residual=int(dof),
        dropped_columns=tuple(X.names[i] for i in range(len(X.names)) if i not in set(keep)),
        absorbed_effects=absorbed,
    )


def absorbed_count(unit: np.ndarray, period: np.ndarray) -> dict:
    """Parameters absorbed by unit and period effects.

    Units + periods minus one per connected component of the bipartite
    unit-period graph.
    """
    unit = np.asarray(unit)
    period = np.asarray(period)
    n_u = int(unit.max()) + 1
    n_t = int(period.max()) + 1
    graph = coo_matrix((np.ones(len(unit)), (unit, n_u + period)), shape=(n_u + n_t, n_u + n_t))
    n_comp, labels = connected_components(graph, directed=False)
    present_u = np.unique(unit).size
    present_t = np.unique(period).size
    # isolated, unobserved nodes form their own components and must not count
    isolated = (n_u - present_u) + (n_t - present_t)
    return {"unit": present_u, "period": present_t - (n_comp - isolated)}


def two_way_within(values, unit, period, tol: float = DEMEAN_TOL, max_iter: int = DEMEAN_MAX_ITER) -> np.ndarray:
    """Project out unit and period effects by alternating demeaning.

    ``unit`` and ``period`` are integer codes starting at 0. Iterates until
    the largest mean removed in a sweep is below ``tol``; on a balanced
    panel the first sweep is already exact.
    """
    v = np.asarray(values, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    unit = np.asarray(unit, dtype=np.int64)
    period = np.asarray(period, dtype=np.int64)
    if len(unit) != v.shape[0] or len(period) != v.shape[0]:
        raise ValueError("every observation needs a unit and a period label")
    if v.shape[0] == 0:
        return v[:, 0] if squeeze else v
    out, iters = _kernels.demean_two_way(v, unit, period, unit.max() + 1, period.max() + 1, tol, max_iter)
    if iters < 0:
        raise NonConvergence(f"alternating demeaning did not converge in {max_iter} sweeps")
    return out[:, 0] if squeeze else out


def one_way_within(values, groups) -> np.ndarray:
    """Subtract group means (single fixed-effect dimension)."""
    v = np.asarray(values, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[:, None]
    groups = np.asarray(groups, dtype=np.int64)
    n_g = groups.max() + 1
    counts = np.bincount(groups, minlength=n_g).astype(np.float64)
    means = _kernels.group_sum(v, groups, n_g) / np.maximum(counts, 1.0)[:, None]
    out = v - means[groups]
    return out[:, 0] if squeeze else out


def cluster_robust_vcov(
    fit: FitResult,
    X: DesignMatrix,
    cluster,
    nested: Iterable[str] = (),
) -> np.ndarray:
    """CR1 cluster-robust covariance of the kept coefficients.

    V = c (X'X)^-1 [sum_g X_g' e_g e_g' X_g] (X'X)^-1 with
    c = G/(G-1) * (N-1)/(N-K). K counts the kept columns plus absorbed
    effects, except dimensions listed in ``nested`` (effects nested within
    clusters, e.g. unit effects under unit-level clustering).
    """
    cluster = np.asarray(cluster)
    codes, uniq = _factorize(cluster)
    n_clusters = len(uniq)
    if n_clusters < 2:
        raise SingleCluster("cluster-robust covariance needs at least two clusters")
    x = X.select(fit.names).columns
    n = x.shape[0]
    nested = set(nested)
    k = fit.rank + sum(v for d, v in fit.absorbed_effects.items() if d not in nested)
    scores = x * fit.residuals[:, None]
    s = _kernels.group_sum(scores, codes, n_clusters)
    meat = s.T @ s
    bread = fit.xtx_inverse()
    c = (n_clusters / (n_clusters - 1)) * ((n - 1) / (n - k))
    v = c * bread @ meat @ bread
    return (v + v.T) / 2.0


def _factorize(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, codes = np.unique(labels.astype(str) if labels.dtype == object else labels, return_inverse=True)
    return codes.astype(np.int64), uniq


def wald_test(coefficients, vcov) -> tuple[float, int, float]:
    """Joint chi-squared test that all coefficients are zero."""
    b = np.atleast_1d(np.asarray(coefficients, dtype=np.float64))
    v = np.atleast_2d(np.asarray(vcov, dtype=np.float64))
    if v.shape != (b.size, b.size):
        raise ValueError("vcov shape does not match coefficients")
    eig = np.linalg.eigvalsh((v + v.T) / 2.0)
    if eig.size == 0 or eig.min() <= 1e-12 * max(eig.max(), 0.0) or eig.max() <= 0.0:
        raise SingularVcov("covariance is singular on the tested subspace")
    stat = float(b @ np.linalg.solve(v, b))
    dof = int(b.size)
    return stat, dof, float(stats.chi2.sf(stat, dof))
